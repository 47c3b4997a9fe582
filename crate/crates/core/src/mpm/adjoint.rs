//! Reverse-mode adjoint of one MPM substep.
//!
//! Intermediates are recomputed from the input state rather than stored.

use gsdyn_autodiff::linalg::{mat3_from, polar_rotation_adjoint};
use nalgebra::{Matrix3, Vector3};

use super::{
    bspline, build_transfer, clamp_volume, stress_parts, ParticleProps, Particles, SimConfig,
    StressParts, MIN_NODE_MASS, PROPS_WIDTH, STATE_WIDTH,
};
use crate::error::Result;

/// Second derivatives of the weight of stencil entry `k` w.r.t. position.
fn kernel_hessian(local: &Vector3<f64>, h: f64, k: usize) -> Matrix3<f64> {
    let o = super::offset(k);
    let mut n = [0.0; 3];
    let mut dn = [0.0; 3];
    let mut ddn = [0.0; 3];
    for a in 0..3 {
        let (w, dw, ddw) = bspline(local[a]);
        n[a] = w[o[a]];
        dn[a] = dw[o[a]];
        ddn[a] = ddw[o[a]];
    }
    let mut hess = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            hess[(a, b)] = if a == b {
                let (p, q) = ((a + 1) % 3, (a + 2) % 3);
                ddn[a] * n[p] * n[q]
            } else {
                dn[a] * dn[b] * n[3 - a - b]
            };
        }
    }
    hess / (h * h)
}

/// Gradients of a loss w.r.t. the packed input state `[N, 15]` and packed
/// properties `[N, 4]`, given its gradient w.r.t. the next state.
pub fn substep_adjoint(
    particles: &Particles,
    props: &ParticleProps,
    cfg: &SimConfig,
    grad_next: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = particles.len();
    let dt = cfg.dt;
    let (tr, nodes) = build_transfer(&particles.x, &cfg.grid)?;
    let nc = nodes.len();

    // Forward recomputation.
    let mut mass = vec![0.0; nc];
    let mut mom = vec![Vector3::zeros(); nc];
    let mut force = vec![Vector3::zeros(); nc];
    let mut stress: Vec<StressParts> = Vec::with_capacity(n);
    for p in 0..n {
        let (s, sl) = (&tr.stencils[p], &tr.slots[p]);
        let sp = stress_parts(&particles.f[p], props.mu[p], props.lambda[p], p)?;
        let vp = sp.p * props.volume[p];
        for k in 0..27 {
            let c = sl[k] as usize;
            mass[c] += s.weights[k] * props.mass[p];
            mom[c] += particles.v[p] * (s.weights[k] * props.mass[p]);
            force[c] -= vp * s.grads[k];
        }
        stress.push(sp);
    }
    let active: Vec<bool> = (0..nc)
        .map(|c| mass[c] >= MIN_NODE_MASS && !cfg.is_boundary(cfg.grid.coords(nodes[c])))
        .collect();
    let vel: Vec<Vector3<f64>> = (0..nc)
        .map(|c| {
            if active[c] {
                (mom[c] + force[c] * dt) / mass[c] + cfg.gravity * dt
            } else {
                Vector3::zeros()
            }
        })
        .collect();

    // Backward through g2p and the particle update.
    let mut d_state = vec![0.0; n * STATE_WIDTH];
    let mut d_props = vec![0.0; n * PROPS_WIDTH];
    let mut d_u = vec![Vector3::zeros(); nc];
    let mut d_w = vec![[0.0; 27]; n];
    let mut d_gw = vec![[Vector3::zeros(); 27]; n];
    let mut d_f = vec![Matrix3::zeros(); n];
    let mut d_x = vec![Vector3::zeros(); n];
    let mut d_v = vec![Vector3::zeros(); n];
    for p in 0..n {
        let (s, sl) = (&tr.stencils[p], &tr.slots[p]);
        let g = &grad_next[p * STATE_WIDTH..(p + 1) * STATE_WIDTH];
        let x_bar = Vector3::new(g[0], g[1], g[2]);
        let v_bar = Vector3::new(g[3], g[4], g[5]) + x_bar * dt;
        let f_bar = mat3_from(&g[6..15]);
        d_x[p] += x_bar;

        let mut grad_v = Matrix3::zeros();
        for k in 0..27 {
            grad_v += vel[sl[k] as usize] * s.grads[k].transpose();
        }
        let a = Matrix3::identity() + grad_v * dt;
        let f_tilde = a * particles.f[p];
        let (_, scale) = clamp_volume(f_tilde, cfg.min_j);
        let ft_bar = match scale {
            Some(sc) => {
                let inv_t = f_tilde.try_inverse().unwrap_or_else(Matrix3::zeros).transpose();
                f_bar * sc - inv_t * (sc / 3.0 * f_bar.dot(&f_tilde))
            }
            None => f_bar,
        };
        d_f[p] += a.transpose() * ft_bar;
        let g_bar = ft_bar * particles.f[p].transpose() * dt;
        for k in 0..27 {
            let c = sl[k] as usize;
            d_u[c] += v_bar * s.weights[k] + g_bar * s.grads[k];
            d_w[p][k] += vel[c].dot(&v_bar);
            d_gw[p][k] += g_bar.transpose() * vel[c];
        }
    }

    // Grid update.
    let mut d_mom = vec![Vector3::zeros(); nc];
    let mut d_force = vec![Vector3::zeros(); nc];
    let mut d_mass = vec![0.0; nc];
    for c in 0..nc {
        if !active[c] {
            continue;
        }
        let m = mass[c];
        d_mom[c] = d_u[c] / m;
        d_force[c] = d_u[c] * (dt / m);
        d_mass[c] = -d_u[c].dot(&(mom[c] + force[c] * dt)) / (m * m);
    }

    // Transfers, stress and kernel.
    for p in 0..n {
        let (s, sl) = (&tr.stencils[p], &tr.slots[p]);
        let (mp, volp) = (props.mass[p], props.volume[p]);
        let vp = particles.v[p];
        let sp = &stress[p];
        let mut p_bar = Matrix3::zeros();
        let mut dm = 0.0;
        let mut dvol = 0.0;
        for k in 0..27 {
            let c = sl[k] as usize;
            let w = s.weights[k];
            let qv = d_mom[c].dot(&vp);
            d_w[p][k] += mp * (d_mass[c] + qv);
            dm += w * (d_mass[c] + qv);
            d_v[p] += d_mom[c] * (w * mp);
            dvol -= d_force[c].dot(&(sp.p * s.grads[k]));
            p_bar -= d_force[c] * s.grads[k].transpose() * volp;
            d_gw[p][k] -= sp.p.transpose() * d_force[c] * volp;
        }

        let (mu, lambda) = (props.mu[p], props.lambda[p]);
        let f = particles.f[p];
        let j = sp.j;
        let d_mu = 2.0 * p_bar.dot(&(f - sp.r));
        let pf = p_bar.dot(&sp.f_inv_t);
        let d_lambda = (j - 1.0) * j * pf;
        let two_mu_bar = p_bar * (2.0 * mu);
        d_f[p] += two_mu_bar - polar_rotation_adjoint(&f, &sp.r, &two_mu_bar);
        let h = lambda * (j - 1.0) * j;
        let dh = lambda * (2.0 * j - 1.0);
        d_f[p] += sp.f_inv_t * (pf * dh * j) - sp.f_inv_t * p_bar.transpose() * sp.f_inv_t * h;

        for k in 0..27 {
            d_x[p] += s.grads[k] * d_w[p][k] + kernel_hessian(&s.local, cfg.grid.h, k) * d_gw[p][k];
        }

        let row = &mut d_state[p * STATE_WIDTH..(p + 1) * STATE_WIDTH];
        row[0..3].copy_from_slice(d_x[p].as_slice());
        row[3..6].copy_from_slice(d_v[p].as_slice());
        gsdyn_autodiff::linalg::mat3_write(&d_f[p], &mut row[6..15]);
        d_props[p * PROPS_WIDTH..(p + 1) * PROPS_WIDTH].copy_from_slice(&[dm, dvol, d_mu, d_lambda]);
    }
    Ok((d_state, d_props))
}
