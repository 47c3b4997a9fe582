use gsdyn::material::MaterialParams;
use gsdyn::mpm::{energies, kernel_weights, offset, p2g, rollout, substep, GridSpec, SimConfig};
use gsdyn::selftest::{ballistic_error, height_gradient, lattice_cube, mpm_conservation, stiffness_gradient};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn material() -> MaterialParams {
    MaterialParams::new(1e4, 0.2, 1000.0).unwrap()
}

fn floating(gravity: bool) -> SimConfig {
    SimConfig {
        dt: 1e-3,
        substeps_per_frame: 1,
        gravity: if gravity { Vector3::new(0.0, -9.8, 0.0) } else { Vector3::zeros() },
        grid: GridSpec::unit(16),
        ..SimConfig::default()
    }
}

#[test]
fn conservation_over_two_thousand_substeps() {
    let c = mpm_conservation(2000, 3).unwrap();
    assert!(c.mass_error < 1e-12, "{c:?}");
    assert!(c.momentum_drift < 1e-8, "{c:?}");
    assert!(c.seconds < 60.0, "{c:?}");
}

#[test]
fn free_fall_matches_parabola() {
    let e = ballistic_error(0.3).unwrap();
    assert!(e < 1e-3, "relative error {e:e}");
}

#[test]
fn height_gradient_is_elapsed_time() {
    let (taped, analytic) = height_gradient(50).unwrap();
    assert!((taped - analytic).abs() / analytic < 1e-6, "{taped} vs {analytic}");
}

#[test]
fn stiffness_gradient_matches_finite_differences() {
    for seed in [1, 2] {
        let (taped, fd) = stiffness_gradient(seed).unwrap();
        assert!((taped - fd).abs() / fd.abs() < 1e-3, "{taped:e} vs {fd:e}");
    }
}

#[test]
fn energy_never_grows_without_gravity() {
    let cfg = floating(false);
    let (mut state, props) = lattice_cube(Vector3::repeat(0.5), 0.2, 4, &material());
    state.f.iter_mut().for_each(|f| *f = Matrix3::from_diagonal(&Vector3::new(0.9, 1.0, 1.05)));
    let total = |s: &gsdyn::mpm::Particles| {
        let (k, e, p) = energies(s, &props, &cfg.gravity).unwrap();
        k + e + p
    };
    let e0 = total(&state);
    assert!(e0 > 0.0);
    for i in 0..400 {
        state = substep(&state, &props, &cfg, i).unwrap();
        assert!(total(&state) <= e0 * (1.0 + 1e-9), "energy grew at substep {i}");
    }
}

#[test]
fn energy_with_gravity_accounts_for_potential() {
    let cfg = floating(true);
    let (mut state, props) = lattice_cube(Vector3::new(0.5, 0.6, 0.5), 0.2, 4, &material());
    state.v.iter_mut().for_each(|v| *v = Vector3::new(0.0, 0.5, 0.0));
    let (k0, e0, p0) = energies(&state, &props, &cfg.gravity).unwrap();
    let frames = rollout(&state, &props, &cfg, 100).unwrap();
    let (k1, e1, p1) = energies(frames.last().unwrap(), &props, &cfg.gravity).unwrap();
    assert!(p1 < p0 || k1 < k0, "something must change");
    assert!(k1 + e1 + p1 <= (k0 + e0 + p0) + 1e-9 * (k0 + p0.abs()));
}

#[test]
fn translation_by_a_cell_shifts_the_trajectory() {
    let cfg = floating(true);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut a, props) = lattice_cube(Vector3::new(0.45, 0.55, 0.5), 0.2, 4, &material());
    for i in 0..a.len() {
        a.v[i] = Vector3::new(0.2, 0.1, -0.1) + Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05));
        a.f[i] = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.03..0.03));
    }
    let shift = Vector3::new(cfg.grid.h, 0.0, -cfg.grid.h);
    let mut b = a.clone();
    b.x.iter_mut().for_each(|x| *x += shift);
    let ra = rollout(&a, &props, &cfg, 150).unwrap().pop().unwrap();
    let rb = rollout(&b, &props, &cfg, 150).unwrap().pop().unwrap();
    for i in 0..ra.len() {
        assert!((rb.x[i] - ra.x[i] - shift).norm() < 1e-10);
        assert!((rb.v[i] - ra.v[i]).norm() < 1e-10);
        assert!((rb.f[i] - ra.f[i]).norm() < 1e-10);
    }
}

#[test]
fn dropped_cube_settles_inside_the_domain() {
    let cfg = floating(true);
    let (state, props) = lattice_cube(Vector3::new(0.5, 0.45, 0.5), 0.2, 4, &material());
    let frames = rollout(&state, &props, &cfg, 1500).unwrap();
    let last = frames.last().unwrap();
    let floor = cfg.boundary as f64 * cfg.grid.h;
    assert!(last.x.iter().all(|x| x.y > floor - cfg.grid.h));
    let speed = last.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(speed < 0.05, "still moving at {speed}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_reproduces_constants_and_linears(x in 0.2f64..0.8, y in 0.2f64..0.8, z in 0.2f64..0.8) {
        let grid = GridSpec::unit(16);
        let p = Vector3::new(x, y, z);
        let s = kernel_weights(&p, &grid).unwrap();
        let mut sum = 0.0;
        let mut first = Vector3::zeros();
        let mut grad_sum = Vector3::zeros();
        let mut outer = Matrix3::zeros();
        for k in 0..27 {
            let o = offset(k);
            let node = grid.node_position([s.base[0] + o[0], s.base[1] + o[1], s.base[2] + o[2]]);
            prop_assert!(s.weights[k] >= 0.0);
            sum += s.weights[k];
            first += s.weights[k] * (node - p);
            grad_sum += s.grads[k];
            outer += (node - p) * s.grads[k].transpose();
        }
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(first.norm() < 1e-12);
        prop_assert!(grad_sum.norm() < 1e-10);
        prop_assert!((outer - Matrix3::identity()).norm() < 1e-10);
    }

    #[test]
    fn transfer_conserves_mass_and_momentum(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = floating(true);
        let (mut state, props) = lattice_cube(Vector3::repeat(0.5), 0.2, 3, &material());
        for i in 0..state.len() {
            state.x[i] += Vector3::from_fn(|_, _| rng.gen_range(-0.02..0.02));
            state.v[i] = Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        }
        let grid = p2g(&state, &props, &cfg).unwrap();
        let m = props.total_mass();
        prop_assert!((grid.total_mass() - m).abs() / m < 1e-12);
        prop_assert!((grid.total_momentum() - state.momentum(&props)).norm() < 1e-12);
    }

    #[test]
    fn free_substep_preserves_momentum(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = floating(false);
        let (mut state, props) = lattice_cube(Vector3::repeat(0.5), 0.15, 3, &material());
        for i in 0..state.len() {
            state.v[i] = Vector3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
            state.f[i] = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1));
        }
        let next = substep(&state, &props, &cfg, 0).unwrap();
        prop_assert!((next.momentum(&props) - state.momentum(&props)).norm() < 1e-12);
        prop_assert!(next.f.iter().all(|f| f.determinant() >= cfg.min_j));
    }
}
