//! Explicit PIC material point method on a quadratic B-spline grid.

mod adjoint;

use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use gsdyn_autodiff::linalg::{mat3_from, mat3_write, polar_rotation};
use gsdyn_autodiff::{CustomOp, Tensor, TensorError, Var};
use nalgebra::{Matrix3, Vector3};

use crate::error::{io_err, Error, Result};
use crate::material::energy_density;

pub use adjoint::substep_adjoint;

/// Nodes lighter than this carry no velocity.
pub const MIN_NODE_MASS: f64 = 1e-12;

/// Width of the packed particle state: position, velocity, row-major F.
pub const STATE_WIDTH: usize = 15;
/// Width of packed particle properties: mass, volume, μ, λ.
pub const PROPS_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Cells per axis; nodes run `0..=cells`.
    pub cells: usize,
    pub h: f64,
    pub origin: Vector3<f64>,
}

impl GridSpec {
    /// `cells³` grid over the unit cube.
    pub fn unit(cells: usize) -> Self {
        Self {
            cells,
            h: 1.0 / cells as f64,
            origin: Vector3::zeros(),
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(3)
    }

    pub fn linear(&self, idx: [usize; 3]) -> usize {
        let n = self.nodes_per_axis();
        (idx[0] * n + idx[1]) * n + idx[2]
    }

    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        [linear / (n * n), (linear / n) % n, linear % n]
    }

    pub fn node_position(&self, idx: [usize; 3]) -> Vector3<f64> {
        self.origin + Vector3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64) * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub substeps_per_frame: usize,
    pub gravity: Vector3<f64>,
    /// Sticky margin in cells.
    pub boundary: usize,
    pub grid: GridSpec,
    /// Lower bound on `det F` after each update.
    pub min_j: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            substeps_per_frame: 200,
            gravity: Vector3::new(0.0, -9.8, 0.0),
            boundary: 3,
            grid: GridSpec::unit(32),
            min_j: 0.05,
        }
    }
}

impl SimConfig {
    pub fn frame_dt(&self) -> f64 {
        self.dt * self.substeps_per_frame as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.substeps_per_frame == 0 {
            return Err(Error::Config("dt and substeps_per_frame must be positive".into()));
        }
        if self.grid.cells < 2 * self.boundary + 3 || !(self.grid.h > 0.0) {
            return Err(Error::Config("grid too small for its boundary margin".into()));
        }
        Ok(())
    }

    /// Whether node `idx` lies in the sticky margin.
    pub fn is_boundary(&self, idx: [usize; 3]) -> bool {
        let n = self.grid.cells;
        idx.iter().any(|&i| i < self.boundary || i > n - self.boundary)
    }
}

/// Quadratic B-spline weights of one particle over its 3×3×3 node block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub base: [usize; 3],
    /// Local coordinates `x/h − base` per axis, in `[0.5, 1.5)`.
    pub local: Vector3<f64>,
    pub weights: [f64; 27],
    pub grads: [Vector3<f64>; 27],
}

/// Offset of stencil entry `k` (`k = 9a + 3b + c`).
#[inline]
pub fn offset(k: usize) -> [usize; 3] {
    [k / 9, (k / 3) % 3, k % 3]
}

/// 1-D weights, first and second derivatives (in local units).
#[inline]
pub(crate) fn bspline(fx: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    (
        [
            0.5 * (1.5 - fx).powi(2),
            0.75 - (fx - 1.0).powi(2),
            0.5 * (fx - 0.5).powi(2),
        ],
        [fx - 1.5, -2.0 * (fx - 1.0), fx - 0.5],
        [1.0, -2.0, 1.0],
    )
}

/// Node indices, weights and weight gradients around `p`.
pub fn kernel_weights(p: &Vector3<f64>, grid: &GridSpec) -> Result<Stencil> {
    stencil(p, grid).ok_or(Error::OutsideGrid {
        particle: None,
        position: [p.x, p.y, p.z],
    })
}

fn stencil(p: &Vector3<f64>, grid: &GridSpec) -> Option<Stencil> {
    let rel = (p - grid.origin) / grid.h;
    let mut base = [0usize; 3];
    let mut local = Vector3::zeros();
    let mut w = [[0.0; 3]; 3];
    let mut dw = [[0.0; 3]; 3];
    for a in 0..3 {
        let b = (rel[a] - 0.5).floor();
        if !(b >= 0.0 && b + 2.0 <= grid.cells as f64) {
            return None;
        }
        base[a] = b as usize;
        local[a] = rel[a] - b;
        let (n, dn, _) = bspline(local[a]);
        w[a] = n;
        dw[a] = dn.map(|d| d / grid.h);
    }
    let mut weights = [0.0; 27];
    let mut grads = [Vector3::zeros(); 27];
    for k in 0..27 {
        let [i, j, l] = offset(k);
        weights[k] = w[0][i] * w[1][j] * w[2][l];
        grads[k] = Vector3::new(
            dw[0][i] * w[1][j] * w[2][l],
            w[0][i] * dw[1][j] * w[2][l],
            w[0][i] * w[1][j] * dw[2][l],
        );
    }
    Some(Stencil {
        base,
        local,
        weights,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particles {
    pub x: Vec<Vector3<f64>>,
    pub v: Vec<Vector3<f64>>,
    pub f: Vec<Matrix3<f64>>,
}

impl Particles {
    pub fn at_rest(x: Vec<Vector3<f64>>) -> Self {
        let n = x.len();
        Self {
            x,
            v: vec![Vector3::zeros(); n],
            f: vec![Matrix3::identity(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut data = vec![0.0; self.len() * STATE_WIDTH];
        for (i, row) in data.chunks_exact_mut(STATE_WIDTH).enumerate() {
            row[0..3].copy_from_slice(self.x[i].as_slice());
            row[3..6].copy_from_slice(self.v[i].as_slice());
            mat3_write(&self.f[i], &mut row[6..15]);
        }
        Tensor::new([self.len(), STATE_WIDTH], data).expect("packed state")
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let rows = t.data().chunks_exact(STATE_WIDTH);
        let mut out = Self {
            x: Vec::with_capacity(rows.len()),
            v: Vec::with_capacity(rows.len()),
            f: Vec::with_capacity(rows.len()),
        };
        for row in rows {
            out.x.push(Vector3::from_column_slice(&row[0..3]));
            out.v.push(Vector3::from_column_slice(&row[3..6]));
            out.f.push(mat3_from(&row[6..15]));
        }
        out
    }

    pub fn center_of_mass(&self, props: &ParticleProps) -> Vector3<f64> {
        let m: f64 = props.mass.iter().sum();
        self.x
            .iter()
            .zip(&props.mass)
            .fold(Vector3::zeros(), |acc, (x, &mi)| acc + x * mi)
            / m
    }

    pub fn momentum(&self, props: &ParticleProps) -> Vector3<f64> {
        self.v
            .iter()
            .zip(&props.mass)
            .fold(Vector3::zeros(), |acc, (v, &m)| acc + v * m)
    }

    /// Columnar text: `index x y z vx vy vz`.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# index x y z vx vy vz\n");
        for i in 0..self.len() {
            let (x, v) = (self.x[i], self.v[i]);
            out.push_str(&format!(
                "{i} {} {} {} {} {} {}\n",
                x.x, x.y, x.z, v.x, v.y, v.z
            ));
        }
        let mut file = std::fs::File::create(path).map_err(io_err(path))?;
        file.write_all(out.as_bytes()).map_err(io_err(path))
    }

    /// Inverse of [`Particles::write_snapshot`]; deformation gradients are
    /// not stored and come back as the identity.
    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut x = Vec::new();
        let mut v = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
            if cols.len() != 7 || cols[0] as usize != x.len() {
                return Err(Error::Format(format!("{}:{}: malformed row", path.display(), line_no + 1)));
            }
            x.push(Vector3::new(cols[1], cols[2], cols[3]));
            v.push(Vector3::new(cols[4], cols[5], cols[6]));
        }
        let mut out = Self::at_rest(x);
        out.v = v;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleProps {
    pub mass: Vec<f64>,
    pub volume: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl ParticleProps {
    pub fn uniform(n: usize, mass: f64, volume: f64, mu: f64, lambda: f64) -> Self {
        Self {
            mass: vec![mass; n],
            volume: vec![volume; n],
            mu: vec![mu; n],
            lambda: vec![lambda; n],
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let n = self.mass.len();
        let data = (0..n)
            .flat_map(|i| [self.mass[i], self.volume[i], self.mu[i], self.lambda[i]])
            .collect();
        Tensor::new([n, PROPS_WIDTH], data).expect("packed properties")
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let rows: Vec<&[f64]> = t.data().chunks_exact(PROPS_WIDTH).collect();
        Self {
            mass: rows.iter().map(|r| r[0]).collect(),
            volume: rows.iter().map(|r| r[1]).collect(),
            mu: rows.iter().map(|r| r[2]).collect(),
            lambda: rows.iter().map(|r| r[3]).collect(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Stencils and compact node slots of one transfer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Transfer {
    pub stencils: Vec<Stencil>,
    pub slots: Vec<[u32; 27]>,
}

/// Sparse background grid: only nodes touched by some particle.
#[derive(Debug, Clone, PartialEq)]
pub struct MpmGrid {
    pub spec: GridSpec,
    /// Linear node ids in first-touch order.
    pub nodes: Vec<usize>,
    pub mass: Vec<f64>,
    pub momentum: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    transfer: Transfer,
}

impl MpmGrid {
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.momentum.iter().sum()
    }

    pub fn node_coords(&self, slot: usize) -> [usize; 3] {
        self.spec.coords(self.nodes[slot])
    }
}

pub(crate) fn build_transfer(x: &[Vector3<f64>], spec: &GridSpec) -> Result<(Transfer, Vec<usize>)> {
    let mut dense: Vec<u32> = vec![u32::MAX; spec.node_count()];
    let mut nodes = Vec::new();
    let mut stencils = Vec::with_capacity(x.len());
    let mut slots = Vec::with_capacity(x.len());
    for (p, xp) in x.iter().enumerate() {
        let s = stencil(xp, spec).ok_or(Error::OutsideGrid {
            particle: Some(p),
            position: [xp.x, xp.y, xp.z],
        })?;
        let mut sl = [0u32; 27];
        for (k, slot) in sl.iter_mut().enumerate() {
            let o = offset(k);
            let id = spec.linear([s.base[0] + o[0], s.base[1] + o[1], s.base[2] + o[2]]);
            if dense[id] == u32::MAX {
                dense[id] = nodes.len() as u32;
                nodes.push(id);
            }
            *slot = dense[id];
        }
        stencils.push(s);
        slots.push(sl);
    }
    Ok((Transfer { stencils, slots }, nodes))
}

/// Particle-to-grid transfer of mass and momentum.
pub fn p2g(particles: &Particles, props: &ParticleProps, cfg: &SimConfig) -> Result<MpmGrid> {
    let (transfer, nodes) = build_transfer(&particles.x, &cfg.grid)?;
    let mut mass = vec![0.0; nodes.len()];
    let mut momentum = vec![Vector3::zeros(); nodes.len()];
    for p in 0..particles.len() {
        let (s, sl) = (&transfer.stencils[p], &transfer.slots[p]);
        let mv = particles.v[p] * props.mass[p];
        for k in 0..27 {
            let c = sl[k] as usize;
            mass[c] += s.weights[k] * props.mass[p];
            momentum[c] += mv * s.weights[k];
        }
    }
    let velocity = mass
        .iter()
        .zip(&momentum)
        .map(|(&m, q)| if m < MIN_NODE_MASS { Vector3::zeros() } else { q / m })
        .collect();
    Ok(MpmGrid {
        spec: cfg.grid,
        nodes,
        mass,
        momentum,
        velocity,
        transfer,
    })
}

/// `f_c = −Σ_p V_p P_p ∇w_cp` for the particles transferred into `grid`.
pub fn internal_forces(grid: &MpmGrid, particles: &Particles, props: &ParticleProps) -> Result<Vec<Vector3<f64>>> {
    let mut forces = vec![Vector3::zeros(); grid.nodes.len()];
    for p in 0..particles.len() {
        let stress = stress_of(&particles.f[p], props.mu[p], props.lambda[p], p)?;
        let vp = stress * props.volume[p];
        let (s, sl) = (&grid.transfer.stencils[p], &grid.transfer.slots[p]);
        for k in 0..27 {
            forces[sl[k] as usize] -= vp * s.grads[k];
        }
    }
    Ok(forces)
}

pub(crate) struct StressParts {
    pub r: Matrix3<f64>,
    pub j: f64,
    pub f_inv_t: Matrix3<f64>,
    pub p: Matrix3<f64>,
}

pub(crate) fn stress_parts(f: &Matrix3<f64>, mu: f64, lambda: f64, index: usize) -> Result<StressParts> {
    let j = f.determinant();
    let r = if j > 0.0 { polar_rotation(f) } else { None };
    let r = r.ok_or(TensorError::InvertedElement {
        op: "mpm_stress",
        det: j,
        index,
    })?;
    let f_inv_t = f
        .try_inverse()
        .ok_or(TensorError::Singular {
            op: "mpm_stress",
            index,
        })?
        .transpose();
    let p = 2.0 * mu * (f - r) + lambda * (j - 1.0) * j * f_inv_t;
    Ok(StressParts { r, j, f_inv_t, p })
}

fn stress_of(f: &Matrix3<f64>, mu: f64, lambda: f64, index: usize) -> Result<Matrix3<f64>> {
    Ok(stress_parts(f, mu, lambda, index)?.p)
}

/// Momentum update with internal forces, gravity and the sticky margin.
pub fn grid_update(grid: &mut MpmGrid, forces: &[Vector3<f64>], cfg: &SimConfig) {
    for c in 0..grid.nodes.len() {
        let m = grid.mass[c];
        grid.velocity[c] = if m < MIN_NODE_MASS || cfg.is_boundary(grid.node_coords(c)) {
            Vector3::zeros()
        } else {
            (grid.momentum[c] + forces[c] * cfg.dt) / m + cfg.gravity * cfg.dt
        };
    }
}

/// Grid-to-particle interpolation and particle update. `particles` must
/// be the state that produced `grid`.
pub fn g2p(grid: &MpmGrid, particles: &Particles, cfg: &SimConfig, substep: usize) -> Result<Particles> {
    let n = particles.len();
    let mut out = Particles {
        x: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
    };
    for p in 0..n {
        let (s, sl) = (&grid.transfer.stencils[p], &grid.transfer.slots[p]);
        let mut v = Vector3::zeros();
        let mut grad_v = Matrix3::zeros();
        for k in 0..27 {
            let u = grid.velocity[sl[k] as usize];
            v += u * s.weights[k];
            grad_v += u * s.grads[k].transpose();
        }
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { substep });
        }
        let f = clamp_volume((Matrix3::identity() + grad_v * cfg.dt) * particles.f[p], cfg.min_j).0;
        out.x.push(particles.x[p] + v * cfg.dt);
        out.v.push(v);
        out.f.push(f);
    }
    Ok(out)
}

/// Scale `f` so that `det f ≥ min_j`; returns the scale applied, if any.
pub(crate) fn clamp_volume(f: Matrix3<f64>, min_j: f64) -> (Matrix3<f64>, Option<f64>) {
    let j = f.determinant();
    if j < min_j {
        let s = (min_j / j).cbrt();
        (f * s, Some(s))
    } else {
        (f, None)
    }
}

pub fn max_speed(particles: &Particles) -> f64 {
    particles.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn check_cfl(particles: &Particles, cfg: &SimConfig, substep: usize) -> Result<()> {
    let speed = max_speed(particles);
    if !(cfg.dt * speed < cfg.grid.h) {
        return Err(Error::Cfl {
            substep,
            dt: cfg.dt,
            speed,
            h: cfg.grid.h,
        });
    }
    Ok(())
}

/// One full substep: p2g, forces, grid update, g2p.
pub fn substep(particles: &Particles, props: &ParticleProps, cfg: &SimConfig, index: usize) -> Result<Particles> {
    check_cfl(particles, cfg, index)?;
    let mut grid = p2g(particles, props, cfg)?;
    let forces = internal_forces(&grid, particles, props)?;
    grid_update(&mut grid, &forces, cfg);
    g2p(&grid, particles, cfg, index)
}

/// States at every frame boundary, starting with `initial`.
pub fn rollout(initial: &Particles, props: &ParticleProps, cfg: &SimConfig, n_frames: usize) -> Result<Vec<Particles>> {
    cfg.validate()?;
    let mut frames = vec![initial.clone()];
    let mut cur = initial.clone();
    for frame in 0..n_frames {
        for s in 0..cfg.substeps_per_frame {
            cur = substep(&cur, props, cfg, frame * cfg.substeps_per_frame + s)?;
        }
        frames.push(cur.clone());
    }
    Ok(frames)
}

/// Kinetic, elastic and gravitational potential energy.
pub fn energies(particles: &Particles, props: &ParticleProps, gravity: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let mut kinetic = 0.0;
    let mut elastic = 0.0;
    let mut potential = 0.0;
    for p in 0..particles.len() {
        kinetic += 0.5 * props.mass[p] * particles.v[p].norm_squared();
        elastic += props.volume[p] * energy_density(&particles.f[p], props.mu[p], props.lambda[p])?;
        potential -= props.mass[p] * gravity.dot(&particles.x[p]);
    }
    Ok((kinetic, elastic, potential))
}

/// Fused substep on packed tensors: inputs state `[N, 15]` and properties
/// `[N, 4]`, output the next state.
#[derive(Debug)]
pub struct MpmSubstep {
    pub cfg: SimConfig,
    pub index: usize,
    /// Output computed ahead of recording, returned by `forward`.
    pub precomputed: Option<Tensor>,
}

fn custom_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Custom {
            op: "mpm_substep".into(),
            message: other.to_string(),
        },
    }
}

impl CustomOp for MpmSubstep {
    fn name(&self) -> &'static str {
        "mpm_substep"
    }

    fn forward(&self, inputs: &[&Tensor]) -> gsdyn_autodiff::Result<Tensor> {
        if let Some(out) = &self.precomputed {
            return Ok(out.clone());
        }
        let particles = Particles::from_tensor(inputs[0]);
        let props = ParticleProps::from_tensor(inputs[1]);
        Ok(substep(&particles, &props, &self.cfg, self.index)
            .map_err(custom_err)?
            .to_tensor())
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> gsdyn_autodiff::Result<Vec<Option<Tensor>>> {
        let particles = Particles::from_tensor(inputs[0]);
        let props = ParticleProps::from_tensor(inputs[1]);
        let (ds, dp) = substep_adjoint(&particles, &props, &self.cfg, grad.data()).map_err(custom_err)?;
        Ok(vec![
            Some(Tensor::new(inputs[0].shape().to_vec(), ds)?),
            Some(Tensor::new(inputs[1].shape().to_vec(), dp)?),
        ])
    }
}

/// Taped rollout from packed `state` `[N, 15]` with packed `props`
/// `[N, 4]`; returns the state at every frame boundary including the
/// initial one.
pub fn rollout_taped<'t>(state: Var<'t>, props: Var<'t>, cfg: &SimConfig, n_frames: usize) -> Result<Vec<Var<'t>>> {
    cfg.validate()?;
    let tape = state.tape();
    let plain_props = ParticleProps::from_tensor(&props.value());
    let mut cur = state;
    let mut plain = Particles::from_tensor(&state.value());
    let mut frames = vec![state];
    for frame in 0..n_frames {
        for s in 0..cfg.substeps_per_frame {
            let index = frame * cfg.substeps_per_frame + s;
            let next = substep(&plain, &plain_props, cfg, index)?;
            let op = MpmSubstep {
                cfg: *cfg,
                index,
                precomputed: Some(next.to_tensor()),
            };
            cur = tape.custom(Rc::new(op), &[cur, props])?;
            plain = next;
        }
        frames.push(cur);
    }
    Ok(frames)
}

/// Positions `[N, 3]` of a packed state.
pub fn state_positions<'t>(state: Var<'t>) -> Result<Var<'t>> {
    Ok(state.slice_last(0, 3)?)
}

/// Deformation gradients `[N, 3, 3]` of a packed state.
pub fn state_deformation<'t>(state: Var<'t>) -> Result<Var<'t>> {
    let n = state.shape()[0];
    Ok(state.slice_last(6, 15)?.reshape([n, 3, 3])?)
}
