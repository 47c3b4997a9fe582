//! Invariant suites with independent oracles: finite differences, the
//! brute-force compositor, analytic trajectories and repeated runs.

use std::time::Instant;

use gsdyn_autodiff::check::{gradcheck, primitive_cases, run_case};
use gsdyn_autodiff::{Tape, Tensor, Var};
use nalgebra::{Matrix3, Matrix4, Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::dataset::{synthesize, Dataset, Manifest, SceneKind, SceneRecipe};
use crate::error::Result;
use crate::material::{lame_from_material, MaterialParams};
use crate::metrics::{kmeans, psnr, sample_timestamps, segmentation_scores, ssim, SIGNATURE_TIMESTAMPS};
use crate::mpm::{
    p2g, rollout, rollout_taped, state_positions, substep, GridSpec, ParticleProps, Particles, SimConfig,
};
use crate::nn::ParamStore;
use crate::render::{render, render_bruteforce, render_vars, Deformation, RenderOptions, SplatVars};
use crate::scene::{Camera, GaussianParticle, Scene};
use crate::train::{initial_scene, train, Model, TrainConfig};
use crate::velocity::{velocity_at, VelocityFieldConfig, VelocityFieldNet};

pub const GRADCHECK_TOL: f64 = 1e-6;
pub const RENDER_TOL: f64 = 1e-9;
pub const RENDER_GRAD_TOL: f64 = 1e-4;
pub const DIVERGENCE_TOL: f64 = 1e-6;
pub const MASS_TOL: f64 = 1e-12;
pub const MOMENTUM_TOL: f64 = 1e-8;
pub const BALLISTIC_TOL: f64 = 1e-3;
pub const HEIGHT_GRAD_TOL: f64 = 1e-6;
pub const STIFFNESS_GRAD_TOL: f64 = 1e-3;

/// Sample counts for one run of the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub autodiff_trials: usize,
    pub render_scenes: usize,
    pub divergence_samples: usize,
    pub conservation_substeps: usize,
    pub kmeans_seeds: usize,
}

impl Budget {
    /// Sizes that finish in a few seconds.
    pub fn quick() -> Self {
        Self {
            autodiff_trials: 10,
            render_scenes: 3,
            divergence_samples: 100,
            conservation_substeps: 200,
            kmeans_seeds: 5,
        }
    }

    pub fn full() -> Self {
        Self {
            autodiff_trials: 100,
            render_scenes: 20,
            divergence_samples: 1000,
            conservation_substeps: 2000,
            kmeans_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> Outcome {
    match result {
        Ok((passed, detail)) => Outcome { name, passed, detail },
        Err(e) => Outcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// `|a − b| / |b|`, or `|a|` when `b` is zero.
pub fn strict_relative(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Worst finite-difference error per primitive.
pub fn autodiff_errors(trials: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    primitive_cases()
        .iter()
        .enumerate()
        .map(|(i, case)| Ok((case.name, run_case(case, trials, seed + i as u64)?)))
        .collect()
}

fn probe_camera(size: usize) -> Camera {
    Camera {
        world_to_camera: Matrix4::identity(),
        fx: size as f64,
        fy: size as f64,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
    }
}

/// Random particles in front of [`probe_camera`]; `sh_degree` 1 adds
/// small view-dependent color terms.
pub fn random_scene(rng: &mut ChaCha8Rng, n: usize, sh_degree: usize, max_opacity: f64) -> Scene {
    let particles = (0..n)
        .map(|_| {
            let z = rng.gen_range(1.5..3.0);
            let p = Vector3::new(rng.gen_range(-0.35..0.35) * z, rng.gen_range(-0.35..0.35) * z, z);
            let rgb = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
            let mut g = GaussianParticle::new(p, rng.gen_range(0.03..0.12), rng.gen_range(0.2..max_opacity), rgb);
            g.rotation = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            g.normalize().expect("nonzero quaternion");
            g.log_scale += Vector3::from_fn(|_, _| rng.gen_range(-0.4..0.4));
            if sh_degree == 1 {
                g.color.extend((0..9).map(|_| rng.gen_range(-0.05..0.05)));
            }
            g
        })
        .collect();
    Scene::new(particles, 0.1)
}

fn random_deformation(rng: &mut ChaCha8Rng, scene: &Scene) -> Vec<Deformation> {
    scene
        .particles
        .iter()
        .map(|g| {
            let f = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
            (g.position + Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05)), f)
        })
        .collect()
}

/// Largest per-channel gap between the tiled renderer and the brute-force
/// compositor over `scenes` random 64×64 renders.
pub fn renderer_equivalence(scenes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = probe_camera(64);
    let mut worst: f64 = 0.0;
    for s in 0..scenes {
        let n = rng.gen_range(1..=64);
        let scene = random_scene(&mut rng, n, s % 2, 0.99);
        let def = (s % 3 == 2).then(|| random_deformation(&mut rng, &scene));
        let fast = render(&scene, &cam, def.as_deref())?;
        let slow = render_bruteforce(&scene, &cam, def.as_deref())?;
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    Ok(worst)
}

/// Worst relative error (floored at 1) of renderer gradients with respect
/// to every particle attribute against central differences.
pub fn renderer_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 20;
    let cam = probe_camera(size);
    let mut worst: f64 = 0.0;
    for degree in [0, 1] {
        let scene = random_scene(&mut rng, 6, degree, 0.75);
        let t = crate::render::SceneTensors::from_scene(&scene)?;
        let weights = Tensor::new(
            [size, size, 3],
            (0..size * size * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let report = gradcheck(
            |tape, x| {
                let vars = SplatVars {
                    positions: x[0],
                    rotations: x[1],
                    log_scales: x[2],
                    opacity_logits: x[3],
                    colors: x[4],
                    deformation: Some(x[5]),
                };
                let img = render_vars(&vars, &cam, &RenderOptions::default()).map_err(to_tensor_err)?;
                img.mul(tape.constant(weights.clone()))?.sum()
            },
            &[
                t.positions,
                t.rotations,
                t.log_scales,
                t.opacity_logits,
                t.colors,
                Tensor::new(
                    [6, 3, 3],
                    (0..6)
                        .flat_map(|_| {
                            let m = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1));
                            gsdyn_autodiff::linalg::mat3_to_row_major(&m)
                        })
                        .collect(),
                )?,
            ],
            1e-6,
        )?;
        worst = worst.max(report.max_relative_error);
    }
    Ok(worst)
}

fn to_tensor_err(e: crate::Error) -> gsdyn_autodiff::TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => gsdyn_autodiff::TensorError::Custom {
            op: "render".into(),
            message: other.to_string(),
        },
    }
}

/// Largest `|∇·v|` by central differences over random networks, codes,
/// positions and times.
pub fn divergence_max(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VelocityFieldConfig {
        patterns: 4,
        code_dim: 8,
        hidden: 16,
        hidden_layers: 2,
        ..Default::default()
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut store = ParamStore::new();
        let net = VelocityFieldNet::new(&mut store, cfg, 1e-3, &mut rng);
        let z: Vec<f64> = (0..cfg.code_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let t = rng.gen_range(0.0..2.0);
        let mut div = 0.0;
        for axis in 0..3 {
            let mut e = Vector3::zeros();
            e[axis] = h;
            let plus = velocity_at(&net, &store, &z, t, &(p + e))?;
            let minus = velocity_at(&net, &store, &z, t, &(p - e))?;
            div += (plus[axis] - minus[axis]) / (2.0 * h);
        }
        worst = worst.max(div.abs());
    }
    Ok(worst)
}

/// Axis-aligned lattice cube with uniform material.
pub fn lattice_cube(center: Vector3<f64>, size: f64, side: usize, material: &MaterialParams) -> (Particles, ParticleProps) {
    let s = size / side as f64;
    let mut x = Vec::with_capacity(side.pow(3));
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                let lattice = Vector3::new(i as f64, j as f64, k as f64).add_scalar(0.5) * s;
                x.push(center - Vector3::repeat(size / 2.0) + lattice);
            }
        }
    }
    let (mu, lambda) = lame_from_material(material);
    let n = x.len();
    let vol = s * s * s;
    (Particles::at_rest(x), ParticleProps::uniform(n, material.density * vol, vol, mu, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conservation {
    /// Worst relative gap between grid and particle mass.
    pub mass_error: f64,
    /// Worst change of total momentum in one substep.
    pub momentum_drift: f64,
    pub seconds: f64,
}

/// Free-floating compressed, spinning-free cube with random velocities.
pub fn mpm_conservation(substeps: usize, seed: u64) -> Result<Conservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recipe = SceneRecipe::preset(SceneKind::FallingElasticCube);
    let cfg = SimConfig {
        gravity: Vector3::zeros(),
        ..recipe.sim_config()
    };
    let (mut state, props) = lattice_cube(Vector3::repeat(0.5), 0.2, 4, &MaterialParams::new(1e4, 0.2, 1000.0)?);
    for i in 0..state.len() {
        state.v[i] = Vector3::from_fn(|_, _| rng.gen_range(-0.02..0.02));
        state.f[i] = Matrix3::identity() * 0.95 + Matrix3::from_fn(|_, _| rng.gen_range(-0.01..0.01));
    }
    let total = props.total_mass();
    let start = Instant::now();
    let mut mass_error: f64 = 0.0;
    let mut momentum_drift: f64 = 0.0;
    let mut momentum = state.momentum(&props);
    for k in 0..substeps {
        let grid = p2g(&state, &props, &cfg)?;
        mass_error = mass_error.max((grid.total_mass() - total).abs() / total);
        state = substep(&state, &props, &cfg, k)?;
        let next = state.momentum(&props);
        momentum_drift = momentum_drift.max((next - momentum).norm());
        momentum = next;
    }
    Ok(Conservation {
        mass_error,
        momentum_drift,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Relative gap between the simulated center of mass of a thrown cube at
/// `t` and `p₀ + v₀t + ½gt²`.
pub fn ballistic_error(t: f64) -> Result<f64> {
    let cfg = SimConfig {
        dt: 1e-4,
        substeps_per_frame: 1,
        grid: GridSpec::unit(32),
        ..SimConfig::default()
    };
    let steps = (t / cfg.dt).round() as usize;
    let (mut state, props) = lattice_cube(Vector3::new(0.3, 0.45, 0.45), 0.1, 4, &MaterialParams::new(1e4, 0.2, 1000.0)?);
    let v0 = Vector3::new(1.0, 1.5, 0.5);
    state.v.iter_mut().for_each(|v| *v = v0);
    let p0 = state.center_of_mass(&props);
    let frames = rollout(&state, &props, &cfg, steps)?;
    let com = frames.last().expect("initial frame").center_of_mass(&props);
    let analytic = p0 + v0 * t + 0.5 * cfg.gravity * t * t;
    Ok((com - analytic).norm() / analytic.norm())
}

/// Taped and analytic `d(mean final height)/d(v₀y)` over `substeps`
/// gravity-only substeps.
pub fn height_gradient(substeps: usize) -> Result<(f64, f64)> {
    let cfg = SimConfig {
        dt: 1e-3,
        substeps_per_frame: substeps,
        grid: GridSpec::unit(16),
        ..SimConfig::default()
    };
    let (mut state, props) = lattice_cube(Vector3::new(0.5, 0.5, 0.5), 0.2, 3, &MaterialParams::new(1e4, 0.2, 1000.0)?);
    state.v.iter_mut().for_each(|v| *v = Vector3::new(0.1, 0.4, 0.0));
    let n = state.len();
    let tape = Tape::new();
    let s0 = tape.constant(state.to_tensor());
    let vy = tape.leaf(Tensor::scalar(0.0));
    let mut mask = vec![0.0; n * 15];
    (0..n).for_each(|i| mask[15 * i + 4] = 1.0);
    let s0 = s0.add(tape.constant(Tensor::new([n, 15], mask)?).mul(vy)?)?;
    let frames = rollout_taped(s0, tape.constant(props.to_tensor()), &cfg, 1)?;
    let y = state_positions(*frames.last().expect("final state"))?.slice_last(1, 2)?.mean()?;
    let g = tape.backward(y)?;
    Ok((g.wrt(vy).item(), substeps as f64 * cfg.dt))
}

/// Loss after a compressed cube relaxes for a few substeps, and its
/// derivative with respect to Young's modulus: `(taped, central difference)`.
pub fn stiffness_gradient(seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = 0.2;
    let e0 = 1e4;
    let cfg = SimConfig {
        dt: 1e-4,
        substeps_per_frame: 100,
        gravity: Vector3::zeros(),
        grid: GridSpec::unit(16),
        ..SimConfig::default()
    };
    let (mut state, props) = lattice_cube(Vector3::repeat(0.5), 0.15, 3, &MaterialParams::new(e0, nu, 1000.0)?);
    for f in &mut state.f {
        *f = Matrix3::from_diagonal(&Vector3::new(0.85, 0.9, 0.95));
    }
    let n = state.len();
    let weights = Tensor::new([n, 3], (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let loss_of = |e: f64| -> Result<f64> {
        let (mu, lambda) = lame_from_material(&MaterialParams { youngs_modulus: e, poisson_ratio: nu, density: 1000.0 });
        let p = ParticleProps { mu: vec![mu; n], lambda: vec![lambda; n], ..props.clone() };
        let end = rollout(&state, &p, &cfg, 1)?.pop().expect("final state");
        Ok(end.x.iter().flat_map(|x| x.iter().copied()).zip(weights.data()).map(|(a, b)| a * b).sum())
    };

    let tape = Tape::new();
    let e = tape.leaf(Tensor::scalar(e0));
    let mu = e.scale(1.0 / (2.0 * (1.0 + nu)))?;
    let lambda = e.scale(nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))?;
    let ones = tape.constant(Tensor::new([n, 1], vec![1.0; n])?);
    let col = |v: &[f64]| Tensor::new([n, 1], v.to_vec());
    let packed = Var::concat_last(&[
        tape.constant(col(&props.mass)?),
        tape.constant(col(&props.volume)?),
        ones.mul(mu)?,
        ones.mul(lambda)?,
    ])?;
    let frames = rollout_taped(tape.constant(state.to_tensor()), packed, &cfg, 1)?;
    let x = state_positions(*frames.last().expect("final state"))?;
    let loss = x.mul(tape.constant(weights.clone()))?.sum()?;
    let taped = tape.backward(loss)?.wrt(e).item();
    let h = 1e-3 * e0;
    let fd = (loss_of(e0 + h)? - loss_of(e0 - h)?) / (2.0 * h);
    Ok((taped, fd))
}

/// Count of seeds where k-means fails to recover three well-separated
/// blobs exactly.
pub fn kmeans_blob_failures(seeds: usize) -> Result<usize> {
    let mut failures = 0;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let centers = [[0.0, 0.0], [10.0, 0.0], [5.0, 8.66]];
        let mut features = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..30 {
                let noise: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                features.push(vec![center[0] + noise[0], center[1] + noise[1]]);
                truth.push(c);
            }
        }
        let km = kmeans(&features, 3, seed)?;
        if segmentation_scores(&km.labels, &truth)?.miou != 1.0 {
            failures += 1;
        }
    }
    Ok(failures)
}

/// Small falling-cube recipe for quick end-to-end runs.
pub fn tiny_recipe() -> SceneRecipe {
    SceneRecipe {
        frames: 6,
        train_frames: 4,
        width: 24,
        height: 24,
        focal: 37.5,
        cameras: 2,
        ..SceneRecipe::preset(SceneKind::FallingElasticCube)
    }
}

pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        motion_patterns: 4,
        code_dim: 8,
        hidden: 16,
        hidden_layers: 1,
        static_iterations: 3,
        warmup_iterations: 2,
        dynamic_iterations: 2,
        frames_per_iteration: 2,
        ..Default::default()
    }
}

/// Train a tiny model from scratch; returns the checkpoint and the loss
/// history bits.
pub fn tiny_training_run(seed: u64) -> Result<(Checkpoint, Vec<u64>)> {
    let recipe = tiny_recipe();
    let syn = synthesize(&recipe, seed)?;
    let data = Dataset::from_synthetic(&syn, &recipe)?;
    let manifest = Manifest::new(&recipe, seed, syn.labels.clone());
    let mut cfg = TrainConfig { seed, ..tiny_config() };
    cfg.adopt_environment(&manifest);
    let scene = initial_scene(&manifest, &syn.states[0], &cfg)?;
    let mut model = Model::new(&cfg, &scene)?;
    let report = train(&mut model, &data)?;
    let bits = report.history.iter().flat_map(|r| [r.loss.to_bits(), r.psnr.to_bits()]).collect();
    Ok((Checkpoint::from_model(&model)?, bits))
}

fn check_autodiff(b: &Budget) -> Result<(bool, String)> {
    let errs = autodiff_errors(b.autodiff_trials, 1000)?;
    let (name, worst) = errs
        .iter()
        .copied()
        .fold(("none", 0.0), |a, e| if e.1 > a.1 { e } else { a });
    Ok((
        worst < GRADCHECK_TOL,
        format!("{} ops x {} trials, worst {worst:.3e} ({name})", errs.len(), b.autodiff_trials),
    ))
}

fn check_symmetry() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cam = probe_camera(24);
    let a = render(&random_scene(&mut rng, 10, 0, 0.9), &cam, None)?;
    let b = render(&random_scene(&mut rng, 10, 0, 0.9), &cam, None)?;
    let dp = (psnr(&a, &b)? - psnr(&b, &a)?).abs();
    let ds = (ssim(&a, &b)? - ssim(&b, &a)?).abs();
    Ok((dp == 0.0 && ds < 1e-12, format!("psnr gap {dp:e}, ssim gap {ds:.3e}")))
}

fn check_protocol() -> Result<(bool, String)> {
    let r = SceneRecipe::preset(SceneKind::FallingElasticCube);
    let m = Manifest::new(&r, 0, vec![0; r.particle_count]);
    let t1 = (r.train_frames - 1) as f64 / r.fps;
    let ts = sample_timestamps(0.0, t1, SIGNATURE_TIMESTAMPS);
    let uniform = ts.windows(2).all(|w| ((w[1] - w[0]) - t1 / 9.0).abs() < 1e-12);
    let ok = m.train_frames == 67 && m.extrapolate_frames == 22 && ts.len() == 10 && ts[0] == 0.0 && ts[9] == t1 && uniform;
    Ok((
        ok,
        format!("split {}/{}, {} timestamps over [0, {t1}]", m.train_frames, m.extrapolate_frames, ts.len()),
    ))
}

fn check_dataset_determinism() -> Result<(bool, String)> {
    let r = tiny_recipe();
    let a = synthesize(&r, 3)?;
    let b = synthesize(&r, 3)?;
    let same = a.states == b.states
        && a.images.iter().flatten().zip(b.images.iter().flatten()).all(|(x, y)| x.to_bytes() == y.to_bytes());
    Ok((same, format!("{} images compared", a.images.iter().map(Vec::len).sum::<usize>())))
}

fn check_training_determinism() -> Result<(bool, String)> {
    let (a, la) = tiny_training_run(7)?;
    let (b, lb) = tiny_training_run(7)?;
    let restored = Checkpoint::from_bytes(&a.to_bytes())?;
    let ok = la == lb && a.bit_eq(&b) && restored.bit_eq(&a);
    Ok((ok, format!("{} history values, {} parameters", la.len() / 2, a.params.len())))
}

/// Every suite at `budget`, in a fixed order.
pub fn run(budget: &Budget) -> Vec<Outcome> {
    let b = *budget;
    vec![
        outcome("autodiff_gradients", check_autodiff(&b)),
        outcome(
            "renderer_equivalence",
            renderer_equivalence(b.render_scenes, 11).map(|d| (d < RENDER_TOL, format!("{} scenes, max gap {d:.3e}", b.render_scenes))),
        ),
        outcome(
            "renderer_gradients",
            renderer_gradient_error(12).map(|e| (e < RENDER_GRAD_TOL, format!("worst relative error {e:.3e}"))),
        ),
        outcome(
            "velocity_divergence_free",
            divergence_max(b.divergence_samples, 13)
                .map(|d| (d < DIVERGENCE_TOL, format!("{} samples, max |div v| {d:.3e}", b.divergence_samples))),
        ),
        outcome(
            "mpm_conservation",
            mpm_conservation(b.conservation_substeps, 14).map(|c| {
                (
                    c.mass_error < MASS_TOL && c.momentum_drift < MOMENTUM_TOL,
                    format!(
                        "{} substeps, mass {:.3e}, momentum drift {:.3e}",
                        b.conservation_substeps, c.mass_error, c.momentum_drift
                    ),
                )
            }),
        ),
        outcome(
            "ballistic_free_fall",
            ballistic_error(0.3).map(|e| (e < BALLISTIC_TOL, format!("relative error {e:.3e} at t = 0.3 s"))),
        ),
        outcome(
            "launch_velocity_gradient",
            height_gradient(50).map(|(g, a)| {
                let e = strict_relative(g, a);
                (e < HEIGHT_GRAD_TOL, format!("taped {g:.12}, analytic {a}, relative {e:.3e}"))
            }),
        ),
        outcome(
            "stiffness_gradient",
            stiffness_gradient(15).map(|(g, fd)| {
                let e = strict_relative(g, fd);
                (e < STIFFNESS_GRAD_TOL, format!("taped {g:.6e}, difference {fd:.6e}, relative {e:.3e}"))
            }),
        ),
        outcome("metric_symmetry", check_symmetry()),
        outcome(
            "kmeans_blobs",
            kmeans_blob_failures(b.kmeans_seeds).map(|f| (f == 0, format!("{f} of {} seeds missed", b.kmeans_seeds))),
        ),
        outcome("protocol_split", check_protocol()),
        outcome("dataset_determinism", check_dataset_determinism()),
        outcome("training_determinism", check_training_determinism()),
    ]
}
