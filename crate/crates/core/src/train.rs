//! End-to-end optimization of Gaussian attributes, velocity and material
//! fields against observed multi-view sequences.

use std::path::Path;

use gsdyn_autodiff::{Tape, Tensor, Var};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Manifest, RADIUS_FACTOR};
use crate::error::{io_err, Error, Result};
use crate::image::RenderedImage;
use crate::material::{MaterialDecoder, MaterialParams, RHO_REF};
use crate::metrics::{
    kmeans, physics_signature, psnr, rendering_loss_var, sample_timestamps, ssim, standardize, KMeans,
    SIGNATURE_TIMESTAMPS,
};
use crate::mpm::{rollout, rollout_taped, state_deformation, state_positions, GridSpec, ParticleProps, Particles, SimConfig};
use crate::nn::{Adam, Bound, ParamId, ParamStore};
use crate::render::{render_vars, Deformation, RenderOptions, SceneTensors, SplatVars};
use crate::scene::{GaussianParticle, Scene};
use crate::velocity::{
    integrate_positions, Field, PlainVelocityNet, VelocityFieldConfig, VelocityFieldNet, VelocityModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Physics codes from a network of canonical position (else free codes
    /// and one global material).
    pub ipi: bool,
    /// Structured divergence-free velocity field (else a plain MLP).
    pub vfd: bool,
    /// Simulate with MPM (else positions come from the velocity field).
    pub mpm: bool,
    /// Motion patterns `K`.
    pub motion_patterns: usize,
    pub code_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub pos_freqs: usize,
    pub time_freqs: usize,
    pub lambda_ssim: f64,
    pub lambda_phys: f64,
    pub lr_network: f64,
    pub lr_material: f64,
    pub lr_gaussian: f64,
    pub lr_position: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Reconstruction of the first frame only.
    pub static_iterations: usize,
    /// Kinematic fit through the velocity field before the simulator joins.
    pub warmup_iterations: usize,
    pub dynamic_iterations: usize,
    pub frames_per_iteration: usize,
    pub rk4_steps_per_frame: usize,
    pub seed: u64,
    pub dt: f64,
    pub grid_cells: usize,
    pub boundary: usize,
    pub gravity: [f64; 3],
    /// Starting guess for the material decoder.
    pub initial_youngs_modulus: f64,
    pub initial_poisson_ratio: f64,
    /// Jitter of the initial particle positions, in lattice spacings.
    pub init_jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ipi: true,
            vfd: true,
            mpm: true,
            motion_patterns: 16,
            code_dim: 32,
            hidden: 64,
            hidden_layers: 3,
            pos_freqs: 6,
            time_freqs: 4,
            lambda_ssim: 0.2,
            lambda_phys: 0.1,
            lr_network: 1e-3,
            lr_material: 1e-2,
            lr_gaussian: 1e-2,
            lr_position: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            static_iterations: 100,
            warmup_iterations: 150,
            dynamic_iterations: 150,
            frames_per_iteration: 6,
            rk4_steps_per_frame: 1,
            seed: 0,
            dt: 1e-3,
            grid_cells: 16,
            boundary: 3,
            gravity: [0.0, -9.8, 0.0],
            initial_youngs_modulus: 4e4,
            initial_poisson_ratio: 0.3,
            init_jitter: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.vfd && !self.mpm {
            return Err(Error::Config("at least one of VFD and MPM must be enabled".into()));
        }
        if self.motion_patterns == 0 || self.code_dim == 0 || self.frames_per_iteration == 0 {
            return Err(Error::Config("K, code size and frames per iteration must be positive".into()));
        }
        if self.rk4_steps_per_frame == 0 {
            return Err(Error::Config("rk4_steps_per_frame must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lambda_ssim) || self.lambda_phys < 0.0 {
            return Err(Error::Config("loss weights out of range".into()));
        }
        MaterialParams::new(self.initial_youngs_modulus, self.initial_poisson_ratio, RHO_REF)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn sim_config(&self, fps: f64) -> Result<SimConfig> {
        let steps = 1.0 / (fps * self.dt);
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(Error::Config(format!("frame time 1/{fps} is not a multiple of dt = {}", self.dt)));
        }
        let cfg = SimConfig {
            dt: self.dt,
            substeps_per_frame: steps.round() as usize,
            gravity: Vector3::from(self.gravity),
            boundary: self.boundary,
            grid: GridSpec::unit(self.grid_cells),
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Take the simulation environment (gravity, grid, time step) of a
    /// dataset as known.
    pub fn adopt_environment(&mut self, manifest: &Manifest) {
        let r = &manifest.recipe;
        self.dt = r.dt;
        self.grid_cells = r.grid_cells;
        self.boundary = r.boundary;
        self.gravity = r.gravity;
    }

    /// Which pathway produces the rendered positions in the main stage.
    pub fn pathway(&self) -> &'static str {
        if self.mpm {
            "mpm"
        } else {
            "vfd"
        }
    }

    fn velocity_config(&self) -> VelocityFieldConfig {
        VelocityFieldConfig {
            patterns: self.motion_patterns,
            code_dim: self.code_dim,
            pos_freqs: self.pos_freqs,
            time_freqs: self.time_freqs,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
        }
    }
}

/// Ids of the per-particle rendering attributes.
#[derive(Debug, Clone, Copy)]
pub struct GaussianIds {
    pub positions: ParamId,
    pub rotations: ParamId,
    pub log_scales: ParamId,
    pub opacity_logits: ParamId,
    pub colors: ParamId,
}

/// Everything that is learned, plus the fixed particle volumes.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub gaussians: GaussianIds,
    pub velocity: VelocityModel,
    pub material: MaterialDecoder,
    pub volumes: Vec<f64>,
    template: Scene,
}

impl Model {
    /// Fresh networks around the particles of `scene`.
    pub fn new(config: &TrainConfig, scene: &Scene) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let t = SceneTensors::from_scene(scene)?;
        let gaussians = GaussianIds {
            positions: store.add("gaussian.positions", t.positions, config.lr_position),
            rotations: store.add("gaussian.rotations", t.rotations, config.lr_gaussian),
            log_scales: store.add("gaussian.log_scales", t.log_scales, config.lr_gaussian),
            opacity_logits: store.add("gaussian.opacity_logits", t.opacity_logits, config.lr_gaussian),
            colors: store.add("gaussian.colors", t.colors, config.lr_gaussian),
        };
        let vcfg = config.velocity_config();
        let velocity = match (config.vfd, config.ipi) {
            (true, true) => VelocityModel::Structured(VelocityFieldNet::new(&mut store, vcfg, config.lr_network, &mut rng)),
            (true, false) => VelocityModel::Structured(VelocityFieldNet::with_free_codes(
                &mut store,
                vcfg,
                scene.len(),
                config.lr_network,
                &mut rng,
            )),
            (false, _) => VelocityModel::Plain(PlainVelocityNet::new(&mut store, &vcfg, config.lr_network, &mut rng)),
        };
        let material = if config.ipi {
            MaterialDecoder::network(&mut store, config.pos_freqs, &[64, 64], config.lr_material, &mut rng)
        } else {
            MaterialDecoder::global(&mut store, config.lr_material)
        };
        let guess = MaterialParams::new(config.initial_youngs_modulus, config.initial_poisson_ratio, RHO_REF)?;
        material.bias_towards(&mut store, &guess);
        Ok(Self {
            config: config.clone(),
            store,
            gaussians,
            velocity,
            material,
            volumes: scene.particles.iter().map(|p| p.volume).collect(),
            template: scene.clone(),
        })
    }

    /// Rebuild a model from a saved scene and parameter store.
    pub fn restore(config: &TrainConfig, scene: &Scene, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, scene)?;
        if store.len() != model.store.len()
            || model
                .store
                .ids()
                .any(|id| store.name(id) != model.store.name(id) || store.get(id).shape() != model.store.get(id).shape())
        {
            return Err(Error::Format("parameters do not match the configured model".into()));
        }
        model.store = store;
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// Current canonical scene with the learned attributes.
    pub fn scene(&self) -> Result<Scene> {
        let mut scene = self.template.clone();
        let g = &self.gaussians;
        let t = SceneTensors {
            positions: self.store.get(g.positions).clone(),
            rotations: self.store.get(g.rotations).clone(),
            log_scales: self.store.get(g.log_scales).clone(),
            opacity_logits: self.store.get(g.opacity_logits).clone(),
            colors: self.store.get(g.colors).clone(),
        };
        t.write_to(&mut scene)?;
        Ok(scene)
    }

    pub fn canonical_positions(&self) -> Vec<Vector3<f64>> {
        self.store
            .get(self.gaussians.positions)
            .data()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    }

    /// Decoded material of every particle.
    pub fn materials(&self) -> Result<Vec<MaterialParams>> {
        self.material.decode_all(&self.store, &self.canonical_positions())
    }

    /// Velocities at `t` of particles at their canonical positions.
    pub fn initial_velocities(&self) -> Result<Vec<Vector3<f64>>> {
        self.velocity.velocities_at(&self.store, &self.canonical_positions(), 0.0)
    }

    /// Packed simulator properties from decoded materials.
    pub fn particle_props(&self) -> Result<ParticleProps> {
        let mats = self.materials()?;
        let mut props = ParticleProps::uniform(0, 0.0, 0.0, 0.0, 0.0);
        for (m, &v) in mats.iter().zip(&self.volumes) {
            let (mu, lambda) = m.lame();
            props.mass.push(m.density * v);
            props.volume.push(v);
            props.mu.push(mu);
            props.lambda.push(lambda);
        }
        Ok(props)
    }
}

/// Initial scene for training: the canonical particles of a dataset with
/// jittered positions and gray, semi-transparent appearance.
pub fn initial_scene(manifest: &Manifest, canonical: &Particles, config: &TrainConfig) -> Result<Scene> {
    let r = &manifest.recipe;
    if canonical.len() != manifest.labels.len() {
        return Err(Error::Config(format!(
            "{} canonical particles for {} labels",
            canonical.len(),
            manifest.labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let particles = canonical
        .x
        .iter()
        .zip(&manifest.labels)
        .map(|(x, &l)| {
            let s = r.spacing(l as usize);
            let jitter = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * (config.init_jitter * s);
            let mut g = GaussianParticle::new(x + jitter, RADIUS_FACTOR * s, 0.8, [0.5; 3]);
            g.volume = s * s * s;
            g.mass = RHO_REF * g.volume;
            g
        })
        .collect();
    Ok(Scene::new(particles, 0.05))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Static,
    Warmup,
    Dynamic,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Static => "static",
            Stage::Warmup => "warmup",
            Stage::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub loss: f64,
    /// Mean PSNR of this iteration's renders.
    pub psnr: f64,
}

pub const LOSS_HEADER: &str = "iteration,loss,psnr";

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut text = String::from(LOSS_HEADER);
    text.push('\n');
    for r in history {
        text.push_str(&format!("{},{:.9},{:.6}\n", r.iteration, r.loss, r.psnr));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    /// Parameters that never received a nonzero gradient.
    pub dead_parameters: Vec<String>,
}

/// Positions (and deformation gradients when simulated) at each requested
/// frame, recorded on a tape.
struct Trajectory<'t> {
    positions: Vec<Var<'t>>,
    deformation: Vec<Option<Var<'t>>>,
    /// Squared-distance consistency between the two pathways.
    consistency: Option<Var<'t>>,
}

fn splat_vars<'t>(model: &Model, params: &Bound<'t>) -> SplatVars<'t> {
    let g = &model.gaussians;
    SplatVars {
        positions: params.var(g.positions),
        rotations: params.var(g.rotations),
        log_scales: params.var(g.log_scales),
        opacity_logits: params.var(g.opacity_logits),
        colors: params.var(g.colors),
        deformation: None,
    }
}

/// Positions from the velocity field at every frame in `0..=last`.
fn integrate_frames<'t>(
    field: &Field<'_, 't>,
    params: &Bound<'t>,
    p0: Var<'t>,
    fps: f64,
    last: usize,
    steps: usize,
) -> Result<Vec<Var<'t>>> {
    let mut out = vec![p0];
    let mut p = p0;
    for f in 1..=last {
        p = integrate_positions(field, params, p, (f - 1) as f64 / fps, f as f64 / fps, steps)?;
        out.push(p);
    }
    Ok(out)
}

fn props_var<'t>(model: &Model, params: &Bound<'t>, p0: Var<'t>) -> Result<Var<'t>> {
    let tape = params.tape();
    let n = model.len();
    let mats = model.material.decode(params, p0)?;
    let (mu, lambda) = mats.lame()?;
    let volume = tape.constant(Tensor::new([n, 1], model.volumes.clone())?);
    let mass = mats.density.mul(volume)?;
    Ok(Var::concat_last(&[mass, volume, mu, lambda])?)
}

fn initial_state<'t>(model: &Model, params: &Bound<'t>, field: &Field<'_, 't>, p0: Var<'t>) -> Result<Var<'t>> {
    let n = model.len();
    let v0 = field.velocity(params, 0.0, p0)?;
    let eye: Vec<f64> = (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).collect();
    let f0 = params.tape().constant(Tensor::new([n, 9], eye)?);
    Ok(Var::concat_last(&[p0, v0, f0])?)
}

fn trajectory<'t>(
    model: &Model,
    params: &Bound<'t>,
    sim: &SimConfig,
    fps: f64,
    last: usize,
    use_mpm: bool,
) -> Result<Trajectory<'t>> {
    let cfg = &model.config;
    let p0 = params.var(model.gaussians.positions);
    let field = model.velocity.field(params, p0)?;
    let vfd = if cfg.vfd && (!use_mpm || cfg.lambda_phys > 0.0) {
        Some(integrate_frames(&field, params, p0, fps, last, cfg.rk4_steps_per_frame)?)
    } else {
        None
    };
    if !use_mpm {
        let positions = vfd.expect("velocity field enabled without the simulator");
        return Ok(Trajectory {
            deformation: vec![None; positions.len()],
            positions,
            consistency: None,
        });
    }
    let state = initial_state(model, params, &field, p0)?;
    let props = props_var(model, params, p0)?;
    let frames = rollout_taped(state, props, sim, last)?;
    let positions = frames.iter().map(|s| state_positions(*s)).collect::<Result<Vec<_>>>()?;
    let deformation = frames
        .iter()
        .map(|s| state_deformation(*s).map(Some))
        .collect::<Result<Vec<_>>>()?;
    let consistency = match &vfd {
        Some(v) if cfg.lambda_phys > 0.0 => {
            let n = model.len() as f64;
            let mut total: Option<Var<'t>> = None;
            for (a, b) in positions.iter().zip(v).skip(1) {
                let d = a.sub(*b)?.square()?.sum()?.scale(1.0 / n)?;
                total = Some(match total {
                    Some(t) => t.add(d)?,
                    None => d,
                });
            }
            match total {
                Some(t) => Some(t.scale(1.0 / last.max(1) as f64)?),
                None => None,
            }
        }
        _ => None,
    };
    Ok(Trajectory {
        positions,
        deformation,
        consistency,
    })
}

/// Frame 0 plus `count` distinct later training frames, ascending. Frame 0
/// keeps the canonical positions pinned to the observed first frame.
fn sample_frames(rng: &mut ChaCha8Rng, train: usize, count: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (1..train).collect();
    pool.shuffle(rng);
    pool.truncate(count.min(pool.len()));
    pool.push(0);
    pool.sort_unstable();
    pool
}

fn loss_terms<'t>(
    model: &Model,
    params: &Bound<'t>,
    data: &Dataset,
    frames: &[usize],
    traj: Option<&Trajectory<'t>>,
) -> Result<(Var<'t>, f64)> {
    let opts = RenderOptions::default();
    let mut total: Option<Var<'t>> = None;
    let mut psnr_sum = 0.0;
    let mut count = 0usize;
    for &f in frames {
        let mut vars = splat_vars(model, params);
        if let Some(t) = traj {
            vars.positions = t.positions[f];
            vars.deformation = t.deformation[f];
        }
        for (c, cam) in data.cameras.iter().enumerate() {
            let gt = &data.frames[c][f];
            let img = render_vars(&vars, cam, &opts)?;
            psnr_sum += psnr(&RenderedImage::from_tensor(&img.value())?, gt)?;
            let l = rendering_loss_var(img, gt, model.config.lambda_ssim)?;
            total = Some(match total {
                Some(t) => t.add(l)?,
                None => l,
            });
            count += 1;
        }
    }
    let total = total.expect("at least one frame and camera");
    Ok((total.scale(1.0 / count as f64)?, psnr_sum / count as f64))
}

/// Run the staged optimization in place on `model`.
pub fn train(model: &mut Model, data: &Dataset) -> Result<TrainReport> {
    data.validate()?;
    let cfg = model.config.clone();
    cfg.validate()?;
    let sim = cfg.sim_config(data.fps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(cfg.beta1, cfg.beta2);
    let mut history = Vec::new();
    let mut alive = vec![false; model.store.len()];
    let stages = [
        (Stage::Static, cfg.static_iterations),
        (Stage::Warmup, if cfg.vfd { cfg.warmup_iterations } else { 0 }),
        (Stage::Dynamic, cfg.dynamic_iterations),
    ];
    let mut iteration = 0;
    for (stage, iterations) in stages {
        for _ in 0..iterations {
            let tape = Tape::new();
            let params = model.store.attach(&tape);
            let (frames, pathway) = match stage {
                Stage::Static => (vec![0], "static"),
                _ => (
                    sample_frames(&mut rng, data.train_frame_count, cfg.frames_per_iteration),
                    if stage == Stage::Dynamic { cfg.pathway() } else { "vfd" },
                ),
            };
            let (loss, mean_psnr) = if stage == Stage::Static || frames.len() < 2 {
                loss_terms(model, &params, data, &[0], None)?
            } else {
                let last = *frames.last().expect("sampled");
                let use_mpm = stage == Stage::Dynamic && cfg.mpm;
                let traj = trajectory(model, &params, &sim, data.fps, last, use_mpm)?;
                let (mut loss, p) = loss_terms(model, &params, data, &frames, Some(&traj))?;
                if let Some(c) = traj.consistency {
                    loss = loss.add(c.scale(cfg.lambda_phys)?)?;
                }
                (loss, p)
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged { iteration, pathway });
            }
            let grads = tape.backward(loss)?;
            let grads = params.collect(&model.store, &grads);
            for (id, g) in &grads {
                if !g.is_finite() {
                    return Err(Error::Diverged { iteration, pathway });
                }
                if g.data().iter().any(|v| *v != 0.0) {
                    alive[model.store.ids().position(|x| x == *id).expect("known id")] = true;
                }
            }
            adam.step(&mut model.store, &grads);
            history.push(LossRecord {
                iteration,
                stage,
                loss: value,
                psnr: mean_psnr,
            });
            iteration += 1;
        }
    }
    let dead_parameters = model
        .store
        .ids()
        .zip(&alive)
        .filter(|(id, a)| !**a && model.store.is_trainable(*id))
        .map(|(id, _)| model.store.name(id).to_string())
        .collect();
    Ok(TrainReport {
        history,
        dead_parameters,
    })
}

/// Detached particle positions and deformation at frames `0..count`.
pub fn predict_states(model: &Model, fps: f64, count: usize) -> Result<Vec<Vec<Deformation>>> {
    let cfg = &model.config;
    if cfg.mpm {
        let sim = cfg.sim_config(fps)?;
        let mut init = Particles::at_rest(model.canonical_positions());
        init.v = model.initial_velocities()?;
        let states = rollout(&init, &model.particle_props()?, &sim, count.saturating_sub(1))?;
        Ok(states
            .iter()
            .map(|s| s.x.iter().zip(&s.f).map(|(x, f)| (*x, *f)).collect())
            .collect())
    } else {
        let tape = Tape::new();
        let params = model.store.attach_constants(&tape);
        let p0 = params.var(model.gaussians.positions);
        let field = model.velocity.field(&params, p0)?;
        let frames = integrate_frames(&field, &params, p0, fps, count.saturating_sub(1), cfg.rk4_steps_per_frame)?;
        Ok(frames
            .iter()
            .map(|p| {
                p.value()
                    .data()
                    .chunks_exact(3)
                    .map(|c| (Vector3::new(c[0], c[1], c[2]), nalgebra::Matrix3::identity()))
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct Extrapolation {
    /// `images[camera][k]` for frame `first_frame + k`.
    pub images: Vec<Vec<RenderedImage>>,
    pub first_frame: usize,
    pub scores: Vec<FrameScore>,
    /// Particle states for every frame from 0.
    pub states: Vec<Vec<Deformation>>,
}

impl Extrapolation {
    pub fn mean_psnr(&self) -> f64 {
        self.scores.iter().map(|s| s.psnr).sum::<f64>() / self.scores.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.scores.iter().map(|s| s.ssim).sum::<f64>() / self.scores.len().max(1) as f64
    }
}

/// Render `horizon` frames past the training window and score them
/// against the held-out frames.
pub fn extrapolate(model: &Model, data: &Dataset, horizon: usize) -> Result<Extrapolation> {
    let first = data.train_frame_count;
    let horizon = horizon.min(data.extrapolate_frame_count);
    let states = predict_states(model, data.fps, first + horizon)?;
    let scene = model.scene()?;
    let mut images = Vec::new();
    let mut per_frame = vec![(0.0, 0.0); horizon];
    for (c, cam) in data.cameras.iter().enumerate() {
        let mut seq = Vec::new();
        for k in 0..horizon {
            let img = crate::render::render(&scene, cam, Some(&states[first + k]))?;
            let gt = &data.frames[c][first + k];
            per_frame[k].0 += psnr(&img, gt)?;
            per_frame[k].1 += ssim(&img, gt)?;
            seq.push(img);
        }
        images.push(seq);
    }
    let nc = data.cameras.len() as f64;
    let scores = per_frame
        .iter()
        .enumerate()
        .map(|(k, (p, s))| FrameScore {
            frame: first + k,
            psnr: p / nc,
            ssim: s / nc,
        })
        .collect();
    Ok(Extrapolation {
        images,
        first_frame: first,
        scores,
        states,
    })
}

/// Mean recovered initial velocity and geometric-mean Young's modulus.
pub fn recovered_physics(model: &Model) -> Result<(Vector3<f64>, f64)> {
    let v = model.initial_velocities()?;
    let n = v.len().max(1) as f64;
    let mean_v = v.iter().fold(Vector3::zeros(), |a, b| a + b) / n;
    let mats = model.materials()?;
    let log_e = mats.iter().map(|m| m.youngs_modulus.ln()).sum::<f64>() / mats.len().max(1) as f64;
    Ok((mean_v, log_e.exp()))
}

/// Per-particle physics signatures sampled over the training window.
pub fn signatures(model: &Model, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let t1 = data.frame_time(data.train_frame_count.saturating_sub(1));
    let times = sample_timestamps(0.0, t1, SIGNATURE_TIMESTAMPS);
    physics_signature(
        &model.material,
        &model.velocity,
        &model.store,
        &model.canonical_positions(),
        &times,
    )
}

/// Clusters standardized physics signatures into `clusters` groups.
pub fn segment(model: &Model, data: &Dataset, clusters: usize, seed: u64) -> Result<KMeans> {
    kmeans(&standardize(&signatures(model, data)?), clusters, seed)
}
