//! Synthetic multi-view datasets with ground-truth physics.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::image::RenderedImage;
use crate::material::{lame_from_material, MaterialParams};
use crate::mpm::{rollout, GridSpec, ParticleProps, Particles, SimConfig};
use crate::render::{render, Deformation};
use crate::scene::{Camera, GaussianParticle, Scene};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CANONICAL_FILE: &str = "canonical.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Static,
    TranslatingCube,
    FallingElasticCube,
    TwoMaterials,
    RotatingBody,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::Static,
        SceneKind::TranslatingCube,
        SceneKind::FallingElasticCube,
        SceneKind::TwoMaterials,
        SceneKind::RotatingBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Static => "static",
            SceneKind::TranslatingCube => "translating_cube",
            SceneKind::FallingElasticCube => "falling_elastic_cube",
            SceneKind::TwoMaterials => "two_materials",
            SceneKind::RotatingBody => "rotating_body",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// One cube of particles with its ground-truth material and motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecipe {
    pub center: [f64; 3],
    /// Edge length.
    pub size: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub velocity: [f64; 3],
    /// Spin about `center`.
    pub angular_velocity: [f64; 3],
    pub color: [f64; 3],
}

impl ObjectRecipe {
    pub fn material(&self) -> MaterialParams {
        MaterialParams {
            youngs_modulus: self.youngs_modulus,
            poisson_ratio: self.poisson_ratio,
            density: self.density,
        }
    }

    /// Initial velocity of a particle at `p`.
    pub fn velocity_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let w = Vector3::from(self.angular_velocity);
        Vector3::from(self.velocity) + w.cross(&(p - Vector3::from(self.center)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub kind: SceneKind,
    /// Total over all objects; each object gets an equal cubic lattice.
    pub particle_count: usize,
    pub objects: Vec<ObjectRecipe>,
    pub cameras: usize,
    pub camera_radius: f64,
    pub camera_elevation: f64,
    /// Focal length in pixels.
    pub focal: f64,
    pub look_at: [f64; 3],
    pub frames: usize,
    pub train_frames: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub gravity: [f64; 3],
    pub dt: f64,
    pub grid_cells: usize,
    pub boundary: usize,
    /// Lattice jitter as a fraction of the spacing.
    pub jitter: f64,
    pub opacity: f64,
}

fn cube(center: [f64; 3], size: f64, e: f64, velocity: [f64; 3], color: [f64; 3]) -> ObjectRecipe {
    ObjectRecipe {
        center,
        size,
        youngs_modulus: e,
        poisson_ratio: 0.2,
        density: 1000.0,
        velocity,
        angular_velocity: [0.0; 3],
        color,
    }
}

impl SceneRecipe {
    /// Desk-scale defaults: 64×64 images, four cameras, 89 frames split 67/22.
    pub fn preset(kind: SceneKind) -> Self {
        let warm = [0.9, 0.45, 0.2];
        let cool = [0.2, 0.55, 0.9];
        let (objects, gravity) = match kind {
            SceneKind::Static => (vec![cube([0.5, 0.45, 0.5], 0.2, 1e4, [0.0; 3], warm)], [0.0; 3]),
            SceneKind::TranslatingCube => (
                vec![cube([0.4, 0.45, 0.5], 0.16, 1e5, [0.15, 0.0, 0.0], warm)],
                [0.0; 3],
            ),
            SceneKind::FallingElasticCube => (
                vec![cube([0.45, 0.5, 0.5], 0.2, 1e4, [0.3, 0.4, 0.0], warm)],
                [0.0, -9.8, 0.0],
            ),
            SceneKind::TwoMaterials => (
                vec![
                    cube([0.36, 0.45, 0.5], 0.15, 3e3, [-0.15, 0.3, 0.0], warm),
                    cube([0.64, 0.45, 0.5], 0.15, 5e4, [0.15, 0.3, 0.0], cool),
                ],
                [0.0, -9.8, 0.0],
            ),
            SceneKind::RotatingBody => {
                let mut c = cube([0.5, 0.45, 0.5], 0.2, 1e5, [0.0; 3], warm);
                c.angular_velocity = [0.0, 1.5, 0.0];
                (vec![c], [0.0; 3])
            }
        };
        Self {
            kind,
            particle_count: 64 * objects.len(),
            objects,
            cameras: 4,
            camera_radius: 1.0,
            camera_elevation: 0.35,
            focal: 100.0,
            look_at: [0.5, 0.4, 0.5],
            frames: 89,
            train_frames: 67,
            fps: 50.0,
            width: 64,
            height: 64,
            gravity,
            dt: 1e-3,
            grid_cells: 16,
            boundary: 3,
            jitter: 0.05,
            opacity: 0.95,
        }
    }

    pub fn per_object(&self) -> usize {
        self.particle_count / self.objects.len().max(1)
    }

    /// Lattice points per cube edge.
    pub fn lattice_side(&self) -> usize {
        (self.per_object() as f64).cbrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.particle_count < 8 {
            return bad(format!("particle_count {} is below 8", self.particle_count));
        }
        if self.objects.is_empty() || self.particle_count % self.objects.len() != 0 {
            return bad("particle_count must split evenly over the objects".into());
        }
        if self.lattice_side().pow(3) != self.per_object() {
            return bad(format!("{} particles per object is not a cube number", self.per_object()));
        }
        if self.frames < 2 || self.train_frames == 0 || self.train_frames > self.frames {
            return bad(format!("bad frame split {}/{}", self.train_frames, self.frames));
        }
        if self.cameras == 0 || self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return bad("cameras, resolution and fps must be positive".into());
        }
        for o in &self.objects {
            o.material().validate()?;
        }
        let steps = 1.0 / (self.fps * self.dt);
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return bad(format!("1/fps is not a whole number of dt = {} steps", self.dt));
        }
        self.sim_config().validate()
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            substeps_per_frame: (1.0 / (self.fps * self.dt)).round() as usize,
            gravity: Vector3::from(self.gravity),
            boundary: self.boundary,
            grid: GridSpec::unit(self.grid_cells),
            ..SimConfig::default()
        }
    }

    pub fn extrapolate_frames(&self) -> usize {
        self.frames - self.train_frames
    }

    pub fn camera_rig(&self) -> Result<Vec<Camera>> {
        Camera::ring(
            self.cameras,
            Vector3::from(self.look_at),
            self.camera_radius,
            self.camera_elevation,
            self.focal,
            self.width,
            self.height,
        )
    }

    /// Lattice spacing of object `o`.
    pub fn spacing(&self, o: usize) -> f64 {
        self.objects[o].size / self.lattice_side() as f64
    }
}

/// Ground truth held in memory.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub scene: Scene,
    pub props: ParticleProps,
    pub labels: Vec<u8>,
    /// Particle state at every frame.
    pub states: Vec<Particles>,
    pub cameras: Vec<Camera>,
    /// `images[camera][frame]`.
    pub images: Vec<Vec<RenderedImage>>,
}

/// Radius of a particle relative to its lattice spacing.
pub const RADIUS_FACTOR: f64 = 0.45;

/// Build the canonical particles of `recipe`: positions, shading, labels.
pub fn build_scene(recipe: &SceneRecipe, seed: u64) -> Result<(Scene, ParticleProps, Particles, Vec<u8>)> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = recipe.lattice_side();
    let mut particles = Vec::new();
    let mut labels = Vec::new();
    let mut props = ParticleProps::uniform(0, 0.0, 0.0, 0.0, 0.0);
    let mut velocities = Vec::new();
    for (o, obj) in recipe.objects.iter().enumerate() {
        let s = recipe.spacing(o);
        let (mu, lambda) = lame_from_material(&obj.material());
        let c = Vector3::from(obj.center);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let lattice = Vector3::new(i as f64, j as f64, k as f64).add_scalar(0.5) * s;
                    let jitter = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * (recipe.jitter * s);
                    let p = c - Vector3::repeat(obj.size / 2.0) + lattice + jitter;
                    let shade = 0.55 + 0.45 * (i + j + k) as f64 / (3 * (n - 1).max(1)) as f64;
                    let stripe = if (i + k) % 2 == 0 { 1.0 } else { 0.8 };
                    let rgb = obj.color.map(|v| (v * shade * stripe).clamp(0.0, 1.0));
                    let mut g = GaussianParticle::new(p, RADIUS_FACTOR * s, recipe.opacity, rgb);
                    g.volume = s * s * s;
                    g.mass = obj.density * g.volume;
                    props.mass.push(g.mass);
                    props.volume.push(g.volume);
                    props.mu.push(mu);
                    props.lambda.push(lambda);
                    velocities.push(obj.velocity_at(&p));
                    particles.push(g);
                    labels.push(o as u8);
                }
            }
        }
    }
    let scene = Scene::new(particles, 0.05);
    let mut state = Particles::at_rest(scene.positions());
    state.v = velocities;
    Ok((scene, props, state, labels))
}

/// Render `states` from every camera.
pub fn render_states(scene: &Scene, states: &[Particles], cameras: &[Camera]) -> Result<Vec<Vec<RenderedImage>>> {
    cameras
        .iter()
        .map(|cam| {
            states
                .iter()
                .map(|s| {
                    let def: Vec<Deformation> = s.x.iter().zip(&s.f).map(|(x, f)| (*x, *f)).collect();
                    render(scene, cam, Some(&def))
                })
                .collect()
        })
        .collect()
}

/// Simulate and render `recipe` without touching the disk.
pub fn synthesize(recipe: &SceneRecipe, seed: u64) -> Result<Synthetic> {
    let (scene, props, initial, labels) = build_scene(recipe, seed)?;
    let states = rollout(&initial, &props, &recipe.sim_config(), recipe.frames - 1)?;
    let cameras = recipe.camera_rig()?;
    let images = render_states(&scene, &states, &cameras)?;
    Ok(Synthetic {
        scene,
        props,
        labels,
        states,
        cameras,
        images,
    })
}

/// One camera as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    /// Row-major 4×4 world-to-camera matrix.
    pub world_to_camera: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let mut m = [0.0; 16];
        for (k, v) in m.iter_mut().enumerate() {
            *v = c.world_to_camera[(k / 4, k % 4)];
        }
        Self {
            world_to_camera: m,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> Result<Camera> {
        let cam = Camera {
            world_to_camera: Matrix4::from_row_slice(&self.world_to_camera),
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_toml(path, &CameraFile::from(camera))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    read_toml::<CameraFile>(path)?.to_camera()
}

pub(crate) fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Ground-truth record written next to the images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub train_frames: usize,
    pub extrapolate_frames: usize,
    /// Camera files relative to the dataset root.
    pub cameras: Vec<String>,
    /// Image path relative to the root with `{camera}` and `{frame}`
    /// replaced by zero-padded indices.
    pub frame_pattern: String,
    pub canonical: String,
    /// Object index per particle.
    pub labels: Vec<u8>,
    pub recipe: SceneRecipe,
}

pub const FRAME_PATTERN: &str = "frames/cam_{camera}/frame_{frame}.png";

impl Manifest {
    /// Manifest of `recipe` before any files are written.
    pub fn new(recipe: &SceneRecipe, seed: u64, labels: Vec<u8>) -> Self {
        Self {
            seed,
            train_frames: recipe.train_frames,
            extrapolate_frames: recipe.extrapolate_frames(),
            cameras: Vec::new(),
            frame_pattern: FRAME_PATTERN.into(),
            canonical: CANONICAL_FILE.into(),
            labels,
            recipe: recipe.clone(),
        }
    }

    pub fn frame_path(&self, camera: usize, frame: usize) -> String {
        self.frame_pattern
            .replace("{camera}", &format!("{camera:02}"))
            .replace("{frame}", &format!("{frame:03}"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_toml(&dir.join(MANIFEST_FILE))
    }

    /// Ground-truth materials of every particle.
    pub fn particle_materials(&self) -> Vec<MaterialParams> {
        self.labels.iter().map(|&l| self.recipe.objects[l as usize].material()).collect()
    }
}

/// Simulate, render and write a dataset under `out_dir`.
pub fn generate_dataset(recipe: &SceneRecipe, seed: u64, out_dir: &Path) -> Result<Manifest> {
    let syn = synthesize(recipe, seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let cam_dir = out_dir.join("cameras");
    fs::create_dir_all(&cam_dir).map_err(io_err(&cam_dir))?;
    let mut manifest = Manifest::new(recipe, seed, syn.labels.clone());
    for (c, cam) in syn.cameras.iter().enumerate() {
        let rel = format!("cameras/cam_{c:02}.toml");
        write_camera(&out_dir.join(&rel), cam)?;
        manifest.cameras.push(rel);
    }
    for (c, frames) in syn.images.iter().enumerate() {
        for (f, img) in frames.iter().enumerate() {
            let path = out_dir.join(manifest.frame_path(c, f));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            img.write_png(&path)?;
        }
    }
    syn.states[0].write_snapshot(&out_dir.join(CANONICAL_FILE))?;
    write_toml(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Observed images and cameras.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    /// `frames[camera][frame]`.
    pub frames: Vec<Vec<RenderedImage>>,
    pub fps: f64,
    pub train_frame_count: usize,
    pub extrapolate_frame_count: usize,
}

impl Dataset {
    pub fn new(
        cameras: Vec<Camera>,
        frames: Vec<Vec<RenderedImage>>,
        fps: f64,
        train_frame_count: usize,
    ) -> Result<Self> {
        let total = frames.first().map_or(0, Vec::len);
        let ds = Self {
            cameras,
            frames,
            fps,
            train_frame_count,
            extrapolate_frame_count: total.saturating_sub(train_frame_count),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_synthetic(syn: &Synthetic, recipe: &SceneRecipe) -> Result<Self> {
        Self::new(syn.cameras.clone(), syn.images.clone(), recipe.fps, recipe.train_frames)
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let manifest = Manifest::read(dir)?;
        let cameras = manifest
            .cameras
            .iter()
            .map(|rel| read_camera(&dir.join(rel)))
            .collect::<Result<Vec<_>>>()?;
        let total = manifest.train_frames + manifest.extrapolate_frames;
        let frames = (0..cameras.len())
            .map(|c| {
                (0..total)
                    .map(|f| RenderedImage::read_png(&dir.join(manifest.frame_path(c, f))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self::new(cameras, frames, manifest.recipe.fps, manifest.train_frames)?;
        Ok((ds, manifest))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.frames.len() || self.cameras.is_empty() {
            return Err(Error::Config("one image sequence per camera is required".into()));
        }
        let total = self.frames[0].len();
        if total == 0 || self.train_frame_count == 0 || self.train_frame_count > total {
            return Err(Error::Config(format!("bad frame split {}/{}", self.train_frame_count, total)));
        }
        let size = self.frames[0][0].size();
        for (cam, seq) in self.cameras.iter().zip(&self.frames) {
            if seq.len() != total {
                return Err(Error::Config("frame counts differ across cameras".into()));
            }
            if (cam.width, cam.height) != size || seq.iter().any(|img| img.size() != size) {
                return Err(Error::Config("images must share one resolution".into()));
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.train_frame_count + self.extrapolate_frame_count
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    pub fn size(&self) -> (usize, usize) {
        self.frames[0][0].size()
    }
}

/// Every path the manifest refers to, relative to `dir`.
pub fn manifest_files(manifest: &Manifest, dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = manifest.cameras.iter().map(|c| dir.join(c)).collect();
    out.push(dir.join(&manifest.canonical));
    for c in 0..manifest.cameras.len() {
        for f in 0..manifest.train_frames + manifest.extrapolate_frames {
            out.push(dir.join(manifest.frame_path(c, f)));
        }
    }
    out
}
