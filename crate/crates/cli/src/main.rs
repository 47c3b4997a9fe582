use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gsdyn::checkpoint::Checkpoint;
use gsdyn::dataset::{generate_dataset, Dataset, Manifest, SceneKind, SceneRecipe};
use gsdyn::image::write_label_png;
use gsdyn::metrics::{read_labels, segmentation_scores, write_labels, write_metrics_csv, MetricsRow};
use gsdyn::mpm::Particles;
use gsdyn::render::render_labels;
use gsdyn::selftest::{self, Budget};
use gsdyn::train::{extrapolate, initial_scene, recovered_physics, segment, train, write_loss_csv, Model, TrainConfig};

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const LOSS_FILE: &str = "loss.csv";
const METRICS_FILE: &str = "metrics.csv";
const LABELS_FILE: &str = "labels.txt";

#[derive(Debug, Parser)]
#[command(name = "gsdyn", version, about = "Differentiable MPM over 3D Gaussian particle scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and render a synthetic dataset with known physics.
    Generate(GenerateArgs),
    /// Fit Gaussians, velocity and material fields to a dataset.
    Train(TrainArgs),
    /// Render frames past the training window and score them.
    Extrapolate(ExtrapolateArgs),
    /// Write a metrics table for a checkpoint or a label file.
    Evaluate(EvaluateArgs),
    /// Cluster particles by their learned physics signatures.
    Segment(SegmentArgs),
    /// Run the invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// static, translating_cube, falling_elastic_cube, two_materials or rotating_body.
    #[arg(long, default_value = "falling_elastic_cube", value_parser = parse_scene)]
    scene: SceneKind,
    /// Recipe TOML replacing the scene preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Total frame count; the train split keeps the 67/89 ratio.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
struct Ablation {
    /// Training config TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Motion patterns.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    no_mpm: bool,
    #[arg(long)]
    no_vfd: bool,
    #[arg(long)]
    no_ipi: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ablation: Ablation,
}

#[derive(Debug, Args)]
struct ExtrapolateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Horizon in frames; defaults to every held-out frame.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-particle labels, one per line, scored against the manifest.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Use the full sample counts.
    #[arg(long)]
    full: bool,
}

/// Bad input detected after argument parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn parse_scene(s: &str) -> std::result::Result<SceneKind, String> {
    SceneKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = SceneKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown scene {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: usize = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn scene_name(manifest: &Manifest) -> &'static str {
    manifest.recipe.kind.name()
}

fn load_data(dir: &Path) -> Result<(Dataset, Manifest)> {
    existing(dir, "dataset")?;
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    existing(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?.into_model()?)
}

fn run_generate(a: GenerateArgs) -> Result<()> {
    let mut recipe = match &a.config {
        Some(path) => {
            existing(path, "config")?;
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?
        }
        None => SceneRecipe::preset(a.scene),
    };
    if let Some(frames) = a.frames {
        recipe.frames = frames;
        let train = (frames as f64 * 67.0 / 89.0).round() as usize;
        recipe.train_frames = train.clamp(1, frames.saturating_sub(1).max(1));
    }
    if let Some((w, h)) = a.resolution {
        recipe.focal *= w as f64 / recipe.width as f64;
        recipe.width = w;
        recipe.height = h;
    }
    let t = Instant::now();
    let m = generate_dataset(&recipe, a.seed, &a.out)?;
    println!(
        "{}: {} particles, {} cameras, {} train + {} extrapolate frames at {}x{} in {:.1}s",
        scene_name(&m),
        m.labels.len(),
        m.cameras.len(),
        m.train_frames,
        m.extrapolate_frames,
        recipe.width,
        recipe.height,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_config(a: &Ablation, manifest: &Manifest) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            existing(path, "config")?;
            TrainConfig::load(path).map_err(|e| UsageError(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    cfg.adopt_environment(manifest);
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(k) = a.k {
        cfg.motion_patterns = k;
    }
    cfg.mpm &= !a.no_mpm;
    cfg.vfd &= !a.no_vfd;
    cfg.ipi &= !a.no_ipi;
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Result<()> {
    if let Some(path) = &a.ablation.config {
        existing(path, "config")?;
    }
    let (data, manifest) = load_data(&a.data)?;
    let cfg = train_config(&a.ablation, &manifest)?;
    let canonical = Particles::read_snapshot(&a.data.join(&manifest.canonical))?;
    let scene = initial_scene(&manifest, &canonical, &cfg)?;
    let mut model = Model::new(&cfg, &scene)?;
    let t = Instant::now();
    let report = train(&mut model, &data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    Checkpoint::from_model(&model)?.save(&a.out.join(CHECKPOINT_FILE))?;
    write_loss_csv(&a.out.join(LOSS_FILE), &report.history)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    let (v0, e) = recovered_physics(&model)?;
    let last = report.history.last();
    println!(
        "trained {} iterations ({}) in {:.1}s; final loss {:.5}, psnr {:.2} dB",
        report.history.len(),
        cfg.pathway(),
        t.elapsed().as_secs_f64(),
        last.map_or(f64::NAN, |r| r.loss),
        last.map_or(f64::NAN, |r| r.psnr)
    );
    println!("recovered v0 ({:.4}, {:.4}, {:.4}), E {e:.1}", v0.x, v0.y, v0.z);
    if !report.dead_parameters.is_empty() {
        println!("parameters without gradient: {}", report.dead_parameters.join(", "));
    }
    Ok(())
}

fn run_extrapolate(a: ExtrapolateArgs) -> Result<()> {
    let (data, manifest) = load_data(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    let horizon = a.frames.unwrap_or(data.extrapolate_frame_count);
    let ex = extrapolate(&model, &data, horizon)?;
    for (c, seq) in ex.images.iter().enumerate() {
        for (k, img) in seq.iter().enumerate() {
            let path = a.out.join(manifest.frame_path(c, ex.first_frame + k));
            fs::create_dir_all(path.parent().expect("frame path has a parent"))?;
            img.write_png(&path)?;
        }
    }
    let scene = scene_name(&manifest);
    let mut rows = vec![MetricsRow {
        scene: scene.into(),
        task: "extrapolation".into(),
        psnr: Some(ex.mean_psnr()),
        ssim: Some(ex.mean_ssim()),
        ..Default::default()
    }];
    rows.extend(ex.scores.iter().map(|s| MetricsRow {
        scene: scene.into(),
        task: format!("frame_{:03}", s.frame),
        psnr: Some(s.psnr),
        ssim: Some(s.ssim),
        ..Default::default()
    }));
    write_metrics_csv(&a.out.join(METRICS_FILE), &rows)?;
    println!(
        "{} frames from frame {}: psnr {:.3} dB, ssim {:.4}",
        ex.scores.len(),
        ex.first_frame,
        ex.mean_psnr(),
        ex.mean_ssim()
    );
    Ok(())
}

fn segmentation_row(scene: &str, pred: &[usize], manifest: &Manifest) -> Result<MetricsRow> {
    let gt: Vec<usize> = manifest.labels.iter().map(|&l| l as usize).collect();
    if pred.len() != gt.len() {
        bail!(UsageError(format!("{} labels for {} particles", pred.len(), gt.len())));
    }
    let s = segmentation_scores(pred, &gt)?;
    Ok(MetricsRow {
        scene: scene.into(),
        task: "segmentation".into(),
        miou: Some(s.miou),
        f1: Some(s.f1),
        precision: Some(s.precision),
        recall: Some(s.recall),
        ..Default::default()
    })
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    if a.checkpoint.is_none() && a.labels.is_none() {
        bail!(UsageError("evaluate needs --checkpoint or --labels".into()));
    }
    let (data, manifest) = load_data(&a.data)?;
    let scene = scene_name(&manifest);
    let mut rows = Vec::new();
    if let Some(path) = &a.checkpoint {
        let model = load_model(path)?;
        let ex = extrapolate(&model, &data, data.extrapolate_frame_count)?;
        rows.push(MetricsRow {
            scene: scene.into(),
            task: "extrapolation".into(),
            psnr: Some(ex.mean_psnr()),
            ssim: Some(ex.mean_ssim()),
            ..Default::default()
        });
        let km = segment(&model, &data, a.clusters, model.config.seed)?;
        rows.push(segmentation_row(scene, &km.labels, &manifest)?);
    }
    if let Some(path) = &a.labels {
        existing(path, "labels")?;
        rows.push(segmentation_row(scene, &read_labels(path)?, &manifest)?);
    }
    fs::create_dir_all(&a.out)?;
    write_metrics_csv(&a.out.join(METRICS_FILE), &rows)?;
    for r in &rows {
        println!("{}", r.to_csv());
    }
    Ok(())
}

fn run_segment(a: SegmentArgs) -> Result<()> {
    let (data, manifest) = load_data(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    if a.clusters == 0 || a.clusters > model.len() {
        bail!(UsageError(format!("--clusters must be in 1..={}", model.len())));
    }
    let km = segment(&model, &data, a.clusters, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_labels(&a.out.join(LABELS_FILE), &km.labels)?;
    let scene = model.scene()?;
    let ids: Vec<u8> = km.labels.iter().map(|&l| (l + 1) as u8).collect();
    for (c, cam) in data.cameras.iter().enumerate() {
        let mask = render_labels(&scene, cam, None, &ids, 0)?;
        write_label_png(&a.out.join(format!("labels_cam_{c:02}.png")), cam.width, cam.height, &mask)?;
    }
    let row = segmentation_row(scene_name(&manifest), &km.labels, &manifest)?;
    write_metrics_csv(&a.out.join(METRICS_FILE), std::slice::from_ref(&row))?;
    let sizes: BTreeSet<(usize, usize)> = (0..a.clusters)
        .map(|c| (c, km.labels.iter().filter(|&&l| l == c).count()))
        .collect();
    println!("cluster sizes {sizes:?}; {}", row.to_csv());
    Ok(())
}

fn run_selftest(a: SelftestArgs) -> Result<ExitCode> {
    let budget = if a.full { Budget::full() } else { Budget::quick() };
    let outcomes = selftest::run(&budget);
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} properties hold", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => run_generate(a)?,
        Command::Train(a) => run_train(a)?,
        Command::Extrapolate(a) => run_extrapolate(a)?,
        Command::Evaluate(a) => run_evaluate(a)?,
        Command::Segment(a) => run_segment(a)?,
        Command::Selftest(a) => return run_selftest(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_parsing() {
        assert_eq!(parse_resolution("64x48"), Ok((64, 48)));
        assert!(parse_resolution("64").is_err());
        assert!(parse_resolution("0x4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
