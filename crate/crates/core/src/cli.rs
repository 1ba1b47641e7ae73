//! Command-line entry point: one subcommand per pipeline stage, a run
//! manifest per invocation and a fixed exit-code contract.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    load_dataset, simulate_events_with, synthesize_blur, write_dataset, CameraModel, FrameSequence, SceneScript, SimulatorConfig,
};
use crate::disentangle::{disentangle_scene, DisentangleConfig, SceneDecomposition};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::render::{dump_layers, render, Overlap, OverlapField};
use crate::scene::GaussianScene;
use crate::track::{track_all, TrackConfig, Trajectory};
use crate::train::{evaluate, overlap_for, split_frames, train, TrainConfig, TrainMode, OVERLAP_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const DATA_MANIFEST: &str = "manifest.json";
pub const TRAIN_CONFIG: &str = "train_config.json";

#[derive(Parser, Debug)]
#[command(
    name = "stdgs",
    version,
    about = "Spatiotemporal-disentangled Gaussian splatting from frames and events"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Overrides every stage's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a scene script into frames, events and ground-truth masks.
    Simulate(SimulateArgs),
    /// Separate background and objects.
    Disentangle(DisentangleArgs),
    /// Track each object through the event stream.
    Track(TrackArgs),
    /// Optimize the Gaussian scene.
    Train(TrainArgs),
    /// Render a trained scene at a pose and time.
    Render(RenderArgs),
    /// Report PSNR and SSIM of a trained scene on held-out frames.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    pub contrast: f64,
    /// Sub-frames averaged into each blurred frame; 1 disables blur.
    #[arg(long, default_value_t = 8)]
    pub blur_window: usize,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub subfps: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub refractory_us: u64,
}

#[derive(Args, Debug)]
pub struct DisentangleArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to `<data>/decomp`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON with any subset of the configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub superpixels: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub decomp: PathBuf,
    /// Defaults to `<data>/tracks`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub step_ms: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub decomp: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train one undisentangled Gaussian set under the reconstruction loss.
    #[arg(long)]
    pub unified_baseline: bool,
    /// Blend the two layers with a fixed overlap probability instead of the
    /// learned field.
    #[arg(long, conflicts_with = "unified_baseline")]
    pub fixed_overlap: Option<f64>,
    #[arg(long)]
    pub phase1_iters: Option<usize>,
    #[arg(long)]
    pub phase2_iters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Checkpoint directory or its `scene.json`.
    #[arg(long)]
    pub scene: PathBuf,
    /// JSON `{width, height, camera}`.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub time_us: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dump_layers: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training output directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluate every frame instead of the held-out ones.
    #[arg(long)]
    pub all: bool,
    /// Defaults to `<model>/metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// View to render: image size plus camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub width: usize,
    pub height: usize,
    pub camera: CameraModel,
}

/// Provenance record written next to every stage's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub stage: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub per_frame: Vec<FrameMetric>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub timestamp_us: u64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Maps a library error onto the exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Data { .. } | Error::Io { .. } => EXIT_DATA,
        Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

/// Parses `argv` (program name first), runs the stage and returns the exit
/// code. Usage errors print clap's message to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return EXIT_USAGE;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let (stage, manifest_path, config, inputs, outputs) = match &cli.command {
        Command::Simulate(a) => simulate(cli, a)?,
        Command::Disentangle(a) => disentangle(cli, a)?,
        Command::Track(a) => track(a)?,
        Command::Train(a) => train_stage(cli, a)?,
        Command::Render(a) => render_stage(a)?,
        Command::Eval(a) => eval_stage(a)?,
    };
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        stage: stage.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cli.seed.or_else(|| config.get("seed").and_then(serde_json::Value::as_u64)),
        threads: cli.threads,
        config,
        inputs: paths(inputs),
        outputs: paths(outputs),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    write_json(&manifest_path, &manifest)
}

type StageResult = (
    &'static str,
    PathBuf,
    serde_json::Value,
    Vec<(&'static str, PathBuf)>,
    Vec<(&'static str, PathBuf)>,
);

fn paths(v: Vec<(&'static str, PathBuf)>) -> BTreeMap<String, String> {
    v.into_iter().map(|(k, p)| (k.to_string(), p.display().to_string())).collect()
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn require_dir(p: &Path, flag: &str) -> Result<()> {
    if !p.is_dir() {
        return Err(Error::data(p, None, format!("{flag}: not a directory")));
    }
    Ok(())
}

fn load_data(dir: &Path) -> Result<(FrameSequence, crate::dataio::EventStream)> {
    require_dir(dir, "--data")?;
    load_dataset(&dir.join(DATA_MANIFEST))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<StageResult> {
    let mut script: SceneScript = read_json(&a.script)?;
    if let Some(f) = a.fps {
        script.fps = f;
    }
    if let Some(f) = a.subfps {
        script.subfps = f;
    }
    script.validate()?;
    if !(a.contrast > 0.0) {
        return Err(Error::invalid("--contrast must be positive"));
    }
    let sim = SimulatorConfig::new(a.contrast, a.refractory_us);
    let frames = script.sharp_frames()?;
    let stream = simulate_events_with(&script, &sim)?;
    let manifest = write_dataset(&a.out, &frames, &stream, DATA_MANIFEST, "frames")?;
    let mut outputs = vec![("manifest", manifest), ("events", a.out.join("events.txt"))];
    if a.blur_window > 1 {
        let blurred = synthesize_blur(&script, &frames, a.blur_window)?;
        outputs.push((
            "manifest_blur",
            write_dataset(&a.out, &blurred, &stream, "manifest_blur.json", "frames_blur")?,
        ));
    }
    let gt = SceneDecomposition::from_masks(script.width, script.height, frames.timestamps(), script.gt_masks())?;
    gt.write(&a.out.join("gt"))?;
    write_json(&a.out.join("script.json"), &script)?;
    outputs.push(("ground_truth", a.out.join("gt")));
    log::info!("simulate: {} frames, {} events", frames.len(), stream.events.len());
    let config = serde_json::json!({
        "script": script,
        "contrast": a.contrast,
        "blur_window": a.blur_window,
        "refractory_us": a.refractory_us,
        "seed": cli.seed,
    });
    Ok((
        "simulate",
        a.out.join(RUN_MANIFEST),
        config,
        vec![("script", a.script.clone())],
        outputs,
    ))
}

fn disentangle(cli: &Cli, a: &DisentangleArgs) -> Result<StageResult> {
    let mut cfg: DisentangleConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.superpixels {
        cfg.superpixels = v;
    }
    if let Some(v) = a.bins {
        cfg.bins = v;
    }
    if let Some(v) = a.clusters {
        cfg.clusters = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let (frames, stream) = load_data(&a.data)?;
    let decomp = disentangle_scene(&frames, &stream, &cfg)?;
    let out = a.out.clone().unwrap_or_else(|| a.data.join("decomp"));
    decomp.write(&out)?;
    for w in &decomp.warnings {
        log::warn!("disentangle: {w}");
    }
    log::info!("disentangle: {} objects", decomp.num_objects());
    Ok((
        "disentangle",
        out.join(RUN_MANIFEST),
        to_value(&cfg),
        vec![("data", a.data.clone())],
        vec![("decomposition", out)],
    ))
}

fn track(a: &TrackArgs) -> Result<StageResult> {
    let mut cfg: TrackConfig = load_config(a.config.as_deref())?;
    if let Some(ms) = a.step_ms {
        if !(ms > 0.0) {
            return Err(Error::invalid("--step-ms must be positive"));
        }
        cfg.step_us = (ms * 1000.0).round() as u64;
    }
    let (_, stream) = load_data(&a.data)?;
    require_dir(&a.decomp, "--decomp")?;
    let decomp = SceneDecomposition::read(&a.decomp)?;
    let trajectories = track_all(&stream, &decomp, &cfg)?;
    let out = a.out.clone().unwrap_or_else(|| a.data.join("tracks"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for t in &trajectories {
        t.write(&out)?;
    }
    log::info!("track: {} trajectories", trajectories.len());
    Ok((
        "track",
        out.join(RUN_MANIFEST),
        to_value(&cfg),
        vec![("data", a.data.clone()), ("decomposition", a.decomp.clone())],
        vec![("tracks", out)],
    ))
}

/// Every trajectory file in `dir`, ordered by file name.
pub fn read_trajectories(dir: &Path) -> Result<Vec<Trajectory>> {
    require_dir(dir, "--tracks")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trajectory_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    files.iter().map(|p| Trajectory::read(p)).collect()
}

fn train_stage(cli: &Cli, a: &TrainArgs) -> Result<StageResult> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    if a.unified_baseline {
        cfg.mode = TrainMode::Unified;
    }
    if let Some(r) = a.fixed_overlap {
        cfg.mode = TrainMode::Disentangle;
        cfg.fixed_rho = r;
    }
    if let Some(n) = a.phase1_iters {
        cfg.phase1_iters = n;
    }
    if let Some(n) = a.phase2_iters {
        cfg.phase2_iters = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (frames, stream) = load_data(&a.data)?;
    require_dir(&a.decomp, "--decomp")?;
    let decomp = SceneDecomposition::read(&a.decomp)?;
    let trajectories = if cfg.mode == TrainMode::Unified {
        Vec::new()
    } else {
        read_trajectories(&a.tracks)?
    };
    let out = train(&frames, &stream, &decomp, &trajectories, &cfg, Some(&a.out))?;
    out.write(&a.out)?;
    write_json(&a.out.join(TRAIN_CONFIG), &cfg)?;
    if let Some(e) = out.report.evals.last() {
        log::info!("train: held-out PSNR {:.2} dB, SSIM {:.4}", e.psnr, e.ssim);
    }
    Ok((
        "train",
        a.out.join(RUN_MANIFEST),
        to_value(&cfg),
        vec![
            ("data", a.data.clone()),
            ("decomposition", a.decomp.clone()),
            ("tracks", a.tracks.clone()),
        ],
        vec![("checkpoint", a.out.clone())],
    ))
}

/// Overlap source stored with a checkpoint: the training mode when the
/// config is present, otherwise the saved field, otherwise background only.
fn load_overlap(dir: &Path) -> Result<(Option<TrainConfig>, Option<OverlapField>)> {
    let cfg_path = dir.join(TRAIN_CONFIG);
    let cfg = if cfg_path.is_file() {
        Some(read_json::<TrainConfig>(&cfg_path)?)
    } else {
        None
    };
    let field_path = dir.join(OVERLAP_FILE);
    let field = if field_path.is_file() {
        Some(read_json::<OverlapField>(&field_path)?)
    } else {
        None
    };
    Ok((cfg, field))
}

fn overlap_of<'a>(cfg: &Option<TrainConfig>, field: &'a Option<OverlapField>) -> Overlap<'a> {
    match (cfg, field) {
        (Some(c), Some(f)) => overlap_for(c, f),
        (Some(c), None) if c.mode == TrainMode::Disentangle => Overlap::Constant(c.fixed_rho),
        (None, Some(f)) => Overlap::Field(f),
        _ => Overlap::Constant(0.0),
    }
}

fn checkpoint_dir(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.to_path_buf()
    } else {
        p.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn render_stage(a: &RenderArgs) -> Result<StageResult> {
    let scene = GaussianScene::read_checkpoint(&a.scene)?;
    let pose: Pose = read_json(&a.pose)?;
    pose.camera.validate()?;
    if pose.width == 0 || pose.height == 0 {
        return Err(Error::data(&a.pose, None, "pose width and height must be positive"));
    }
    if !a.time_us.is_finite() {
        return Err(Error::invalid("--time-us must be finite"));
    }
    let (cfg, field) = load_overlap(&checkpoint_dir(&a.scene))?;
    let rcfg = cfg.as_ref().map(|c| c.render.clone()).unwrap_or_default();
    let out = render(
        &scene,
        &pose.camera,
        pose.width,
        pose.height,
        a.time_us,
        overlap_of(&cfg, &field),
        &rcfg,
    );
    out.image.write_png(&a.out)?;
    let mut outputs = vec![("image", a.out.clone())];
    if let Some(d) = &a.dump_layers {
        dump_layers(&out, d)?;
        outputs.push(("layers", d.clone()));
    }
    let manifest = a.out.with_extension("run_manifest.json");
    Ok((
        "render",
        manifest,
        serde_json::json!({ "time_us": a.time_us, "pose": pose, "render": rcfg }),
        vec![("scene", a.scene.clone()), ("pose", a.pose.clone())],
        outputs,
    ))
}

fn eval_stage(a: &EvalArgs) -> Result<StageResult> {
    let (frames, _) = load_data(&a.data)?;
    require_dir(&a.model, "--model")?;
    let scene = GaussianScene::read_checkpoint(&a.model)?;
    let (cfg, field) = load_overlap(&a.model)?;
    let holdout = cfg.as_ref().map_or(0, |c| c.holdout_every);
    let idx = if a.all {
        (0..frames.len()).collect()
    } else {
        split_frames(frames.len(), holdout).1
    };
    if idx.is_empty() {
        return Err(Error::invalid("no held-out frames; pass --all to evaluate every frame"));
    }
    let rcfg = cfg.as_ref().map(|c| c.render.clone()).unwrap_or_default();
    let m = evaluate(&scene, overlap_of(&cfg, &field), &frames.subset(&idx), &rcfg)?;
    let report = EvalReport {
        frames: idx.len(),
        psnr: m.psnr,
        ssim: m.ssim,
        per_frame: m
            .per_frame
            .iter()
            .map(|&(t, p, s)| FrameMetric {
                timestamp_us: t,
                psnr: p,
                ssim: s,
            })
            .collect(),
    };
    let out = a.out.clone().unwrap_or_else(|| a.model.join("metrics.json"));
    write_json(&out, &report)?;
    println!("PSNR {:.3} dB  SSIM {:.4}  ({} frames)", m.psnr, m.ssim, idx.len());
    Ok((
        "eval",
        out.with_extension("run_manifest.json"),
        serde_json::json!({ "all": a.all, "render": rcfg }),
        vec![("data", a.data.clone()), ("model", a.model.clone())],
        vec![("metrics", out)],
    ))
}
