//! Command-line front end for the `warpstab` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::frame::FrameSequence;
use crate::io::{read_frame_dir, write_frame_dir, write_json, write_sidecar, FrameFormat};
use crate::metrics::{evaluate, EvaluateConfig, MetricsReport, Pairing, StabilityConfig};
use crate::network::{init_tunet_weights, run_net_check, NetCheckReport, NetworkConfig, WeightStore};
use crate::stabilizer::{
    stabilize_with_report, ClassicalPredictor, CropMode, IdentityPredictor, SlidingWindowConfig, StabilizerConfig, TunetPredictor,
    WarpPredictor,
};
use crate::synth::{CameraPath, JitterModel, Scene, SceneConfig, Texture};

/// GPU throughput published for the trained network, reported beside the
/// measured figure for context only.
pub const REFERENCE_GPU_FPS: f64 = 152.0;

/// Frame size used for evaluation with `--paper-size`, as (height, width).
pub const EVAL_SIZE: (usize, usize) = (360, 640);

#[derive(Debug, Parser)]
#[command(name = "warpstab", version, about = "Online video stabilization on frame directories")]
pub struct Cli {
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    pub serial: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene with and without camera shake.
    Synth(SynthArgs),
    /// Stabilize a frame directory.
    Stabilize(StabilizeArgs),
    /// Score a stabilized directory against its input.
    Evaluate(EvaluateArgs),
    /// Run the network invariant suite.
    NetCheck(NetCheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TextureArg {
    Sprites,
    Gradient,
    Checker,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PathArg {
    Static,
    Linear,
    Sine,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Png,
    Ppm,
}

impl From<FormatArg> for FrameFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Png => FrameFormat::Png,
            FormatArg::Ppm => FrameFormat::Ppm,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `stable/`, `shaken/` and `transforms.txt`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TextureArg::Sprites)]
    pub texture: TextureArg,
    #[arg(long, value_enum, default_value_t = PathArg::Static)]
    pub path: PathArg,
    /// Pan speed in px/frame (linear) or amplitude in px (sine).
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long, default_value_t = 4.0)]
    pub trans_sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub rot_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub scale_sigma: f64,
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    /// Jitter seed; defaults to `--seed`.
    #[arg(long)]
    pub jitter_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    pub format: FormatArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Identity,
    Classical,
    Tunet,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CropArg {
    Global,
    Online,
    Off,
}

impl From<CropArg> for CropMode {
    fn from(c: CropArg) -> Self {
        match c {
            CropArg::Global => CropMode::Global,
            CropArg::Online => CropMode::Online,
            CropArg::Off => CropMode::Off,
        }
    }
}

#[derive(Debug, Args)]
pub struct StabilizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictorArg::Classical)]
    pub predictor: PredictorArg,
    /// Look-ahead in frames; the network predictor defaults to its own.
    #[arg(long)]
    pub theta: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub proc_height: usize,
    #[arg(long, default_value_t = 256)]
    pub proc_width: usize,
    #[arg(long, value_enum, default_value_t = CropArg::Global)]
    pub crop: CropArg,
    /// Gaussian sigma of the classical predictor, in frames.
    #[arg(long, default_value_t = 8.0)]
    pub sigma: f64,
    /// Network weights file; without it, weights are initialized from `--weight-seed`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Network config TOML; defaults to the desk-scale config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub weight_seed: u64,
    /// JSON run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    pub format: FormatArg,
    /// Suppress per-frame diagnostic records.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PairingArg {
    InputOutput,
    Consecutive,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub stabilized: PathBuf,
    /// JSON report path; the report is also printed to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Resize both sequences to 640x360 first.
    #[arg(long)]
    pub paper_size: bool,
    #[arg(long, value_enum, default_value_t = PairingArg::InputOutput)]
    pub pairing: PairingArg,
    #[arg(long, default_value_t = 1)]
    pub band_lo: usize,
    #[arg(long, default_value_t = 5)]
    pub band_hi: usize,
}

#[derive(Debug, Args)]
pub struct NetCheckArgs {
    /// Use the full-size configuration.
    #[arg(long)]
    pub full: bool,
    /// Network config TOML; overrides `--full`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// What a command produced; `success` decides the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub success: bool,
    pub summary: serde_json::Value,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if cli.serial {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cli.command))
    } else {
        dispatch(cli.command)
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Stabilize(a) => cmd_stabilize(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::NetCheck(a) => cmd_net_check(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Outcome> {
    let texture = match a.texture {
        TextureArg::Sprites => Texture::Sprites,
        TextureArg::Gradient => Texture::GradientNoise,
        TextureArg::Checker => Texture::Checker { cell: 12 },
    };
    let path = match a.path {
        PathArg::Static => CameraPath::Static,
        PathArg::Linear => CameraPath::Linear { vx: a.speed, vy: 0.0 },
        PathArg::Sine => CameraPath::Sinusoidal {
            amp_x: a.speed,
            amp_y: 0.5 * a.speed,
            period: 32.0,
        },
    };
    let scene = Scene::new(SceneConfig {
        height: a.height,
        width: a.width,
        texture,
        path,
        frames: a.frames,
        seed: a.seed,
        ..Default::default()
    })?;
    let model = JitterModel {
        trans_sigma: a.trans_sigma,
        rot_sigma: a.rot_sigma,
        scale_sigma: a.scale_sigma,
        rho: a.rho,
        seed: a.jitter_seed.unwrap_or(a.seed),
    };
    let clip = scene.render_shaken(&model)?;
    let fmt = FrameFormat::from(a.format);
    write_frame_dir(&clip.stable, &a.out.join("stable"), fmt)?;
    write_frame_dir(&clip.shaken, &a.out.join("shaken"), fmt)?;
    let sidecar = a.out.join("transforms.txt");
    write_sidecar(&clip.transforms, &sidecar)?;
    Ok(Outcome {
        success: true,
        summary: json!({
            "command": "synth",
            "frames": a.frames,
            "height": a.height,
            "width": a.width,
            "seed": a.seed,
            "stable_dir": a.out.join("stable"),
            "shaken_dir": a.out.join("shaken"),
            "transforms": sidecar,
        }),
    })
}

fn load_network_config(path: Option<&Path>, full: bool) -> Result<NetworkConfig> {
    match path {
        Some(p) => NetworkConfig::load(p),
        None if full => Ok(NetworkConfig::full()),
        None => Ok(NetworkConfig::desk()),
    }
}

fn load_weights(path: &Path) -> Result<WeightStore> {
    WeightStore::load(path).map_err(|e| match e {
        Error::WeightFormat(m) => Error::WeightFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn weights_mismatch(e: Error, path: Option<&Path>) -> Error {
    match e {
        Error::ShapeMismatch { .. } | Error::MissingParameter(_) | Error::WeightFormat(_) => Error::Config(format!(
            "weights {} do not match the network config: {e}",
            path.map_or("(seeded)".to_string(), |p| p.display().to_string())
        )),
        other => other,
    }
}

#[derive(Serialize)]
struct StabilizeSummary<'a> {
    command: &'static str,
    predictor: &'a str,
    frames: usize,
    height: usize,
    width: usize,
    config: StabilizerConfig,
    timings: &'a crate::stabilizer::Timings,
    fps: f64,
    reference_gpu_fps: f64,
    crop_area_min: f64,
}

pub fn cmd_stabilize(a: &StabilizeArgs) -> Result<Outcome> {
    let seq = read_frame_dir(&a.input)?;
    let mut theta = a.theta.unwrap_or(15);
    let predictor: Box<dyn WarpPredictor> = match a.predictor {
        PredictorArg::Identity => Box::new(IdentityPredictor),
        PredictorArg::Classical => Box::new(ClassicalPredictor::new(a.sigma, Default::default())),
        PredictorArg::Tunet => {
            let cfg = load_network_config(a.config.as_deref(), false)?.tunet;
            let weights = match &a.weights {
                Some(p) => load_weights(p)?,
                None => init_tunet_weights(&cfg, a.weight_seed)?,
            };
            theta = a.theta.unwrap_or(cfg.delta_t);
            Box::new(TunetPredictor::new(cfg, Arc::new(weights)).map_err(|e| weights_mismatch(e, a.weights.as_deref()))?)
        }
    };
    let cfg = StabilizerConfig {
        window: SlidingWindowConfig {
            theta,
            proc_height: a.proc_height,
            proc_width: a.proc_width,
        },
        crop: a.crop.into(),
    };
    let report = stabilize_with_report(&seq, predictor.as_ref(), &cfg)?;
    if !a.quiet {
        for d in &report.diagnostics {
            eprintln!("{}", serde_json::to_string(d).expect("diagnostics serialize"));
        }
    }
    write_frame_dir(&report.frames, &a.output, a.format.into())?;
    let (h, w) = seq.dims();
    let summary = StabilizeSummary {
        command: "stabilize",
        predictor: predictor.name(),
        frames: seq.len(),
        height: h,
        width: w,
        config: cfg,
        timings: &report.timings,
        fps: report.timings.fps(seq.len()),
        reference_gpu_fps: REFERENCE_GPU_FPS,
        crop_area_min: report.regions.iter().map(|r| r.area_fraction()).fold(f64::INFINITY, f64::min),
    };
    let summary = serde_json::to_value(&summary).expect("summary serializes");
    eprintln!("{summary}");
    if let Some(p) = &a.report {
        write_json(
            &json!({
                "summary": summary,
                "regions": report.regions,
                "diagnostics": report.diagnostics,
            }),
            p,
        )?;
    }
    Ok(Outcome { success: true, summary })
}

/// Read, optionally resize, and score two directories.
pub fn evaluate_dirs(a: &EvaluateArgs) -> Result<MetricsReport> {
    let load = |p: &Path| -> Result<FrameSequence> {
        let s = read_frame_dir(p)?;
        if a.paper_size {
            s.resize(EVAL_SIZE.0, EVAL_SIZE.1)
        } else {
            Ok(s)
        }
    };
    let original = load(&a.original)?;
    let stabilized = load(&a.stabilized)?;
    if original.len() != stabilized.len() {
        return Err(Error::invalid(format!(
            "{} has {} frames but {} has {}",
            a.original.display(),
            original.len(),
            a.stabilized.display(),
            stabilized.len()
        )));
    }
    let cfg = EvaluateConfig {
        pairing: match a.pairing {
            PairingArg::InputOutput => Pairing::InputOutput,
            PairingArg::Consecutive => Pairing::Consecutive,
        },
        stability: StabilityConfig {
            band_lo: a.band_lo,
            band_hi: a.band_hi,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.stability.validate()?;
    evaluate(&original, &stabilized, &cfg)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    let r = evaluate_dirs(a)?;
    if let Some(p) = &a.report {
        write_json(&r, p)?;
    }
    Ok(Outcome {
        success: true,
        summary: json!({
            "command": "evaluate",
            "frames": r.cropping_series.len(),
            "cropping": r.cropping,
            "distortion": r.distortion,
            "stability": r.stability,
            "paper_size": a.paper_size,
        }),
    })
}

pub fn cmd_net_check(a: &NetCheckArgs) -> Result<Outcome> {
    let cfg = load_network_config(a.config.as_deref(), a.full)?;
    let weights = a.weights.as_deref().map(load_weights).transpose()?;
    let report: NetCheckReport = run_net_check(&cfg, a.seed, weights).map_err(|e| weights_mismatch(e, a.weights.as_deref()))?;
    for c in &report.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(p) = &a.report {
        write_json(&report, p)?;
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Ok(Outcome {
        success: report.passed,
        summary: json!({
            "command": "net-check",
            "input_size": report.input_size,
            "seed": report.seed,
            "passed": report.passed,
            "failed": failed,
        }),
    })
}
