//! The `formloop` command line. Every subcommand resolves a [`RunConfig`]
//! from defaults, `--config`, `--set` and its own flags (in that order), runs
//! offline or against `--server`, and writes its artifacts plus a
//! `manifest.json` under `--out`.

pub mod config;
pub mod manifest;

mod commands;
mod repro;

use clap::{Args, Parser, Subcommand};
use config::{parse_override, ConfigError, RunConfig};
use serde_json::{json, Value};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] formloop_core::Error),
    #[error(transparent)]
    Client(#[from] formloop_client::ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    serde_json::Error,
    formloop_core::se3::Se3Error,
    formloop_core::camera::CameraError,
    formloop_core::ingest::IngestError,
    formloop_core::scene::SceneError,
    formloop_core::pipeline::TrackError,
    formloop_core::bench::BenchError,
    formloop_core::wind::WindError,
    formloop_core::render::RenderError
);

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Client(_) => "service",
            CliError::Io(_) => "io",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// The structured form printed on stderr.
    pub fn to_json(&self) -> Value {
        json!({"error": self.kind(), "message": self.to_string()})
    }
}

#[derive(Debug, Parser)]
#[command(name = "formloop", version, about = "Block tracking, error studies and wind overlays")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config value by dotted key, e.g. `tracker.refinement_passes=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Base URL of a running service; track, study and wind run there.
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop and normalize a PLY point cloud to the unit sphere.
    Normalize(NormalizeArgs),
    /// Generate a scene, ground truth and an observation log.
    Synth(SynthArgs),
    /// Track blocks through an observation log.
    Track(TrackArgs),
    /// Monte Carlo error-amplification study.
    Study(StudyArgs),
    /// Solve steady wind around a scene.
    Wind(WindArgs),
    /// Render frames with tracked wireframes and an optional wind overlay.
    Overlay(OverlayArgs),
    /// Fixed camera; blocks placed one after another, occlusions held.
    #[command(name = "repro-exp1")]
    ReproExp1,
    /// Moving camera; occluded blue inferred from anchors, wind overlaid.
    #[command(name = "repro-exp2")]
    ReproExp2,
    /// Run the HTTP service.
    Serve(ServeArgs),
}

fn parse_crop(s: &str) -> Result<[f64; 6], String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 6 values, got {}", v.len()))
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Input PLY file.
    pub input: PathBuf,
    /// Crop box `minx,miny,minz,maxx,maxy,maxz` applied before normalizing.
    #[arg(long, value_parser = parse_crop, allow_hyphen_values = true)]
    pub crop: Option<[f64; 6]>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub blocks: Option<usize>,
    /// row, stack or random.
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// orbit or fixed.
    #[arg(long)]
    pub camera: Option<String>,
    /// Rotation noise magnitude, degrees.
    #[arg(long)]
    pub rot_noise_deg: Option<f64>,
    /// Per-axis translation noise, meters.
    #[arg(long)]
    pub trans_noise: Option<f64>,
    #[arg(long)]
    pub prior_coupling: Option<f64>,
    /// `BLOCK:START-END`, inclusive; repeatable.
    #[arg(long = "occlude", value_name = "BLOCK:START-END")]
    pub occlude: Vec<String>,
    #[arg(long)]
    pub geometric_occlusion: bool,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Observation log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
    /// Ground truth from `synth`; enables metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub passes: Option<usize>,
    /// fixed_camera or moving_camera.
    #[arg(long)]
    pub mode: Option<String>,
    /// `nearest` or `fixed_id:<block>`.
    #[arg(long)]
    pub anchor: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub sigma_deg: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// perpendicular or isotropic.
    #[arg(long)]
    pub axis_model: Option<String>,
}

#[derive(Debug, Args)]
pub struct WindArgs {
    /// Scene JSON, or a ground-truth file from `synth`; default tabletop when absent.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Ground truth from `synth` (scene and camera path).
    #[arg(long)]
    pub truth: PathBuf,
    /// Tracked trajectories; ground-truth poses are drawn when absent.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Binary field export; its sidecar must sit next to it with a `.json` extension.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    /// Session snapshot loaded at startup and written on shutdown.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Normalize(_) => "normalize",
            Command::Synth(_) => "synth",
            Command::Track(_) => "track",
            Command::Study(_) => "study",
            Command::Wind(_) => "wind",
            Command::Overlay(_) => "overlay",
            Command::ReproExp1 => "repro-exp1",
            Command::ReproExp2 => "repro-exp2",
            Command::Serve(_) => "serve",
        }
    }

    fn supports_server(&self) -> bool {
        matches!(self, Command::Track(_) | Command::Study(_) | Command::Wind(_))
    }

    /// Typed flags as config overrides.
    fn overrides(&self) -> Result<Vec<(String, Value)>, CliError> {
        let mut o: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Value| o.push((k.to_string(), v));
        match self {
            Command::Normalize(a) => {
                if let Some(c) = &a.crop {
                    put("normalize.crop", json!({"min": &c[..3], "max": &c[3..]}));
                }
            }
            Command::Synth(a) => {
                if let Some(v) = a.blocks {
                    put("synth.blocks", json!(v));
                }
                if let Some(v) = &a.layout {
                    put("synth.layout", json!(v));
                }
                if let Some(v) = a.frames {
                    put("synth.orbit.frames", json!(v));
                }
                if let Some(v) = &a.camera {
                    put("synth.camera", json!(v));
                }
                if let Some(v) = a.rot_noise_deg {
                    put("synth.noise.rot_sigma", json!(v.to_radians()));
                }
                if let Some(v) = a.trans_noise {
                    put("synth.noise.trans_sigma", json!(v));
                }
                if let Some(v) = a.prior_coupling {
                    put("synth.noise.prior_coupling", json!(v));
                }
                if !a.occlude.is_empty() {
                    let intervals = a.occlude.iter().map(|s| parse_occlusion(s)).collect::<Result<Vec<_>, _>>()?;
                    put("synth.occlusion", Value::Array(intervals));
                }
                if a.geometric_occlusion {
                    put("synth.geometric_occlusion", json!(true));
                }
            }
            Command::Track(a) => {
                if let Some(v) = a.passes {
                    put("tracker.refinement_passes", json!(v));
                }
                if let Some(v) = &a.mode {
                    put("tracker.mode", json!(v));
                }
                if let Some(v) = &a.anchor {
                    let rule: formloop_core::pipeline::AnchorRule = v.parse().map_err(CliError::Usage)?;
                    put("tracker.anchor_rule", serde_json::to_value(rule)?);
                }
                if let Some(v) = a.window {
                    put("tracker.window", json!(v));
                }
            }
            Command::Study(a) => {
                if let Some(v) = a.sigma_deg {
                    put("study.sigma_deg", json!(v));
                }
                if let Some(v) = &a.distances {
                    put("study.distances", json!(v));
                }
                if let Some(v) = a.trials {
                    put("study.trials", json!(v));
                }
                if let Some(v) = &a.axis_model {
                    put("study.axis_model", json!(v));
                }
            }
            Command::Wind(a) => {
                if let Some(v) = a.nx {
                    put("wind.spec.nx", json!(v));
                }
                if let Some(v) = a.ny {
                    put("wind.spec.ny", json!(v));
                }
                if let Some(v) = a.tol {
                    put("wind.tol", json!(v));
                }
                if let Some(v) = a.max_iters {
                    put("wind.max_iters", json!(v));
                }
            }
            Command::Overlay(a) => {
                if let Some(v) = a.alpha {
                    put("render.alpha", json!(v));
                }
            }
            Command::Serve(a) => {
                if let Some(v) = &a.bind {
                    put("serve.bind", json!(v));
                }
                if let Some(v) = &a.snapshot {
                    put("serve.snapshot", json!(v));
                }
            }
            Command::ReproExp1 | Command::ReproExp2 => {}
        }
        Ok(o)
    }
}

/// `red:10-20` → `{"block_id": "red", "start": 10, "end": 20}`.
fn parse_occlusion(s: &str) -> Result<Value, CliError> {
    let bad = || CliError::Usage(format!("bad occlusion `{s}`; expected BLOCK:START-END"));
    let (block, range) = s.rsplit_once(':').ok_or_else(bad)?;
    let (a, b) = range.split_once('-').ok_or_else(bad)?;
    let start: usize = a.parse().map_err(|_| bad())?;
    let end: usize = b.parse().map_err(|_| bad())?;
    if block.is_empty() || end < start {
        return Err(bad());
    }
    Ok(json!({"block_id": block, "start": start, "end": end}))
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), json!(seed)));
        }
        overrides.extend(self.command.overrides()?);
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

/// Runs one invocation and returns its stdout summary.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let config = cli.resolve_config()?;
    if cli.server.is_some() && !cli.command.supports_server() {
        return Err(CliError::Usage(format!("--server does not apply to `{}`", cli.command.name())));
    }
    if let Command::Serve(_) = cli.command {
        commands::serve(&config)?;
        return Ok(json!({"status": "stopped"}));
    }
    let remote = cli.server.as_deref().map(formloop_client::Client::new);
    let mut out = manifest::Outputs::new(&cli.out)?;
    let summary = match &cli.command {
        Command::Normalize(a) => commands::normalize(&config, a, &mut out)?,
        Command::Synth(_) => commands::synth(&config, &mut out)?,
        Command::Track(a) => commands::track(&config, a, remote.as_ref(), &mut out)?,
        Command::Study(_) => commands::study(&config, remote.as_ref(), &mut out)?,
        Command::Wind(a) => commands::wind(&config, a, remote.as_ref(), &mut out)?,
        Command::Overlay(a) => commands::overlay(&config, a, &mut out)?,
        Command::ReproExp1 => repro::exp1(&config, &mut out)?,
        Command::ReproExp2 => repro::exp2(&config, &mut out)?,
        Command::Serve(_) => unreachable!("handled above"),
    };
    let manifest = out.finish(cli.command.name(), config.seed, serde_json::to_value(&config)?)?;
    Ok(json!({
        "command": cli.command.name(),
        "out": cli.out,
        "artifacts": manifest.artifacts.len(),
        "summary": summary,
    }))
}
