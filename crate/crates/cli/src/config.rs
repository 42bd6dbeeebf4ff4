//! Run configuration: defaults, then an optional JSON file, then dotted-key
//! overrides. Every key must already exist in the defaults.

use formloop_core::bench::{AxisModel, Layout, OrbitParams};
use formloop_core::camera::CameraIntrinsics;
use formloop_core::ingest::CropBox;
use formloop_core::pipeline::{NoiseModel, OcclusionInterval, TrackerConfig};
use formloop_core::protocol::DEFAULT_BIND;
use formloop_core::wind::GridSpec;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("malformed override `{0}`; expected KEY=VALUE")]
    MalformedOverride(String),
    #[error("cannot read config {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMotion {
    #[default]
    Orbit,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub blocks: usize,
    pub layout: Layout,
    pub camera: CameraMotion,
    pub orbit: OrbitParams,
    /// Eye position of the fixed camera, which looks at `orbit.target`.
    pub fixed_eye: [f64; 3],
    pub noise: NoiseModel,
    pub occlusion: Vec<OcclusionInterval>,
    /// Adds occlusions computed from the block geometry.
    pub geometric_occlusion: bool,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            layout: Layout::Row,
            camera: CameraMotion::Orbit,
            orbit: OrbitParams {
                radius: 0.6,
                height: 0.4,
                start_angle: 0.0,
                span: 1.5,
                frames: 60,
                target: [0.0, 0.0, 0.0],
            },
            fixed_eye: [0.5, -0.3, 0.4],
            noise: NoiseModel::default(),
            occlusion: Vec::new(),
            geometric_occlusion: false,
            intrinsics: default_intrinsics(),
        }
    }
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).expect("valid defaults")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub distances: Vec<f64>,
    pub sigma_deg: f64,
    pub trials: usize,
    pub axis_model: AxisModel,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            distances: vec![0.1, 0.2, 0.4],
            sigma_deg: 1.0,
            trials: 500,
            axis_model: AxisModel::Perpendicular,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindConfig {
    pub spec: GridSpec,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            spec: GridSpec::default(),
            tol: 1e-5,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn ext(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub intrinsics: CameraIntrinsics,
    /// Overlay opacity in `[0, 1]`.
    pub alpha: f64,
    pub format: ImageFormat,
    /// Pixels per cell in plan-view speed maps.
    pub map_scale: u32,
    /// Render every n-th frame.
    pub frame_stride: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            intrinsics: default_intrinsics(),
            alpha: 0.5,
            format: ImageFormat::Ppm,
            map_scale: 4,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizeConfig {
    pub crop: Option<CropBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
    pub snapshot: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.to_string(),
            snapshot: None,
        }
    }
}

/// Scripted experiment parameters shared by `repro-exp1` and `repro-exp2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproConfig {
    pub exp1_frames: usize,
    pub exp2_frames: usize,
    pub rot_noise_deg: f64,
    pub trans_noise_m: f64,
    pub prior_coupling: f64,
    /// Anchor rotation noise for the red-versus-yellow comparison.
    pub anchor_noise_deg: f64,
    pub anchor_trials: usize,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self {
            exp1_frames: 90,
            exp2_frames: 60,
            rot_noise_deg: 3.0,
            trans_noise_m: 0.002,
            prior_coupling: 0.5,
            anchor_noise_deg: 1.0,
            anchor_trials: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub tracker: TrackerConfig,
    pub study: StudyConfig,
    pub wind: WindConfig,
    pub render: RenderConfig,
    pub normalize: NormalizeConfig,
    pub serve: ServeConfig,
    pub repro: ReproConfig,
}

impl RunConfig {
    /// Defaults ← `file` ← `overrides` (in order; later wins).
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = file {
            let file_err = |message: String| ConfigError::File { path: path.to_path_buf(), message };
            let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
            let from_file: Value = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
            merge(&mut value, from_file, "")?;
        }
        for (key, v) in overrides {
            set_dotted(&mut value, key, v.clone())?;
        }
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Parses `KEY=VALUE`; the value is JSON when it parses as JSON and a plain
/// string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| ConfigError::MalformedOverride(s.to_string()))?;
    if key.is_empty() {
        return Err(ConfigError::MalformedOverride(s.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Objects merge key by key; anything else replaces wholesale.
fn merge(base: &mut Value, incoming: Value, prefix: &str) -> Result<(), ConfigError> {
    match (base, incoming) {
        (Value::Object(b), Value::Object(inc)) => {
            for (k, v) in inc {
                let path = join(prefix, &k);
                let slot = b.get_mut(&k).ok_or_else(|| ConfigError::UnknownKey(path.clone()))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (b, v) => {
            *b = v;
            Ok(())
        }
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    for part in key.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|m: &mut Map<String, Value>| m.get_mut(part))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    *cur = value;
    Ok(())
}
