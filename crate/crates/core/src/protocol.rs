//! JSON bodies exchanged with the local service.

use crate::bench::{AmplificationReport, AxisModel};
use crate::pipeline::TrackerConfig;
use crate::scene::{Observation, Scene, Trajectories, Violation};
use crate::se3::{Pose, Rotation, Se3Error};
use crate::wind::{GridSpec, WindField};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub const API_PREFIX: &str = "/api/v1";
pub const DEFAULT_BIND: &str = "127.0.0.1:7780";

/// Body of a session-creation request; an absent scene means the default
/// three-block tabletop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub scene: Option<Scene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub version: u64,
    pub scene: Scene,
    /// True when no wind result exists for the current version.
    pub dirty: bool,
    pub wind_version: Option<u64>,
    pub warnings: Vec<Violation>,
}

/// Either a row-major 3×3 matrix or a `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RotationInput {
    Matrix([[f64; 3]; 3]),
    Quaternion([f64; 4]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseUpdate {
    pub rotation: RotationInput,
    pub translation: [f64; 3],
}

impl PoseUpdate {
    pub fn from_pose(pose: &Pose) -> Self {
        Self {
            rotation: RotationInput::Quaternion(pose.rotation.to_quaternion()),
            translation: pose.translation.into(),
        }
    }

    /// Object→world pose for `block_id`; rotations must be proper and
    /// orthonormal within 1e-6.
    pub fn to_pose(&self, block_id: &str) -> Result<Pose, Se3Error> {
        let rotation = match &self.rotation {
            RotationInput::Matrix(m) => Rotation::from_matrix(*m)?,
            RotationInput::Quaternion(q) => Rotation::from_quaternion(*q)?,
        };
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        Ok(Pose::new(rotation, Vector3::from(self.translation), block_id, crate::scene::WORLD))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionResponse {
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindRunRequest {
    #[serde(default)]
    pub spec: GridSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_tol() -> f64 {
    1e-5
}

fn default_max_iters() -> usize {
    20_000
}

impl Default for WindRunRequest {
    fn default() -> Self {
        Self {
            spec: GridSpec::default(),
            tol: default_tol(),
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRunAccepted {
    pub run_id: u64,
    pub scene_version: u64,
}

/// A finished solve, tagged with the scene version it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindResult {
    pub run_id: u64,
    pub scene_version: u64,
    /// True when the scene has changed since this solve.
    pub stale: bool,
    pub spec: GridSpec,
    pub iterations: usize,
    pub converged: bool,
    pub nx: usize,
    pub ny: usize,
    pub rho: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl WindResult {
    pub fn new(run_id: u64, scene_version: u64, stale: bool, spec: GridSpec, field: &WindField) -> Self {
        Self {
            run_id,
            scene_version,
            stale,
            spec,
            iterations: field.iterations,
            converged: field.converged,
            nx: field.nx,
            ny: field.ny,
            rho: field.rho.clone(),
            ux: field.ux.clone(),
            uy: field.uy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SceneUpdated { version: u64 },
    WindProgress { run_id: u64, iter: usize, residual: f64 },
    WindDone { run_id: u64, version: u64, converged: bool },
    WindFailed { run_id: u64, reason: String },
}

/// One line of the event stream. `seq` increases by one per session event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRequest {
    pub scene: Scene,
    pub observations: Vec<Observation>,
    #[serde(default)]
    pub config: TrackerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResponse {
    pub trajectories: Trajectories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRequest {
    pub distances: Vec<f64>,
    pub sigma_deg: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub axis_model: AxisModel,
}

pub type StudyResponse = AmplificationReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
