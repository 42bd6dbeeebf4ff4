use crate::bench::GroundTruth;
use crate::camera::{sphere_bbox, CameraIntrinsics};
use crate::scene::{Observation, ObservationLog};
use crate::se3::{Pose, Rotation};
use crate::seed::mix_seed;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Anything that can produce a per-frame observation of one block.
///
/// Implementations must be deterministic: the same frame, block and prior
/// always give the same observation. Multi-pass refinement relies on it.
pub trait EstimatorPort {
    fn estimate(&self, frame_index: usize, block_id: &str, prior: Option<&Pose>) -> Observation;
}

/// Replays a recorded log. Priors are ignored.
pub struct LogEstimator<'a> {
    index: BTreeMap<(usize, &'a str), &'a Observation>,
}

impl<'a> LogEstimator<'a> {
    pub fn new(log: &'a ObservationLog) -> Self {
        Self { index: log.index() }
    }
}

impl EstimatorPort for LogEstimator<'_> {
    fn estimate(&self, frame_index: usize, block_id: &str, _prior: Option<&Pose>) -> Observation {
        self.index
            .get(&(frame_index, block_id))
            .map(|o| (*o).clone())
            .unwrap_or_else(|| Observation::hidden(frame_index, block_id))
    }
}

/// How close a prior must be to the truth to count as "good".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorThreshold {
    pub rot_rad: f64,
    pub trans_m: f64,
}

impl Default for PriorThreshold {
    fn default() -> Self {
        Self {
            rot_rad: 10f64.to_radians(),
            trans_m: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Exact geodesic size of each rotation perturbation, radians.
    pub rot_sigma: f64,
    /// Per-axis standard deviation of translation noise, meters.
    pub trans_sigma: f64,
    /// Fraction of noise removed when a good prior is supplied, in `[0, 1)`.
    pub prior_coupling: f64,
    pub prior_threshold: PriorThreshold,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rot_sigma: 0.0,
            trans_sigma: 0.0,
            prior_coupling: 0.0,
            prior_threshold: PriorThreshold::default(),
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rot_sigma >= 0.0 && self.trans_sigma >= 0.0) {
            return Err("noise magnitudes must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.prior_coupling) {
            return Err("prior coupling must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Inclusive frame interval during which a block cannot be seen.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionInterval {
    pub block_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OcclusionSchedule {
    pub intervals: Vec<OcclusionInterval>,
}

impl OcclusionSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, block_id: impl Into<String>, start: usize, end: usize) -> Self {
        self.intervals.push(OcclusionInterval {
            block_id: block_id.into(),
            start,
            end,
        });
        self
    }

    pub fn is_occluded(&self, block_id: &str, frame: usize) -> bool {
        self.intervals
            .iter()
            .any(|iv| iv.block_id == block_id && (iv.start..=iv.end).contains(&frame))
    }
}

/// Ground truth plus a controllable noise model, standing in for a learned
/// detector/selector/refiner stack.
///
/// Rotation noise is a rotation by exactly `rot_sigma` about a uniformly
/// random axis, applied in the camera frame. When a prior lies within the
/// threshold of the truth, both noise magnitudes shrink by `1 − β`.
pub struct SyntheticEstimator<'a> {
    pub truth: &'a GroundTruth,
    pub noise: NoiseModel,
    pub occlusion: OcclusionSchedule,
    pub seed: u64,
    /// When set, observations carry the silhouette box of the block's
    /// bounding sphere.
    pub intrinsics: Option<CameraIntrinsics>,
}

impl<'a> SyntheticEstimator<'a> {
    pub fn new(truth: &'a GroundTruth, noise: NoiseModel, seed: u64) -> Self {
        Self {
            truth,
            noise,
            occlusion: OcclusionSchedule::default(),
            seed,
            intrinsics: None,
        }
    }

    pub fn with_occlusion(mut self, occlusion: OcclusionSchedule) -> Self {
        self.occlusion = occlusion;
        self
    }

    pub fn with_intrinsics(mut self, k: CameraIntrinsics) -> Self {
        self.intrinsics = Some(k);
        self
    }

    fn prior_is_good(&self, prior: Option<&Pose>, truth: &Pose) -> bool {
        prior.is_some_and(|p| {
            p.rotation.angle_to(&truth.rotation) <= self.noise.prior_threshold.rot_rad
                && (p.translation - truth.translation).norm() <= self.noise.prior_threshold.trans_m
        })
    }
}

/// Rotates `pose` by exactly `angle` about a random axis, in the target frame.
pub fn perturb_rotation<R: Rng>(pose: &Pose, angle: f64, rng: &mut R) -> Pose {
    let axis: [f64; 3] = rng.sample(UnitSphere);
    if angle == 0.0 {
        return pose.clone();
    }
    let delta = Rotation::from_axis_angle(&Vector3::from(axis), angle);
    Pose {
        rotation: (delta * pose.rotation).renormalized(),
        ..pose.clone()
    }
}

impl EstimatorPort for SyntheticEstimator<'_> {
    fn estimate(&self, frame_index: usize, block_id: &str, prior: Option<&Pose>) -> Observation {
        if self.occlusion.is_occluded(block_id, frame_index) {
            return Observation::hidden(frame_index, block_id);
        }
        let Some(truth) = self.truth.object_to_camera(frame_index, block_id) else {
            return Observation::hidden(frame_index, block_id);
        };
        let good = self.prior_is_good(prior, &truth);
        let factor = if good { 1.0 - self.noise.prior_coupling } else { 1.0 };
        let rot_sigma = self.noise.rot_sigma * factor;
        let trans_sigma = self.noise.trans_sigma * factor;

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            frame_index as u64,
            crate::seed::hash_str(block_id),
            good as u64,
        ]));
        let mut pose = perturb_rotation(&truth, rot_sigma, &mut rng);
        if trans_sigma > 0.0 {
            let normal = Normal::new(0.0, trans_sigma).expect("finite sigma");
            pose.translation += Vector3::from_fn(|_, _| normal.sample(&mut rng));
        }
        let bbox = self.intrinsics.as_ref().and_then(|k| {
            let diameter = self.truth.scene.block(block_id)?.diameter;
            sphere_bbox(&pose.translation, 0.5 * diameter, k).ok()
        });
        Observation {
            frame_index,
            block_id: block_id.to_string(),
            confidence: Some(1.0 / (1.0 + rot_sigma.to_degrees())),
            pose: Some(pose),
            bbox,
            visible: true,
        }
    }
}
