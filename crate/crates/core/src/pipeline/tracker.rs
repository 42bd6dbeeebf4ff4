use super::estimator::{EstimatorPort, PriorThreshold};
use crate::bench::{evaluate, TruthSource};
use crate::scene::{Provenance, Scene, TrackEntry, TrackedTrajectory, Trajectories};
use crate::se3::{anchor_transfer, Se3Error};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

pub const MAX_REFINEMENT_PASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackError {
    #[error("block `{0}` is never observed and cannot be inferred")]
    NoObservationsEver(String),
    #[error("no visible anchor for `{target}` at frame {frame}")]
    NoVisibleAnchor { frame: usize, target: String },
    #[error("anchor selection needs at least one candidate")]
    EmptyCandidates,
    #[error("scene has no blocks")]
    NoBlocks,
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] Se3Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    /// Occluded blocks keep their last observed pose.
    #[default]
    FixedCamera,
    /// The scene is static and the camera moves; occluded blocks are inferred
    /// from visible anchors.
    MovingCamera,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    #[default]
    NearestAtOcclusionStart,
    FixedId(String),
    HighestConfidence,
}

impl FromStr for AnchorRule {
    type Err = String;

    /// `nearest_at_occlusion_start`, `highest_confidence` or `fixed_id:<id>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest_at_occlusion_start" | "nearest" => Ok(Self::NearestAtOcclusionStart),
            "highest_confidence" => Ok(Self::HighestConfidence),
            _ => s
                .strip_prefix("fixed_id:")
                .filter(|id| !id.is_empty())
                .map(|id| Self::FixedId(id.to_string()))
                .ok_or_else(|| format!("unknown anchor rule `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub mode: CameraMode,
    pub refinement_passes: usize,
    pub anchor_rule: AnchorRule,
    pub prior_threshold: PriorThreshold,
    /// Number of leading frames to track; `None` tracks the whole sequence.
    pub window: Option<usize>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mode: CameraMode::FixedCamera,
            refinement_passes: 2,
            anchor_rule: AnchorRule::NearestAtOcclusionStart,
            prior_threshold: PriorThreshold::default(),
            window: None,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(1..=MAX_REFINEMENT_PASSES).contains(&self.refinement_passes) {
            return Err(TrackError::InvalidConfig(format!(
                "refinement_passes must be in 1..={MAX_REFINEMENT_PASSES}, got {}",
                self.refinement_passes
            )));
        }
        if self.window == Some(0) {
            return Err(TrackError::InvalidConfig("window must be at least one frame".into()));
        }
        Ok(())
    }

    pub fn tracked_frames(&self, available: usize) -> usize {
        self.window.map_or(available, |w| w.min(available))
    }
}

/// Per-block slots indexed by absolute frame; `None` means not yet known.
pub type PartialTracks = BTreeMap<String, Vec<Option<TrackEntry>>>;

/// Geometry and confidence that anchor rules consult.
#[derive(Debug, Clone, Default)]
pub struct AnchorContext {
    pub centers: BTreeMap<String, Vector3<f64>>,
    pub confidence: BTreeMap<String, f64>,
}

impl AnchorContext {
    /// Block centers from the scene's world poses.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            centers: scene
                .world_poses
                .iter()
                .map(|(id, p)| (id.clone(), p.translation))
                .collect(),
            confidence: BTreeMap::new(),
        }
    }
}

/// Picks the anchor used to infer `target_id`. Ties go to the
/// lexicographically smallest id.
pub fn select_anchor(
    candidates: &[&str],
    target_id: &str,
    ctx: &AnchorContext,
    rule: &AnchorRule,
) -> Result<String, TrackError> {
    if candidates.is_empty() {
        return Err(TrackError::EmptyCandidates);
    }
    let mut sorted: Vec<&str> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let pick_min = |key: &dyn Fn(&str) -> f64| -> String {
        let mut best = sorted[0];
        let mut best_key = key(best);
        for &c in &sorted[1..] {
            let k = key(c);
            if k < best_key {
                best = c;
                best_key = k;
            }
        }
        best.to_string()
    };
    match rule {
        AnchorRule::NearestAtOcclusionStart => {
            let target = ctx.centers.get(target_id);
            Ok(pick_min(&|c| match (target, ctx.centers.get(c)) {
                (Some(t), Some(p)) => (p - t).norm(),
                _ => f64::INFINITY,
            }))
        }
        AnchorRule::HighestConfidence => {
            Ok(pick_min(&|c| -ctx.confidence.get(c).copied().unwrap_or(0.0)))
        }
        AnchorRule::FixedId(id) => {
            if sorted.contains(&id.as_str()) {
                Ok(id.clone())
            } else {
                Err(TrackError::NoVisibleAnchor {
                    frame: usize::MAX,
                    target: target_id.to_string(),
                })
            }
        }
    }
}

fn measured(slots: &[Option<TrackEntry>], frame: usize) -> Option<&TrackEntry> {
    slots.get(frame)?.as_ref().filter(|e| e.provenance.is_measured())
}

/// Fills the gaps of a moving-camera run by anchor transfer.
///
/// Every gap is a maximal run of missing frames. Its reference frame is the
/// last measured frame before the gap (the target's pose just before it was
/// hidden); a gap at the very start uses the first measured frame after it.
/// For each missing frame an anchor visible at both the reference frame and
/// the missing frame is chosen, and
/// `target_i = anchor_i ∘ anchor_ref⁻¹ ∘ target_ref`.
pub fn infer_occluded_moving(tracks: &PartialTracks, rule: &AnchorRule) -> Result<Trajectories, TrackError> {
    let mut out = Trajectories::new();
    for (target, slots) in tracks {
        let mut entries = Vec::with_capacity(slots.len());
        let mut frame = 0;
        while frame < slots.len() {
            if let Some(e) = &slots[frame] {
                entries.push(e.clone());
                frame += 1;
                continue;
            }
            let gap_end = (frame..slots.len()).find(|&f| slots[f].is_some()).unwrap_or(slots.len());
            let reference = if frame > 0 && measured(slots, frame - 1).is_some() {
                frame - 1
            } else if gap_end < slots.len() && measured(slots, gap_end).is_some() {
                gap_end
            } else {
                return Err(TrackError::NoObservationsEver(target.clone()));
            };
            let target_ref = &measured(slots, reference).expect("checked above").pose;
            for missing in frame..gap_end {
                let candidates: Vec<&str> = tracks
                    .iter()
                    .filter(|(id, s)| {
                        *id != target && measured(s, reference).is_some() && measured(s, missing).is_some()
                    })
                    .map(|(id, _)| id.as_str())
                    .collect();
                if candidates.is_empty() {
                    return Err(TrackError::NoVisibleAnchor {
                        frame: missing,
                        target: target.clone(),
                    });
                }
                let ctx = AnchorContext {
                    centers: tracks
                        .iter()
                        .filter_map(|(id, s)| measured(s, reference).map(|e| (id.clone(), e.pose.translation)))
                        .chain(std::iter::once((target.clone(), target_ref.translation)))
                        .collect(),
                    confidence: tracks
                        .iter()
                        .filter_map(|(id, s)| {
                            measured(s, missing).map(|e| (id.clone(), e.confidence.unwrap_or(0.0)))
                        })
                        .collect(),
                };
                let anchor = select_anchor(&candidates, target, &ctx, rule).map_err(|e| match e {
                    TrackError::NoVisibleAnchor { target, .. } => TrackError::NoVisibleAnchor { frame: missing, target },
                    other => other,
                })?;
                let anchor_slots = &tracks[&anchor];
                let anchor_ref = &measured(anchor_slots, reference).expect("candidate").pose;
                let anchor_now = &measured(anchor_slots, missing).expect("candidate").pose;
                let pose = anchor_transfer(anchor_ref, anchor_now, target_ref)?;
                entries.push(TrackEntry {
                    pose,
                    provenance: Provenance::AnchorInferred { anchor },
                    confidence: None,
                });
            }
            frame = gap_end;
        }
        let mut t = TrackedTrajectory::new(target.clone(), 0);
        t.entries = entries;
        out.insert(target.clone(), t);
    }
    Ok(out)
}

/// One tracking pass over frames `0..frames`.
///
/// Priors: in pass 1 each frame gets the block's own output from the
/// previous frame; in later passes it gets the previous pass's output for the
/// same frame.
pub fn run_pass(
    estimator: &dyn EstimatorPort,
    scene: &Scene,
    config: &TrackerConfig,
    frames: usize,
    pass: usize,
    priors: Option<&Trajectories>,
) -> Result<Trajectories, TrackError> {
    config.validate()?;
    if scene.blocks.is_empty() {
        return Err(TrackError::NoBlocks);
    }
    let frames = config.tracked_frames(frames);
    let ids: Vec<&str> = {
        let mut v: Vec<&str> = scene.ids().collect();
        v.sort_unstable();
        v.dedup();
        v
    };

    let mut tracks: PartialTracks = ids.iter().map(|id| (id.to_string(), vec![None; frames])).collect();
    for frame in 0..frames {
        for id in &ids {
            let slots = tracks.get_mut(*id).expect("initialized");
            let prior = if pass <= 1 {
                frame.checked_sub(1).and_then(|f| slots[f].as_ref()).map(|e| &e.pose)
            } else {
                priors.and_then(|p| p.get(*id)).and_then(|t| t.get(frame)).map(|e| &e.pose)
            };
            let obs = estimator.estimate(frame, id, prior);
            slots[frame] = match (obs.visible, obs.pose) {
                (true, Some(pose)) => Some(TrackEntry {
                    pose,
                    provenance: if pass <= 1 {
                        Provenance::Observed
                    } else {
                        Provenance::PriorRefined { pass }
                    },
                    confidence: obs.confidence,
                }),
                _ if config.mode == CameraMode::FixedCamera => frame
                    .checked_sub(1)
                    .and_then(|f| slots[f].as_ref())
                    .map(|prev| TrackEntry {
                        pose: prev.pose.clone(),
                        provenance: Provenance::HeldLast,
                        confidence: None,
                    }),
                _ => None,
            };
        }
    }

    match config.mode {
        CameraMode::MovingCamera => infer_occluded_moving(&tracks, &config.anchor_rule),
        CameraMode::FixedCamera => {
            let mut out = Trajectories::new();
            for (id, slots) in tracks {
                // Before its first sighting a block has not been placed yet.
                let start = slots
                    .iter()
                    .position(Option::is_some)
                    .ok_or_else(|| TrackError::NoObservationsEver(id.clone()))?;
                let mut t = TrackedTrajectory::new(id.clone(), start);
                t.entries = slots.into_iter().skip(start).map(|e| e.expect("held forward")).collect();
                out.insert(id, t);
            }
            Ok(out)
        }
    }
}

/// Per-pass, per-block error summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassMetrics {
    pub pass: usize,
    pub block: String,
    pub mean_rot_err_deg: f64,
    pub mean_trans_err_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub trajectories: Trajectories,
    pub pass_metrics: Vec<PassMetrics>,
}

impl RefineOutcome {
    /// Mean rotation error over all blocks for one pass, in degrees.
    pub fn mean_rot_err_deg(&self, pass: usize) -> Option<f64> {
        let rows: Vec<&PassMetrics> = self.pass_metrics.iter().filter(|m| m.pass == pass).collect();
        (!rows.is_empty()).then(|| rows.iter().map(|m| m.mean_rot_err_deg).sum::<f64>() / rows.len() as f64)
    }
}

/// Re-predicts the whole sequence `refinement_passes` times, each pass
/// seeded with the previous pass's poses, and returns the last pass.
pub fn refine_multi_pass(
    estimator: &dyn EstimatorPort,
    scene: &Scene,
    config: &TrackerConfig,
    frames: usize,
    truth: Option<&dyn TruthSource>,
) -> Result<RefineOutcome, TrackError> {
    config.validate()?;
    let mut current: Option<Trajectories> = None;
    let mut pass_metrics = Vec::new();
    for pass in 1..=config.refinement_passes {
        let next = run_pass(estimator, scene, config, frames, pass, current.as_ref())?;
        if let Some(truth) = truth {
            // Passes can only be scored where the truth covers them.
            if let Ok(m) = evaluate(&next, truth) {
                for (block, bm) in m.per_block {
                    pass_metrics.push(PassMetrics {
                        pass,
                        block,
                        mean_rot_err_deg: bm.mean_rot_deg,
                        mean_trans_err_m: bm.mean_trans_m,
                    });
                }
            }
        }
        current = Some(next);
    }
    Ok(RefineOutcome {
        trajectories: current.expect("at least one pass"),
        pass_metrics,
    })
}

/// CSV with header `pass,block,mean_rot_err_deg,mean_trans_err_m`.
pub fn write_pass_metrics_csv<W: Write>(rows: &[PassMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pass,block,mean_rot_err_deg,mean_trans_err_m")?;
    for r in rows {
        writeln!(out, "{},{},{:.9},{:.9}", r.pass, r.block, r.mean_rot_err_deg, r.mean_trans_err_m)?;
    }
    out.flush()
}
