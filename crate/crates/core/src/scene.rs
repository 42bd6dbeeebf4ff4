//! Blocks, scenes, estimator observations and tracked trajectories.

use crate::camera::BoundingBox;
use crate::se3::{Pose, Rotation};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

/// Standard Jenga block, lying flat: 75 × 25 × 15 mm.
pub const JENGA_HALF_EXTENTS: [f64; 3] = [0.0375, 0.0125, 0.0075];

/// Frame id of the modeling-space world.
pub const WORLD: &str = "world";
/// Frame id of the camera.
pub const CAMERA: &str = "camera";

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid block `{id}`: {reason}")]
    InvalidBlock { id: String, reason: String },
    #[error("invalid observation at frame {frame} for `{block}`: {reason}")]
    InvalidObservation { frame: usize, block: String, reason: String },
    #[error("log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorTag {
    Blue,
    Red,
    Yellow,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub id: String,
    pub half_extents: [f64; 3],
    pub color_tag: ColorTag,
    /// Diameter of the bounding sphere the block is normalized into.
    pub diameter: f64,
}

impl Block {
    pub fn new(id: impl Into<String>, half_extents: [f64; 3], color_tag: ColorTag) -> Result<Self, SceneError> {
        let id = id.into();
        if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
            return Err(SceneError::InvalidBlock {
                id,
                reason: "half extents must be positive".into(),
            });
        }
        Ok(Self {
            diameter: 2.0 * Vector3::from(half_extents).norm(),
            id,
            half_extents,
            color_tag,
        })
    }

    pub fn jenga(id: impl Into<String>, color_tag: ColorTag) -> Self {
        Self::new(id, JENGA_HALF_EXTENTS, color_tag).expect("default extents are valid")
    }

    /// The eight box corners in the block frame.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let [hx, hy, hz] = self.half_extents;
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { -hz } else { hz },
            )
        })
    }

    /// Corner index pairs forming the 12 box edges.
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1), (2, 3), (4, 5), (6, 7),
        (0, 2), (1, 3), (4, 6), (5, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ];

    /// Whether a point given in the block frame lies inside the box.
    pub fn contains_local(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i].abs() <= self.half_extents[i])
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wire {
            id: String,
            half_extents: [f64; 3],
            color_tag: ColorTag,
            diameter: Option<f64>,
        }
        let w = Wire::deserialize(deserializer)?;
        let block = Block::new(w.id, w.half_extents, w.color_tag).map_err(serde::de::Error::custom)?;
        if let Some(d) = w.diameter {
            if (d - block.diameter).abs() > 1e-9 {
                return Err(serde::de::Error::custom(format!(
                    "diameter {d} inconsistent with half extents (expected {})",
                    block.diameter
                )));
            }
        }
        Ok(block)
    }
}

/// Blocks and their object→world poses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub blocks: Vec<Block>,
    pub world_poses: BTreeMap<String, Pose>,
}

impl Scene {
    /// Adds a block resting at `pose` (object→world; frame tags are set here).
    pub fn with_block(mut self, block: Block, pose: Pose) -> Self {
        let pose = pose.retagged(block.id.clone(), WORLD);
        self.world_poses.insert(block.id.clone(), pose);
        self.blocks.push(block);
        self
    }

    pub fn block(&self, id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.id.as_str())
    }

    /// Blue, red and yellow Jenga blocks in a row on the table.
    pub fn default_tabletop() -> Self {
        let hz = JENGA_HALF_EXTENTS[2];
        [("blue", ColorTag::Blue, -0.1), ("red", ColorTag::Red, 0.0), ("yellow", ColorTag::Yellow, 0.1)]
            .into_iter()
            .fold(Scene::default(), |s, (id, color, x)| {
                s.with_block(
                    Block::jenga(id, color),
                    Pose::new(Rotation::identity(), Vector3::new(x, 0.0, hz), id, WORLD),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { id: String },
    MissingPose { id: String },
    OrphanPose { id: String },
    Interpenetration { a: String, b: String },
}

/// Reports structural problems and overlapping blocks. Never fails; the
/// result is sorted so it does not depend on block order.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for b in &scene.blocks {
        if !seen.insert(b.id.as_str()) {
            out.insert(Violation::DuplicateId { id: b.id.clone() });
        }
        if !scene.world_poses.contains_key(&b.id) {
            out.insert(Violation::MissingPose { id: b.id.clone() });
        }
    }
    for id in scene.world_poses.keys() {
        if !seen.contains(id.as_str()) {
            out.insert(Violation::OrphanPose { id: id.clone() });
        }
    }
    let posed: Vec<(&Block, &Pose)> = scene
        .blocks
        .iter()
        .filter_map(|b| scene.world_poses.get(&b.id).map(|p| (b, p)))
        .collect();
    for i in 0..posed.len() {
        for j in i + 1..posed.len() {
            let (a, pa) = posed[i];
            let (b, pb) = posed[j];
            if a.id != b.id && boxes_overlap(a, pa, b, pb) {
                let (x, y) = if a.id < b.id { (&a.id, &b.id) } else { (&b.id, &a.id) };
                out.insert(Violation::Interpenetration { a: x.clone(), b: y.clone() });
            }
        }
    }
    out.into_iter().collect()
}

/// Separating-axis test for two oriented boxes. Touching faces do not count
/// as overlap; penetration has to exceed `1e-9` m on every axis.
pub fn boxes_overlap(a: &Block, pa: &Pose, b: &Block, pb: &Pose) -> bool {
    const EPS: f64 = 1e-9;
    let ra = pa.rotation.matrix();
    let rb = pb.rotation.matrix();
    let d = pb.translation - pa.translation;
    let ha = Vector3::from(a.half_extents);
    let hb = Vector3::from(b.half_extents);
    let project = |axis: &Vector3<f64>, r: &Matrix3<f64>, h: &Vector3<f64>| {
        (0..3).map(|k| h[k] * r.column(k).dot(axis).abs()).sum::<f64>()
    };
    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(15);
    for k in 0..3 {
        axes.push(ra.column(k).into());
        axes.push(rb.column(k).into());
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = ra.column(i).cross(&rb.column(j));
            if c.norm() > 1e-9 {
                axes.push(c.normalize());
            }
        }
    }
    axes.iter().all(|axis| {
        let dist = d.dot(axis).abs();
        dist < project(axis, &ra, &ha) + project(axis, &rb, &hb) - EPS
    })
}

/// One estimator output for one block in one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub frame_index: usize,
    pub block_id: String,
    pub pose: Option<Pose>,
    pub bbox: Option<BoundingBox>,
    pub visible: bool,
    pub confidence: Option<f64>,
}

impl Observation {
    pub fn hidden(frame_index: usize, block_id: impl Into<String>) -> Self {
        Self {
            frame_index,
            block_id: block_id.into(),
            pose: None,
            bbox: None,
            visible: false,
            confidence: None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |reason: &str| {
            Err(SceneError::InvalidObservation {
                frame: self.frame_index,
                block: self.block_id.clone(),
                reason: reason.into(),
            })
        };
        if self.visible && self.pose.is_none() {
            return fail("visible observation without a pose");
        }
        if self.pose.is_some() != self.confidence.is_some() {
            return fail("confidence must be present exactly when a pose is");
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return fail("confidence outside [0, 1]");
            }
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Observation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wire {
            frame_index: usize,
            block_id: String,
            #[serde(default)]
            pose: Option<Pose>,
            #[serde(default)]
            bbox: Option<BoundingBox>,
            visible: bool,
            #[serde(default)]
            confidence: Option<f64>,
        }
        let w = Wire::deserialize(deserializer)?;
        let obs = Observation {
            frame_index: w.frame_index,
            block_id: w.block_id,
            pose: w.pose,
            bbox: w.bbox,
            visible: w.visible,
            confidence: w.confidence,
        };
        obs.validate().map_err(serde::de::Error::custom)?;
        Ok(obs)
    }
}

/// A scene header plus per-frame observations, as exchanged with any
/// estimator (synthetic or real).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationLog {
    pub scene: Scene,
    pub observations: Vec<Observation>,
}

impl ObservationLog {
    pub fn frame_count(&self) -> usize {
        self.observations.iter().map(|o| o.frame_index + 1).max().unwrap_or(0)
    }

    /// Observation lookup keyed by `(frame, block)`.
    pub fn index(&self) -> BTreeMap<(usize, &str), &Observation> {
        self.observations
            .iter()
            .map(|o| ((o.frame_index, o.block_id.as_str()), o))
            .collect()
    }

    /// JSON lines: the scene first, then one observation per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SceneError> {
        serde_json::to_writer(&mut out, &self.scene)?;
        out.write_all(b"\n")?;
        for o in &self.observations {
            serde_json::to_writer(&mut out, o)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SceneError> {
        let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (n, header) = lines.next().ok_or(SceneError::Log {
            line: 1,
            message: "missing scene header".into(),
        })?;
        let scene: Scene = serde_json::from_str(&header?).map_err(|e| SceneError::Log {
            line: n,
            message: e.to_string(),
        })?;
        let mut observations = Vec::new();
        for (n, line) in lines {
            let o: Observation = serde_json::from_str(&line?).map_err(|e| SceneError::Log {
                line: n,
                message: e.to_string(),
            })?;
            observations.push(o);
        }
        Ok(Self { scene, observations })
    }
}

/// Which rule produced a tracked pose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Observed,
    HeldLast,
    AnchorInferred { anchor: String },
    PriorRefined { pass: usize },
}

impl Provenance {
    /// Observed or prior-refined: the estimator actually saw the block.
    pub fn is_measured(&self) -> bool {
        matches!(self, Self::Observed | Self::PriorRefined { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub pose: Pose,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Contiguous per-frame poses of one block, starting at `start_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedTrajectory {
    pub block_id: String,
    pub start_frame: usize,
    pub entries: Vec<TrackEntry>,
}

impl TrackedTrajectory {
    pub fn new(block_id: impl Into<String>, start_frame: usize) -> Self {
        Self {
            block_id: block_id.into(),
            start_frame,
            entries: Vec::new(),
        }
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.entries.len()
    }

    pub fn get(&self, frame: usize) -> Option<&TrackEntry> {
        frame.checked_sub(self.start_frame).and_then(|i| self.entries.get(i))
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &TrackEntry)> {
        self.entries.iter().enumerate().map(move |(i, e)| (self.start_frame + i, e))
    }
}

pub type Trajectories = BTreeMap<String, TrackedTrajectory>;

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    block_id: String,
    frame: usize,
    pose: Pose,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

/// One JSON line per tracked pose, grouped by block then frame.
pub fn write_trajectories_jsonl<W: Write>(trajectories: &Trajectories, mut out: W) -> Result<(), SceneError> {
    for t in trajectories.values() {
        for (frame, e) in t.frames() {
            let line = TrajectoryLine {
                block_id: t.block_id.clone(),
                frame,
                pose: e.pose.clone(),
                provenance: e.provenance.clone(),
                confidence: e.confidence,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectories_jsonl<R: BufRead>(input: R) -> Result<Trajectories, SceneError> {
    let mut out = Trajectories::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: TrajectoryLine = serde_json::from_str(&line).map_err(|e| SceneError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        let t = out
            .entry(l.block_id.clone())
            .or_insert_with(|| TrackedTrajectory::new(l.block_id.clone(), l.frame));
        if l.frame != t.end_frame() {
            return Err(SceneError::Log {
                line: i + 1,
                message: format!("frame {} breaks the contiguous run of `{}`", l.frame, l.block_id),
            });
        }
        t.entries.push(TrackEntry {
            pose: l.pose,
            provenance: l.provenance,
            confidence: l.confidence,
        });
    }
    Ok(out)
}
