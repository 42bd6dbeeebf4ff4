//! Synthetic ground truth, observation synthesis, accuracy metrics and the
//! anchor-distance error-amplification study.

use crate::pipeline::{perturb_rotation, EstimatorPort, OcclusionSchedule};
use crate::scene::{Block, ColorTag, ObservationLog, Scene, Trajectories, CAMERA, JENGA_HALF_EXTENTS, WORLD};
use crate::se3::{anchor_transfer, Pose, Rotation};
use crate::seed::mix_seed;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("could not place {n} blocks without overlap after {attempts} attempts")]
    PlacementFailure { n: usize, attempts: usize },
    #[error("prediction for `{block}` at frame {frame} has no ground truth")]
    FrameMismatch { block: String, frame: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Anything that knows where a block really was, as an object→camera pose.
pub trait TruthSource {
    fn object_to_camera(&self, frame: usize, block_id: &str) -> Option<Pose>;
    fn block(&self, block_id: &str) -> Option<&Block>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitParams {
    pub radius: f64,
    pub height: f64,
    pub start_angle: f64,
    pub span: f64,
    pub frames: usize,
    pub target: [f64; 3],
}

/// Per-frame world→camera poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrajectory {
    pub poses: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit: Option<OrbitParams>,
}

/// World→camera pose of a camera at `eye` looking at `target`, with camera
/// x to the right, y down and z forward; `up` is world +z.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vector3::z());
    if right.norm() < 1e-9 {
        right = Vector3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let cam_to_world = Matrix3::from_columns(&[right, down, forward]);
    let world_to_cam = cam_to_world.transpose();
    let rows = std::array::from_fn(|r| std::array::from_fn(|c| world_to_cam[(r, c)]));
    let rotation = Rotation::from_matrix(rows).expect("orthonormal by construction");
    Pose::new(rotation, -(world_to_cam * eye), WORLD, CAMERA)
}

impl CameraTrajectory {
    /// Camera circling `target` at constant height, always looking at it.
    pub fn orbit(p: &OrbitParams) -> Self {
        let target = Vector3::from(p.target);
        let poses = (0..p.frames.max(1))
            .map(|i| {
                let t = if p.frames > 1 { i as f64 / (p.frames - 1) as f64 } else { 0.0 };
                let a = p.start_angle + p.span * t;
                let eye = target + Vector3::new(p.radius * a.cos(), p.radius * a.sin(), p.height);
                look_at(&eye, &target)
            })
            .collect();
        Self { poses, orbit: Some(*p) }
    }

    pub fn fixed(pose: &Pose, frames: usize) -> Self {
        Self {
            poses: vec![pose.clone(); frames.max(1)],
            orbit: None,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Scene geometry, per-frame block poses in the world and the camera path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene: Scene,
    pub camera: CameraTrajectory,
    /// Object→world poses per frame.
    pub world_poses: Vec<BTreeMap<String, Pose>>,
}

impl GroundTruth {
    /// Blocks stay where the scene puts them for every frame.
    pub fn static_scene(scene: Scene, camera: CameraTrajectory) -> Self {
        let world_poses = vec![scene.world_poses.clone(); camera.len()];
        Self {
            scene,
            camera,
            world_poses,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.camera.len().min(self.world_poses.len())
    }

    pub fn object_to_camera(&self, frame: usize, block_id: &str) -> Option<Pose> {
        let cam = self.camera.poses.get(frame)?;
        let world = self.world_poses.get(frame)?.get(block_id)?;
        cam.compose(world).ok()
    }
}

impl TruthSource for GroundTruth {
    fn object_to_camera(&self, frame: usize, block_id: &str) -> Option<Pose> {
        GroundTruth::object_to_camera(self, frame, block_id)
    }

    fn block(&self, block_id: &str) -> Option<&Block> {
        self.scene.block(block_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Row,
    Stack,
    Random,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "row" => Ok(Self::Row),
            "stack" => Ok(Self::Stack),
            "random" => Ok(Self::Random),
            _ => Err(format!("unknown layout `{s}`")),
        }
    }
}

fn default_block(i: usize) -> Block {
    match i {
        0 => Block::jenga("blue", ColorTag::Blue),
        1 => Block::jenga("red", ColorTag::Red),
        2 => Block::jenga("yellow", ColorTag::Yellow),
        _ => Block::jenga(format!("block{i}"), ColorTag::Other),
    }
}

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Lays out `n` Jenga blocks on the z = 0 table.
///
/// `Row` puts them along x, centered on the origin, one block length plus a
/// 25 mm gap apart. `Stack` piles them at the origin, alternating 90° per
/// layer. `Random` scatters them inside a 0.4 m square.
pub fn generate_scene(n: usize, layout: Layout, seed: u64) -> Result<Scene, BenchError> {
    if n == 0 {
        return Err(BenchError::InvalidArgument("need at least one block".into()));
    }
    let [hx, _, hz] = JENGA_HALF_EXTENTS;
    let place = |i: usize, r: Rotation, t: Vector3<f64>| (default_block(i), Pose::new(r, t, "", WORLD));
    let items: Vec<(Block, Pose)> = match layout {
        Layout::Row => {
            let spacing = 2.0 * hx + 0.025;
            let x0 = -0.5 * spacing * (n - 1) as f64;
            (0..n)
                .map(|i| place(i, Rotation::identity(), Vector3::new(x0 + spacing * i as f64, 0.0, hz)))
                .collect()
        }
        Layout::Stack => (0..n)
            .map(|i| {
                let yaw = if i % 2 == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
                place(i, Rotation::rot_z(yaw), Vector3::new(0.0, 0.0, (2 * i + 1) as f64 * hz))
            })
            .collect(),
        Layout::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5ce7e]));
            let mut placed: Vec<(Block, Pose)> = Vec::new();
            let mut attempts = 0;
            while placed.len() < n {
                attempts += 1;
                if attempts > MAX_PLACEMENT_ATTEMPTS {
                    return Err(BenchError::PlacementFailure { n, attempts: MAX_PLACEMENT_ATTEMPTS });
                }
                let cand = place(
                    placed.len(),
                    Rotation::rot_z(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
                    Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), hz),
                );
                if placed.iter().all(|(b, p)| !crate::scene::boxes_overlap(b, p, &cand.0, &cand.1)) {
                    placed.push(cand);
                }
            }
            placed
        }
    };
    Ok(items.into_iter().fold(Scene::default(), |s, (b, p)| s.with_block(b, p)))
}

/// Runs an estimator over every frame and block, without priors.
pub fn generate_observations(truth: &GroundTruth, estimator: &dyn EstimatorPort) -> ObservationLog {
    let mut observations = Vec::new();
    for frame in 0..truth.frame_count() {
        for block in &truth.scene.blocks {
            observations.push(estimator.estimate(frame, &block.id, None));
        }
    }
    ObservationLog {
        scene: truth.scene.clone(),
        observations,
    }
}

/// Hides a block whenever the segment from the camera center to its center
/// passes through another block first.
pub fn geometric_occlusion(truth: &GroundTruth) -> OcclusionSchedule {
    let mut schedule = OcclusionSchedule::new();
    for target in &truth.scene.blocks {
        let mut run: Option<usize> = None;
        for frame in 0..=truth.frame_count() {
            let hidden = frame < truth.frame_count() && is_hidden(truth, frame, &target.id);
            match (hidden, run) {
                (true, None) => run = Some(frame),
                (false, Some(start)) => {
                    schedule = schedule.with(target.id.clone(), start, frame - 1);
                    run = None;
                }
                _ => {}
            }
        }
    }
    schedule
}

fn is_hidden(truth: &GroundTruth, frame: usize, target: &str) -> bool {
    let Some(goal) = truth.object_to_camera(frame, target) else {
        return false;
    };
    let end = goal.translation;
    truth.scene.blocks.iter().filter(|b| b.id != target).any(|b| {
        truth
            .object_to_camera(frame, &b.id)
            .is_some_and(|p| segment_hits_box(&Vector3::zeros(), &end, b, &p))
    })
}

/// Slab test of the segment `a → b` against an oriented box.
fn segment_hits_box(a: &Vector3<f64>, b: &Vector3<f64>, block: &Block, pose: &Pose) -> bool {
    let inv = pose.inverse();
    let la = inv.transform_point(a);
    let lb = inv.transform_point(b);
    let d = lb - la;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        let h = block.half_extents[k];
        if d[k].abs() < 1e-15 {
            if la[k].abs() > h {
                return false;
            }
            continue;
        }
        let (mut s0, mut s1) = ((-h - la[k]) / d[k], (h - la[k]) / d[k]);
        if s0 > s1 {
            std::mem::swap(&mut s0, &mut s1);
        }
        t0 = t0.max(s0);
        t1 = t1.min(s1);
        if t0 > t1 {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub frames: usize,
    pub mean_rot_deg: f64,
    pub median_rot_deg: f64,
    pub mean_trans_m: f64,
    pub median_trans_m: f64,
    /// Mean distance between the 8 box corners under predicted vs true pose.
    pub mean_add_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub per_block: BTreeMap<String, BlockMetrics>,
    pub aggregate: BlockMetrics,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(rot: &mut [f64], trans: &mut [f64], add: &[f64]) -> BlockMetrics {
    let n = rot.len();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    BlockMetrics {
        frames: n,
        mean_rot_deg: mean(rot),
        mean_trans_m: mean(trans),
        mean_add_m: mean(add),
        median_rot_deg: median(rot),
        median_trans_m: median(trans),
    }
}

/// ADD between two poses of the same block.
pub fn add_metric(block: &Block, predicted: &Pose, truth: &Pose) -> f64 {
    let corners = block.corners();
    corners
        .iter()
        .map(|c| (predicted.transform_point(c) - truth.transform_point(c)).norm())
        .sum::<f64>()
        / corners.len() as f64
}

/// Scores tracked poses against ground truth, per block and overall.
pub fn evaluate(pred: &Trajectories, truth: &dyn TruthSource) -> Result<Metrics, BenchError> {
    let mut per_block = BTreeMap::new();
    let (mut all_rot, mut all_trans, mut all_add) = (Vec::new(), Vec::new(), Vec::new());
    for (id, traj) in pred {
        let block = truth.block(id).ok_or_else(|| BenchError::FrameMismatch {
            block: id.clone(),
            frame: traj.start_frame,
        })?;
        let (mut rot, mut trans, mut add) = (Vec::new(), Vec::new(), Vec::new());
        for (frame, e) in traj.frames() {
            let gt = truth.object_to_camera(frame, id).ok_or_else(|| BenchError::FrameMismatch {
                block: id.clone(),
                frame,
            })?;
            rot.push(e.pose.rotation.angle_to(&gt.rotation).to_degrees());
            trans.push((e.pose.translation - gt.translation).norm());
            add.push(add_metric(block, &e.pose, &gt));
        }
        all_rot.extend_from_slice(&rot);
        all_trans.extend_from_slice(&trans);
        all_add.extend_from_slice(&add);
        per_block.insert(id.clone(), summarize(&mut rot, &mut trans, &add));
    }
    Ok(Metrics {
        per_block,
        aggregate: summarize(&mut all_rot, &mut all_trans, &all_add),
    })
}

// ---------------------------------------------------------------------------
// Amplification study

/// Axis family for the anchor rotation error in [`amplification_study`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisModel {
    /// Uniform over axes perpendicular to the anchor→target offset. Every
    /// trial then moves the target by exactly the chord `2·d·sin(σ/2)`.
    #[default]
    Perpendicular,
    /// Uniform over the sphere. The expected error is `π/4` of the chord,
    /// since only the offset component normal to the axis is swept.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRow {
    pub distance_m: f64,
    pub sigma_rad: f64,
    pub trials: usize,
    pub mean_error_m: f64,
    pub std_error_m: f64,
    pub predicted_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AmplificationReport {
    pub rows: Vec<AmplificationRow>,
}

/// Chord length swept by a point `distance` from the rotation center.
pub fn predicted_amplification(distance: f64, sigma: f64) -> f64 {
    2.0 * distance * (0.5 * sigma).sin()
}

pub const MIN_STUDY_TRIALS: usize = 100;

fn random_pose<R: Rng>(rng: &mut R, spread: f64, src: &str, dst: &str) -> Pose {
    let axis: [f64; 3] = rng.sample(UnitSphere);
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let t = if spread > 0.0 {
        Vector3::from_fn(|_, _| rng.random_range(-spread..spread))
    } else {
        Vector3::zeros()
    };
    Pose::new(Rotation::from_axis_angle(&Vector3::from(axis), angle), t, src, dst)
}

fn unit_perpendicular<R: Rng>(v: &Vector3<f64>, rng: &mut R) -> Vector3<f64> {
    let n = v.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    e1 * phi.cos() + e2 * phi.sin()
}

/// One trial: anchor and target `distance` apart, camera moved at random,
/// anchor rotation at frame i off by `sigma`; returns the target's inferred
/// translation error.
pub fn amplification_trial<R: Rng>(distance: f64, sigma: f64, axis_model: AxisModel, rng: &mut R) -> f64 {
    let cam0 = random_pose(rng, 0.5, WORLD, CAMERA);
    let cam_i = random_pose(rng, 0.5, WORLD, CAMERA);
    let anchor_world = random_pose(rng, 0.3, "anchor", WORLD);
    let dir: [f64; 3] = rng.sample(UnitSphere);
    let mut target_world = random_pose(rng, 0.0, "target", WORLD);
    target_world.translation = anchor_world.translation + Vector3::from(dir) * distance;

    let anchor_0 = cam0.compose(&anchor_world).expect("chain");
    let anchor_i = cam_i.compose(&anchor_world).expect("chain");
    let target_0 = cam0.compose(&target_world).expect("chain");
    let target_i = cam_i.compose(&target_world).expect("chain");

    let noisy_anchor_i = match axis_model {
        AxisModel::Isotropic => perturb_rotation(&anchor_i, sigma, rng),
        AxisModel::Perpendicular => {
            let offset = target_i.translation - anchor_i.translation;
            let axis = unit_perpendicular(&offset, rng);
            Pose {
                rotation: Rotation::from_axis_angle(&axis, sigma) * anchor_i.rotation,
                ..anchor_i.clone()
            }
        }
    };
    let inferred = anchor_transfer(&anchor_0, &noisy_anchor_i, &target_0).expect("chain");
    (inferred.translation - target_i.translation).norm()
}

/// Monte Carlo of how an anchor's rotation error grows into the inferred
/// target's position error as the two blocks move apart.
pub fn amplification_study(
    distances: &[f64],
    sigma: f64,
    trials: usize,
    seed: u64,
    axis_model: AxisModel,
) -> Result<AmplificationReport, BenchError> {
    if trials < MIN_STUDY_TRIALS {
        return Err(BenchError::InvalidArgument(format!("need at least {MIN_STUDY_TRIALS} trials")));
    }
    if distances.iter().any(|d| !(*d > 0.0)) {
        return Err(BenchError::InvalidArgument("distances must be positive".into()));
    }
    if !(sigma >= 0.0) {
        return Err(BenchError::InvalidArgument("sigma must be non-negative".into()));
    }
    let rows = distances
        .iter()
        .enumerate()
        .map(|(di, &d)| {
            let errors: Vec<f64> = (0..trials)
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, di as u64, t as u64]));
                    amplification_trial(d, sigma, axis_model, &mut rng)
                })
                .collect();
            let mean = errors.iter().sum::<f64>() / trials as f64;
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            AmplificationRow {
                distance_m: d,
                sigma_rad: sigma,
                trials,
                mean_error_m: mean,
                std_error_m: var.sqrt(),
                predicted_m: predicted_amplification(d, sigma),
            }
        })
        .collect();
    Ok(AmplificationReport { rows })
}

impl AmplificationReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "distance_m,sigma_rad,trials,mean_error_m,std_error_m,predicted_m")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.12},{:.12},{:.12}",
                r.distance_m, r.sigma_rad, r.trials, r.mean_error_m, r.std_error_m, r.predicted_m
            )?;
        }
        out.flush()
    }

    /// Least-squares slope of mean error against distance.
    pub fn slope(&self) -> f64 {
        let n = self.rows.len() as f64;
        let mx = self.rows.iter().map(|r| r.distance_m).sum::<f64>() / n;
        let my = self.rows.iter().map(|r| r.mean_error_m).sum::<f64>() / n;
        let sxy: f64 = self.rows.iter().map(|r| (r.distance_m - mx) * (r.mean_error_m - my)).sum();
        let sxx: f64 = self.rows.iter().map(|r| (r.distance_m - mx).powi(2)).sum();
        sxy / sxx
    }
}
