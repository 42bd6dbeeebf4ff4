//! The tracking loop.
//!
//! An [`EstimatorPort`] produces per-frame observations. [`run_pass`] turns
//! them into contiguous trajectories, holding the last pose of occluded
//! blocks when the camera is fixed and inferring them from visible anchors
//! when it moves. [`refine_multi_pass`] repeats the pass with each pass's
//! output fed back as priors.

mod estimator;
mod tracker;

pub use estimator::{
    perturb_rotation, EstimatorPort, LogEstimator, NoiseModel, OcclusionInterval, OcclusionSchedule,
    PriorThreshold, SyntheticEstimator,
};
pub use tracker::{
    infer_occluded_moving, refine_multi_pass, run_pass, select_anchor, write_pass_metrics_csv, AnchorContext,
    AnchorRule, CameraMode, PartialTracks, PassMetrics, RefineOutcome, TrackError, TrackerConfig,
    MAX_REFINEMENT_PASSES,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{CameraTrajectory, GroundTruth, OrbitParams};
    use crate::scene::{Block, ColorTag, Provenance, Scene, TrackEntry, WORLD};
    use crate::se3::{Pose, Rotation};
    use nalgebra::Vector3;

    fn three_blocks() -> Scene {
        Scene::default()
            .with_block(Block::jenga("blue", ColorTag::Blue), Pose::new(Rotation::rot_z(0.2), Vector3::new(0.0, 0.0, 0.0075), "", WORLD))
            .with_block(Block::jenga("red", ColorTag::Red), Pose::new(Rotation::identity(), Vector3::new(0.1, 0.0, 0.0075), "", WORLD))
            .with_block(Block::jenga("yellow", ColorTag::Yellow), Pose::new(Rotation::rot_z(-0.4), Vector3::new(-0.2, 0.3, 0.0075), "", WORLD))
    }

    fn orbit_truth(frames: usize) -> GroundTruth {
        let camera = CameraTrajectory::orbit(&OrbitParams {
            radius: 0.6,
            height: 0.4,
            start_angle: 0.0,
            span: 1.2,
            frames,
            target: [0.0, 0.0, 0.0],
        });
        GroundTruth::static_scene(three_blocks(), camera)
    }

    #[test]
    fn anchor_rule_parsing() {
        assert_eq!("nearest".parse::<AnchorRule>().unwrap(), AnchorRule::NearestAtOcclusionStart);
        assert_eq!("fixed_id:red".parse::<AnchorRule>().unwrap(), AnchorRule::FixedId("red".into()));
        assert!("fixed_id:".parse::<AnchorRule>().is_err());
        assert!("loudest".parse::<AnchorRule>().is_err());
    }

    #[test]
    fn config_guards() {
        let mut c = TrackerConfig::default();
        assert_eq!(c.refinement_passes, 2);
        c.refinement_passes = 0;
        assert!(c.validate().is_err());
        c.refinement_passes = 11;
        assert!(c.validate().is_err());
        c.refinement_passes = 10;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn select_anchor_examples() {
        let scene = three_blocks();
        let ctx = AnchorContext::from_scene(&scene);
        let rule = AnchorRule::NearestAtOcclusionStart;
        assert_eq!(select_anchor(&["yellow"], "blue", &ctx, &rule).unwrap(), "yellow");
        assert_eq!(select_anchor(&["yellow", "red"], "blue", &ctx, &rule).unwrap(), "red");
        assert_eq!(select_anchor(&[], "blue", &ctx, &rule), Err(TrackError::EmptyCandidates));

        let mut tie = AnchorContext::default();
        tie.centers.insert("t".into(), Vector3::zeros());
        tie.centers.insert("b".into(), Vector3::new(1.0, 0.0, 0.0));
        tie.centers.insert("a".into(), Vector3::new(0.0, -1.0, 0.0));
        assert_eq!(select_anchor(&["b", "a"], "t", &tie, &rule).unwrap(), "a");

        tie.confidence.insert("a".into(), 0.2);
        tie.confidence.insert("b".into(), 0.9);
        assert_eq!(select_anchor(&["a", "b"], "t", &tie, &AnchorRule::HighestConfidence).unwrap(), "b");
        assert!(select_anchor(&["a"], "t", &tie, &AnchorRule::FixedId("b".into())).is_err());
    }

    #[test]
    fn noiseless_single_pass_matches_truth() {
        let truth = orbit_truth(12);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 1);
        let config = TrackerConfig { refinement_passes: 1, ..Default::default() };
        let out = run_pass(&est, &truth.scene, &config, 12, 1, None).unwrap();
        for (id, t) in &out {
            assert_eq!(t.start_frame, 0);
            for (f, e) in t.frames() {
                let gt = truth.object_to_camera(f, id).unwrap();
                assert!(e.pose.rotation.angle_to(&gt.rotation) < 1e-9);
                assert!((e.pose.translation - gt.translation).norm() < 1e-9);
                assert_eq!(e.provenance, Provenance::Observed);
            }
        }
    }

    #[test]
    fn hold_last_is_bitwise() {
        let truth = GroundTruth::static_scene(three_blocks(), CameraTrajectory::fixed(&orbit_truth(1).camera.poses[0], 30));
        let noise = NoiseModel { rot_sigma: 0.05, trans_sigma: 0.002, ..Default::default() };
        let est = SyntheticEstimator::new(&truth, noise, 9).with_occlusion(OcclusionSchedule::new().with("blue", 10, 20));
        let config = TrackerConfig { refinement_passes: 1, ..Default::default() };
        let out = run_pass(&est, &truth.scene, &config, 30, 1, None).unwrap();
        let blue = &out["blue"];
        let last = blue.get(9).unwrap();
        assert_eq!(last.provenance, Provenance::Observed);
        for f in 10..=20 {
            let e = blue.get(f).unwrap();
            assert_eq!(e.provenance, Provenance::HeldLast);
            assert_eq!(e.pose.translation, last.pose.translation);
            assert_eq!(e.pose.rotation.to_quaternion(), last.pose.rotation.to_quaternion());
        }
        assert_eq!(blue.get(21).unwrap().provenance, Provenance::Observed);
    }

    #[test]
    fn leading_absence_starts_trajectory_late() {
        let truth = orbit_truth(10);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 2)
            .with_occlusion(OcclusionSchedule::new().with("red", 0, 3));
        let out = run_pass(&est, &truth.scene, &TrackerConfig::default(), 10, 1, None).unwrap();
        assert_eq!(out["red"].start_frame, 4);
        assert_eq!(out["red"].entries.len(), 6);

        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 2)
            .with_occlusion(OcclusionSchedule::new().with("red", 0, 9));
        assert_eq!(
            run_pass(&est, &truth.scene, &TrackerConfig::default(), 10, 1, None),
            Err(TrackError::NoObservationsEver("red".into()))
        );
    }

    #[test]
    fn moving_camera_inference_is_exact_without_noise() {
        let truth = orbit_truth(40);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 3)
            .with_occlusion(OcclusionSchedule::new().with("blue", 5, 25).with("red", 0, 2));
        let config = TrackerConfig { mode: CameraMode::MovingCamera, refinement_passes: 1, ..Default::default() };
        let out = run_pass(&est, &truth.scene, &config, 40, 1, None).unwrap();
        for (id, t) in &out {
            assert_eq!(t.entries.len(), 40);
            for (f, e) in t.frames() {
                let gt = truth.object_to_camera(f, id).unwrap();
                assert!((e.pose.translation - gt.translation).norm() < 1e-12, "{id}@{f}");
                assert!(e.pose.rotation.angle_to(&gt.rotation) < 1e-9);
            }
        }
        assert_eq!(out["blue"].get(10).unwrap().provenance, Provenance::AnchorInferred { anchor: "red".into() });
        // Red's leading gap is filled backwards from its first sighting; blue is nearest.
        assert_eq!(out["red"].get(0).unwrap().provenance, Provenance::AnchorInferred { anchor: "blue".into() });
    }

    #[test]
    fn no_visible_anchor_is_reported() {
        let truth = orbit_truth(10);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 3).with_occlusion(
            OcclusionSchedule::new().with("blue", 4, 6).with("red", 5, 5).with("yellow", 5, 5),
        );
        let config = TrackerConfig { mode: CameraMode::MovingCamera, ..Default::default() };
        assert_eq!(
            run_pass(&est, &truth.scene, &config, 10, 1, None),
            Err(TrackError::NoVisibleAnchor { frame: 5, target: "blue".into() })
        );
    }

    #[test]
    fn anchor_switches_when_nearest_disappears() {
        let truth = orbit_truth(20);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 3)
            .with_occlusion(OcclusionSchedule::new().with("blue", 5, 15).with("red", 10, 12));
        let config = TrackerConfig { mode: CameraMode::MovingCamera, refinement_passes: 1, ..Default::default() };
        let out = run_pass(&est, &truth.scene, &config, 20, 1, None).unwrap();
        let anchor = |f| match &out["blue"].get(f).unwrap().provenance {
            Provenance::AnchorInferred { anchor } => anchor.clone(),
            p => panic!("{p:?}"),
        };
        assert_eq!(anchor(9), "red");
        assert_eq!(anchor(11), "yellow");
        assert_eq!(anchor(13), "red");
    }

    #[test]
    fn infer_from_partial_tracks_directly() {
        let truth = orbit_truth(6);
        let mut tracks = PartialTracks::new();
        for id in ["blue", "red"] {
            let slots = (0..6)
                .map(|f| {
                    (id == "red" || !(2..4).contains(&f)).then(|| TrackEntry {
                        pose: truth.object_to_camera(f, id).unwrap(),
                        provenance: Provenance::Observed,
                        confidence: Some(1.0),
                    })
                })
                .collect();
            tracks.insert(id.to_string(), slots);
        }
        let out = infer_occluded_moving(&tracks, &AnchorRule::FixedId("red".into())).unwrap();
        let e = out["blue"].get(3).unwrap();
        assert_eq!(e.provenance, Provenance::AnchorInferred { anchor: "red".into() });
        assert!((e.pose.translation - truth.object_to_camera(3, "blue").unwrap().translation).norm() < 1e-12);
    }

    #[test]
    fn refinement_threads_priors_and_improves() {
        let truth = GroundTruth::static_scene(three_blocks(), CameraTrajectory::fixed(&orbit_truth(1).camera.poses[0], 25));
        let noise = NoiseModel { rot_sigma: 5f64.to_radians(), trans_sigma: 0.001, prior_coupling: 0.5, ..Default::default() };
        let est = SyntheticEstimator::new(&truth, noise, 17);
        let one = TrackerConfig { refinement_passes: 1, ..Default::default() };
        let single = run_pass(&est, &truth.scene, &one, 25, 1, None).unwrap();
        let multi1 = refine_multi_pass(&est, &truth.scene, &one, 25, Some(&truth)).unwrap();
        assert_eq!(single, multi1.trajectories);

        let two = TrackerConfig { refinement_passes: 2, ..Default::default() };
        let outcome = refine_multi_pass(&est, &truth.scene, &two, 25, Some(&truth)).unwrap();
        assert!(outcome.mean_rot_err_deg(2).unwrap() < outcome.mean_rot_err_deg(1).unwrap());
        assert_eq!(outcome.trajectories["blue"].get(3).unwrap().provenance, Provenance::PriorRefined { pass: 2 });

        let again = refine_multi_pass(&est, &truth.scene, &two, 25, Some(&truth)).unwrap();
        assert_eq!(outcome, again);
    }

    #[test]
    fn noiseless_passes_are_a_fixed_point() {
        let truth = orbit_truth(8);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 5);
        let config = TrackerConfig { refinement_passes: 3, ..Default::default() };
        let p1 = run_pass(&est, &truth.scene, &config, 8, 1, None).unwrap();
        let p2 = run_pass(&est, &truth.scene, &config, 8, 2, Some(&p1)).unwrap();
        let p3 = run_pass(&est, &truth.scene, &config, 8, 3, Some(&p2)).unwrap();
        for id in p1.keys() {
            for ((_, a), ((_, b), (_, c))) in p1[id].frames().zip(p2[id].frames().zip(p3[id].frames())) {
                assert_eq!(a.pose, b.pose);
                assert_eq!(b.pose, c.pose);
            }
        }
    }

    #[test]
    fn window_limits_tracked_frames() {
        let truth = orbit_truth(10);
        let est = SyntheticEstimator::new(&truth, NoiseModel::noiseless(), 5);
        let config = TrackerConfig { window: Some(4), ..Default::default() };
        let out = run_pass(&est, &truth.scene, &config, 10, 1, None).unwrap();
        assert!(out.values().all(|t| t.entries.len() == 4));
    }

    #[test]
    fn log_estimator_replays() {
        let truth = orbit_truth(5);
        let est = SyntheticEstimator::new(&truth, NoiseModel { rot_sigma: 0.1, ..Default::default() }, 5);
        let log = crate::bench::generate_observations(&truth, &est);
        let replay = LogEstimator::new(&log);
        let prior = Pose::identity("blue", "camera");
        assert_eq!(replay.estimate(2, "blue", Some(&prior)), replay.estimate(2, "blue", None));
        assert_eq!(replay.estimate(2, "blue", None), est.estimate(2, "blue", None));
        assert!(!replay.estimate(99, "blue", None).visible);
    }
}
