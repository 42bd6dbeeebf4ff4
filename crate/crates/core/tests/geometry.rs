use formloop_core::camera::{depth_from_bbox, sphere_bbox, sphere_center_from_bbox, CameraIntrinsics};
use formloop_core::ingest::{normalize, PointCloud};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
}

#[test]
fn silhouette_depth_holds_across_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = 0.04;
    for _ in 0..10_000 {
        let z = rng.random_range(3.0 * r..10.0 * r);
        let c = Vector3::new(z * rng.random_range(-0.4..0.4), z * rng.random_range(-0.3..0.3), z);
        let b = sphere_bbox(&c, r, &k()).unwrap();
        let got = sphere_center_from_bbox(&b, 2.0 * r, &k()).unwrap();
        let tol = if z >= 5.0 * r { 0.02 } else { 0.05 };
        assert!(((got.z - z) / z).abs() < tol);
        assert!((got - c).norm() < 1e-9 * z);
    }
}

#[test]
fn small_angle_rule_error_on_axis() {
    let r = 0.04;
    for (mult, expected) in [(3.0, 0.0572), (5.0, 0.0202)] {
        let z = mult * r;
        let b = sphere_bbox(&Vector3::new(0.0, 0.0, z), r, &k()).unwrap();
        let d = depth_from_bbox(&b, 2.0 * r, &k()).unwrap();
        assert!(((z - d) / z - expected).abs() < 5e-4, "{mult}r");
    }
}

fn cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = Vector3::new(rng.random_range(0.01..5.0), rng.random_range(0.01..5.0), rng.random_range(0.01..5.0));
    let shift = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    PointCloud::new(
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).component_mul(&scale) + shift)
            .collect(),
    )
}

proptest! {
    #[test]
    fn normalization_hits_unit_radius_and_is_idempotent(seed in any::<u64>(), n in 2usize..400) {
        let (once, _) = normalize(&cloud(seed, n)).unwrap();
        let radius = once.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        prop_assert!((radius - 1.0).abs() < 1e-9);
        let (_, again) = normalize(&once).unwrap();
        prop_assert!(Vector3::from(again.center).norm() < 1e-9);
        prop_assert!((again.radius - 1.0).abs() < 1e-9);
    }
}
