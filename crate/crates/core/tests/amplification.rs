use formloop_core::bench::{amplification_study, predicted_amplification, AxisModel};
use proptest::prelude::*;

#[test]
fn errors_follow_chord_law_and_scale_linearly() {
    let sigma = 1f64.to_radians();
    let r = amplification_study(&[0.1, 0.2, 0.4], sigma, 500, 7, AxisModel::Perpendicular).unwrap();
    for row in &r.rows {
        let p = predicted_amplification(row.distance_m, sigma);
        assert!((row.mean_error_m - p).abs() < 0.1 * p);
    }
    let base = r.rows[0].mean_error_m;
    for (row, ratio) in r.rows.iter().zip([1.0, 2.0, 4.0]) {
        assert!((row.mean_error_m / base / ratio - 1.0).abs() < 0.15);
    }
    let ratio = r.rows[2].mean_error_m / r.rows[0].mean_error_m;
    assert!((ratio / 4.0 - 1.0).abs() < 0.15);
}

#[test]
fn reports_are_reproducible() {
    let a = amplification_study(&[0.1, 0.3], 0.02, 150, 5, AxisModel::Isotropic).unwrap();
    let b = amplification_study(&[0.1, 0.3], 0.02, 150, 5, AxisModel::Isotropic).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn slope_tracks_sigma_in_small_angle_regime(sigma_deg in 0.2f64..5.0, seed in any::<u64>()) {
        let sigma = sigma_deg.to_radians();
        let r = amplification_study(&[0.1, 0.2, 0.3, 0.4], sigma, 100, seed, AxisModel::Perpendicular).unwrap();
        prop_assert!((r.slope() / sigma - 1.0).abs() < 0.15);
    }
}
