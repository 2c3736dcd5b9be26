mod common;

use common::calibration_rates;

#[test]
fn two_thousand_requests_hit_configured_rates() {
    for seed in [1, 2, 3] {
        let (overall, per_label) = calibration_rates(2000, seed);
        assert!((overall - 0.24).abs() <= 0.03, "seed {seed}: overall {overall}");
        assert!((per_label["stucco"] - 0.45).abs() <= 0.03, "seed {seed}: stucco {}", per_label["stucco"]);
    }
}

#[test]
fn unconfigured_labels_share_the_remainder() {
    let (_, per_label) = calibration_rates(2000, 9);
    // (0.24 * 8 - 0.45) / 7
    let fill = 0.21;
    for (label, rate) in per_label.iter().filter(|(l, _)| *l != "stucco") {
        assert!((rate - fill).abs() <= 0.03, "{label}: {rate}");
    }
}
