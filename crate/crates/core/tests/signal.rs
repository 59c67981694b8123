mod common;

use common::filter_oracle::{gain, gain_db, measured_gain};
use neurovis::signal::{
    design_filter, filtered_gaussian_noise, mean_var, preprocess, welch, zscore, EegSegment, FilterKind, PrepConfig,
};
use proptest::prelude::*;

#[test]
fn bandpass_edges_and_dc_match_the_oracle() {
    let bp = design_filter(FilterKind::Bandpass, 2, &[5.0, 95.0], 1000.0).unwrap();
    for f in [5.0, 95.0] {
        assert!((gain_db(&bp, f) + 3.0103).abs() <= 0.1, "{f} Hz: {}", gain_db(&bp, f));
    }
    assert_eq!(gain(&bp, 0.0), 0.0);
    assert!(bp.is_stable());
}

#[test]
fn notch_rejects_mains_and_passes_neighbours() {
    let notch = design_filter(FilterKind::Notch, 1, &[50.0, 2.0], 1000.0).unwrap();
    assert!(gain_db(&notch, 50.0) <= -20.0);
    for f in [40.0, 60.0] {
        assert!(gain_db(&notch, f) >= -1.0, "{f} Hz");
    }
}

#[test]
fn filtering_realizes_the_designed_response() {
    let bp = design_filter(FilterKind::Bandpass, 2, &[5.0, 95.0], 1000.0).unwrap();
    for f in [3.0, 20.0, 70.0, 150.0] {
        let (m, g) = (measured_gain(&bp, f, 8.0), gain(&bp, f));
        assert!((m - g).abs() < 1e-3, "{f} Hz: measured {m}, designed {g}");
    }
}

#[test]
fn replacement_noise_matches_requested_moments() {
    let x = filtered_gaussian_noise(0.7, 2.5, 20_000, 1000.0, 100.0, 3).unwrap();
    let (m, v) = mean_var(&x);
    assert!((m - 0.7).abs() < 0.1, "mean {m}");
    // White noise through the low-pass keeps sigma^2 * sum(h_k^2) of its variance.
    let lp = design_filter(FilterKind::Lowpass, 2, &[100.0], 1000.0).unwrap();
    let mut impulse = vec![0.0; 2000];
    impulse[0] = 1.0;
    let energy: f64 = lp.filter(&impulse).iter().map(|h| h * h).sum();
    assert!((v / (2.5 * energy) - 1.0).abs() < 0.1, "variance {v}, expected {}", 2.5 * energy);
    let s = welch(&x, 1000.0, 256).unwrap();
    assert!(s.band_power(0.0, 100.0) > 20.0 * s.band_power(250.0, 500.0));
}

#[test]
fn welch_finds_a_pure_tone() {
    let x: Vec<f64> = (0..4000).map(|i| (2.0 * std::f64::consts::PI * 75.0 * i as f64 / 1000.0).sin()).collect();
    let s = welch(&x, 1000.0, 500).unwrap();
    assert!((s.peak_frequency() - 75.0).abs() <= 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn designed_filters_are_stable(lo in 1.0f64..200.0, width in 5.0f64..200.0, order in 1usize..5) {
        let spec = design_filter(FilterKind::Bandpass, order, &[lo, lo + width], 1000.0).unwrap();
        prop_assert!(spec.is_stable());
        prop_assert!((gain_db(&spec, lo) + 3.0103).abs() < 0.1);
    }

    #[test]
    fn zscored_channels_have_zero_mean_unit_variance(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let x = filtered_gaussian_noise(3.0, scale, 2 * 300, 1000.0, 100.0, seed).unwrap();
        let seg = zscore(&EegSegment::new(2, 300, 1000.0, x).unwrap()).unwrap();
        for c in 0..2 {
            let (m, v) = mean_var(seg.channel(c));
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn preprocessing_yields_the_trimmed_length(seed in any::<u64>()) {
        let x = filtered_gaussian_noise(0.0, 1.0, 3 * 500, 1000.0, 100.0, seed).unwrap();
        let out = preprocess(&EegSegment::new(3, 500, 1000.0, x).unwrap(), &PrepConfig::default()).unwrap();
        prop_assert_eq!((out.channels, out.samples), (3, 440));
        prop_assert!(out.data.iter().all(|v| v.is_finite()));
    }
}
