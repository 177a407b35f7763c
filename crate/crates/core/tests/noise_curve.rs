//! Noise curves on signal-dependent noise with a known affine variance law.

use lowlight::noise::{fit_affine_noise_model, noise_curve, CurveBinning, CurveConfig};
use lowlight::rng::{add_gaussian_noise, add_noise_with, stream_id};
use lowlight::synth::ramp_gt8;
use lowlight::MultiImage;

const A: f64 = 0.05;
const B: f64 = 2.0;

/// Ramp truth over [4, 240], where the noisy capture never clips and both
/// ends fall on bin edges. `sr` is the reference and clean noise.
fn scene(w: usize, h: usize, sr: f64, seed: u64) -> (MultiImage, MultiImage, MultiImage) {
    let gt = ramp_gt8(w, h, 4.0, 240.0).unwrap();
    let r = add_gaussian_noise(&gt, sr, seed, stream_id(&[1])).unwrap();
    let c = add_gaussian_noise(&gt, sr, seed, stream_id(&[2])).unwrap();
    let n = add_noise_with(&gt, seed, stream_id(&[3]), |_, t| (A * t + B).sqrt()).unwrap();
    (n, r, c)
}

fn law(t: f64) -> f64 {
    A * t + B
}

#[test]
fn every_bin_follows_the_variance_law() {
    // Exact reference: each bin holds a uniform slice of the ramp, so its
    // expected variance is the law at the bin center.
    let (n, r, c) = scene(1024, 512, 0.0, 1);
    let curve = noise_curve(&n, &r, &c, &CurveConfig::default(), None).unwrap();
    // 118 full bins plus the last ramp column at exactly 240
    assert_eq!(curve.bins.len(), 119);
    for b in &curve.bins {
        let t = b.intensity_center;
        assert!(
            (b.variance / law(t) - 1.0).abs() < 0.05,
            "bin {t}: {} vs {}",
            b.variance,
            law(t)
        );
        assert!(b.support >= 1000);
    }
    let fit = fit_affine_noise_model(&curve).unwrap();
    assert!((fit.a / A - 1.0).abs() < 0.05, "a = {}", fit.a);
    assert!((fit.b / B - 1.0).abs() < 0.10, "b = {}", fit.b);
}

#[test]
fn noisy_reference_is_corrected_away_from_the_ramp_ends() {
    // Near the ends a noisy reference sorts tail pixels into bins the truth
    // never reaches; 4 sigma inside, the correction leaves the law intact.
    let (n, r, c) = scene(1024, 512, 1.0, 2);
    let curve = noise_curve(&n, &r, &c, &CurveConfig::default(), None).unwrap();
    let inner: Vec<_> = curve
        .bins
        .iter()
        .filter(|b| b.intensity_center > 8.0 && b.intensity_center < 236.0)
        .collect();
    assert!(inner.len() > 100);
    for b in inner {
        let t = b.intensity_center;
        assert!(
            (b.variance / law(t) - 1.0).abs() < 0.05,
            "bin {t}: {} vs {}",
            b.variance,
            law(t)
        );
    }
    let fit = fit_affine_noise_model(&curve).unwrap();
    assert!((fit.a / A - 1.0).abs() < 0.05, "a = {}", fit.a);
    assert!((fit.b / B - 1.0).abs() < 0.10, "b = {}", fit.b);
}

#[test]
fn single_channel_binning_uses_one_channel() {
    let (n, r, c) = scene(512, 256, 1.0, 2);
    let cfg = CurveConfig {
        binning: CurveBinning::Channel(1),
        ..CurveConfig::default()
    };
    let one = noise_curve(&n, &r, &c, &cfg, None).unwrap();
    let pooled = noise_curve(&n, &r, &c, &CurveConfig::default(), None).unwrap();
    let total = |cv: &lowlight::noise::NoiseCurve| cv.bins.iter().map(|b| b.support).sum::<usize>();
    assert!(total(&one) * 2 < total(&pooled));
}

#[test]
fn support_floor_drops_sparse_bins() {
    let (n, r, c) = scene(256, 64, 1.0, 3);
    let cfg = CurveConfig {
        min_support: 100_000,
        ..CurveConfig::default()
    };
    assert!(noise_curve(&n, &r, &c, &cfg, None).is_err());
}
