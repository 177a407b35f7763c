//! Property tests for codecs, filters, statistics and harness invariants.

use lowlight::codec::{decode_bmp24, decode_pnm, encode_bmp8, encode_pnm16, encode_pnm8};
use lowlight::harness::denoise::{best_sigma, EvalRow};
use lowlight::harness::plot::{histogram, quantile_sorted, BoxStats};
use lowlight::metrics::{psnr_from_sigma, ssim};
use lowlight::noise::{sigma_clean, GateVerdict};
use lowlight::raster::{gaussian_blur, gaussian_blur_with, masked_diff_stats, percentile};
use lowlight::{Domain, Execution, MultiImage, PixelMask, RasterPlane};
use proptest::prelude::*;

fn image(w: usize, h: usize, domain: Domain, data: &[u32]) -> MultiImage {
    let max = domain.max_value() as u32 + 1;
    let plane = |c: usize| {
        RasterPlane::new(
            w,
            h,
            (0..w * h)
                .map(|i| (data[(3 * i + c) % data.len()] % max) as f64)
                .collect(),
        )
        .unwrap()
    };
    MultiImage::new([plane(0), plane(1), plane(2)], domain).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, Vec<u32>)> {
    (1usize..24, 1usize..24, prop::collection::vec(any::<u32>(), 1..256))
}

proptest! {
    #[test]
    fn pnm8_round_trips((w, h, data) in dims()) {
        let img = image(w, h, Domain::Aligned8, &data);
        prop_assert_eq!(decode_pnm(&encode_pnm8(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn pnm16_round_trips((w, h, data) in dims()) {
        let img = image(w, h, Domain::Raw16, &data);
        let bytes = encode_pnm16(&img).unwrap();
        prop_assert_eq!(bytes.len(), format!("P6\n{w} {h}\n65535\n").len() + 6 * w * h);
        prop_assert_eq!(decode_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn bmp_round_trips_with_padded_rows((w, h, data) in dims()) {
        let img = image(w, h, Domain::Aligned8, &data);
        let bytes = encode_bmp8(&img).unwrap();
        let stride = (3 * w).div_ceil(4) * 4;
        prop_assert_eq!(bytes.len(), 54 + stride * h);
        prop_assert_eq!(decode_bmp24(&bytes).unwrap(), img);
    }

    #[test]
    fn truncated_pnm_is_rejected((w, h, data) in dims(), cut in 1usize..64) {
        let img = image(w, h, Domain::Raw16, &data);
        let bytes = encode_pnm16(&img).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_pnm(&bytes[..keep]).is_err());
    }

    #[test]
    fn blur_commutes_with_affine_maps(
        (w, h, data) in (2usize..20, 2usize..20, prop::collection::vec(0u32..256, 1..100)),
        a in 0.1f64..3.0, b in -50.0f64..50.0, sigma in 0.3f64..4.0,
    ) {
        let p = RasterPlane::new(w, h, (0..w * h).map(|i| data[i % data.len()] as f64).collect()).unwrap();
        let lhs = gaussian_blur(&p.map(|v| a * v + b).unwrap(), sigma).unwrap();
        let rhs = gaussian_blur(&p, sigma).unwrap().map(|v| a * v + b).unwrap();
        for (x, y) in lhs.samples().iter().zip(rhs.samples()) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
        // within the input range
        let (lo, hi) = p.min_max();
        let blurred = gaussian_blur(&p, sigma).unwrap();
        prop_assert!(blurred.samples().iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    #[test]
    fn blur_is_identical_on_both_paths((w, h, data) in dims(), sigma in 0.5f64..6.0) {
        let img = image(w, h, Domain::Aligned8, &data);
        let p = img.channel(0);
        let s = gaussian_blur_with(p, sigma, Execution::Sequential).unwrap();
        let q = gaussian_blur_with(p, sigma, Execution::Parallel).unwrap();
        prop_assert_eq!(s, q);
    }

    #[test]
    fn percentile_is_monotone((w, h, data) in dims(), p1 in 0.5f64..100.0, p2 in 0.5f64..100.0) {
        let img = image(w, h, Domain::Aligned8, &data);
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let (a, b) = (percentile(&img, lo).unwrap(), percentile(&img, hi).unwrap());
        prop_assert!(a <= b);
        // empirical CDF inversion: at least p% of samples lie at or below
        let mut all: Vec<f64> = img.pooled_samples().collect();
        all.sort_by(f64::total_cmp);
        let below = all.iter().filter(|&&v| v <= b).count() as f64;
        prop_assert!(below * 100.0 >= hi * all.len() as f64 - 1e-6);
        let strictly = all.iter().filter(|&&v| v < b).count() as f64;
        prop_assert!(strictly * 100.0 < hi * all.len() as f64 + 1e-6);
    }

    #[test]
    fn diff_stats_are_symmetric((w, h, d1) in dims(), d2 in prop::collection::vec(any::<u32>(), 1..256), bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let a = image(w, h, Domain::Aligned8, &d1);
        let b = image(w, h, Domain::Aligned8, &d2);
        let mut mbits: Vec<bool> = (0..w * h).map(|i| bits[i % bits.len()]).collect();
        mbits[0] = true;
        let mask = PixelMask::from_bits(w, h, mbits).unwrap();
        let ab = masked_diff_stats(&a, &b, Some(&mask)).unwrap();
        let ba = masked_diff_stats(&b, &a, Some(&mask)).unwrap();
        for (x, y) in ab.variances().iter().zip(ba.variances()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            prop_assert!(*x >= 0.0);
        }
        prop_assert!((ab.pooled.mean + ba.pooled.mean).abs() < 1e-9);
        prop_assert_eq!(ab.support(), mask.count());
    }

    #[test]
    fn ssim_of_self_is_one((w, h, data) in (11usize..24, 11usize..24, prop::collection::vec(any::<u32>(), 1..256))) {
        let img = image(w, h, Domain::Aligned8, &data);
        prop_assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clean_pair_sigma_is_shift_invariant((w, h, d1) in dims(), d2 in prop::collection::vec(0u32..200, 1..64), shift in 0.0f64..50.0) {
        let a = image(w, h, Domain::Aligned8, &d1);
        let b = image(w, h, Domain::Aligned8, &d2);
        let shifted = MultiImage::clamped(b.channels().clone().map(|p| p.map(|v| v + shift).unwrap()), Domain::Aligned8).unwrap();
        let b_in_range = b.pooled_samples().all(|v| v + shift <= 255.0);
        prop_assume!(b_in_range);
        let s1 = sigma_clean(&a, &b, None).unwrap().pooled;
        let s2 = sigma_clean(&a, &shifted, None).unwrap().pooled;
        prop_assert!((s1 - s2).abs() < 1e-6 * (1.0 + s1));
    }

    #[test]
    fn psnr_is_decreasing_and_gate_is_a_threshold(s1 in 0.01f64..100.0, s2 in 0.01f64..100.0, thr in 20.0f64..45.0) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(psnr_from_sigma(lo).unwrap() >= psnr_from_sigma(hi).unwrap());
        let g = GateVerdict::from_sigma(s1, thr).unwrap();
        prop_assert_eq!(g.pass, g.clean_pair_psnr >= thr);
    }

    #[test]
    fn histogram_conserves_counts(values in prop::collection::vec(-100.0f64..100.0, 0..200), width in 0.1f64..20.0) {
        let bins = histogram(&values, width).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), values.len());
        prop_assert!(bins.iter().all(|b| b.count > 0));
        prop_assert!(bins.windows(2).all(|p| p[0].hi <= p[1].lo + 1e-9));
    }

    #[test]
    fn box_quantiles_match_sorted_oracle(values in prop::collection::vec(-1e3f64..1e3, 1..100)) {
        let b = BoxStats::of(&values).unwrap();
        let mut s = values.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let q = |p: f64| {
            let h = (n - 1) as f64 * p;
            let i = h.floor() as usize;
            let j = (i + 1).min(n - 1);
            s[i] + (h - i as f64) * (s[j] - s[i])
        };
        prop_assert_eq!(b.min, s[0]);
        prop_assert_eq!(b.max, s[n - 1]);
        for (got, p) in [(b.q1, 0.25), (b.median, 0.5), (b.q3, 0.75)] {
            prop_assert!((got - q(p)).abs() < 1e-9 * (1.0 + got.abs()));
        }
        prop_assert_eq!(quantile_sorted(&s, 1.0), Some(s[n - 1]));
    }

    #[test]
    fn best_sigma_reproduces_argmax(psnrs in prop::collection::vec(10.0f64..40.0, 1..8)) {
        let grid: Vec<f64> = (1..=psnrs.len()).map(|k| 5.0 * k as f64).collect();
        let rows: Vec<EvalRow> = grid.iter().zip(&psnrs).map(|(&s, &p)| EvalRow {
            scene_id: "s".into(),
            camera_tag: "c".into(),
            noisy_index: 0,
            denoiser: "d".into(),
            sigma_param: s,
            ok: true,
            message: None,
            psnr_before: 10.0,
            psnr_after: Some(p),
            ssim_before: 0.1,
            ssim_after: Some(0.2),
        }).collect();
        let best = best_sigma(&rows, &grid, |r| r.scene_id.clone());
        let max = psnrs.iter().cloned().fold(f64::MIN, f64::max);
        let first = psnrs.iter().position(|&p| p == max).unwrap();
        prop_assert_eq!(best.len(), 1);
        prop_assert_eq!(best[0].sigma_param, grid[first]);
        prop_assert_eq!(best[0].psnr_after, max);
    }
}
