//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lowlight::alignment::{AlignmentConfig, ChannelSelection, ReferenceFrame};
use lowlight::codec::{decode_bmp24, decode_pnm, read_pnm16, write_bmp8, write_pnm16, write_pnm8};
use lowlight::harness::calibration::{
    calibration_recipe, run_calibration, synthetic_calibration_scene, CalibrationConfig,
};
use lowlight::harness::denoise::{run_denoise_eval, DenoiserSpec, EvalConfig, EvalInputs, EvalScene};
use lowlight::harness::validation::{generated_truths, run_synthetic_validation, ValidationConfig};
use lowlight::metrics::{psnr_from_sigma, psnr_mse, ssim};
use lowlight::noise::{
    fit_affine_noise_model, noise_curve, quality_gate, sigma_clean, sigma_difference, sigma_noisy, CurveConfig,
    GateVerdict, NoiseMethod,
};
use lowlight::raster::{gaussian_blur, scale_clamp};
use lowlight::rng::{add_gaussian_noise, add_noise_with, stream_id, GaussianRng};
use lowlight::synth::{ramp_gt8, textured_gt16, RAW_SCALE};
use lowlight::{Domain, Execution, MultiImage, RasterPlane};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gt8_of(gt16: &MultiImage) -> MultiImage {
    scale_clamp(gt16, [1.0 / RAW_SCALE; 3], 0.0, 255.0).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

fn estimator_exactness() -> Outcome {
    let start = Instant::now();
    // A 1 MP ramp in [40, 200] keeps noise of 10 levels clear of clipping.
    let gt = ramp_gt8(1024, 1024, 40.0, 200.0).unwrap();
    let (mut ours_n, mut ours_c, mut std_n, mut std_c) = (vec![], vec![], vec![], vec![]);
    for seed in 0..50u64 {
        let r = add_gaussian_noise(&gt, 3.0, seed, stream_id(&[1])).unwrap();
        let c = add_gaussian_noise(&gt, 3.0, seed, stream_id(&[2])).unwrap();
        let n = add_gaussian_noise(&gt, 10.0, seed, stream_id(&[3])).unwrap();
        ours_n.push(sigma_noisy(&n, &r, &c, None).unwrap().pooled / 10.0 - 1.0);
        ours_c.push(sigma_clean(&r, &c, None).unwrap().pooled / 3.0 - 1.0);
        let m = NoiseMethod::StandardDifference;
        std_n.push(sigma_difference(&n, &r, None, m).unwrap().pooled / 10.0 - 1.0);
        std_c.push(sigma_difference(&c, &r, None, m).unwrap().pooled / 3.0 - 1.0);
    }
    let elapsed = start.elapsed();
    let (en, ec) = (109f64.sqrt() / 10.0 - 1.0, 2f64.sqrt() - 1.0);
    let detail = format!(
        "ours noisy {:.4}% clean {:.4}%; standard noisy {:+.3}% (expect {:+.3}%) clean {:+.3}% (expect {:+.3}%); {:.1}s",
        100.0 * mean_abs(&ours_n),
        100.0 * mean_abs(&ours_c),
        100.0 * mean(&std_n),
        100.0 * en,
        100.0 * mean(&std_c),
        100.0 * ec,
        elapsed.as_secs_f64()
    );
    check(
        mean_abs(&ours_n) < 0.005
            && mean_abs(&ours_c) < 0.005
            && (mean(&std_n) - en).abs() < 0.005
            && (mean(&std_c) - ec).abs() < 0.005
            && elapsed < Duration::from_secs(120),
        detail,
    )
}

fn validation_through_alignment() -> Outcome {
    let start = Instant::now();
    let truths = generated_truths(3, 1024, 1024, 41).unwrap();
    let cfg = ValidationConfig {
        trials: 10,
        seed: 41,
        ..ValidationConfig::default()
    };
    let report = run_synthetic_validation(&truths, &cfg).unwrap();
    let elapsed = start.elapsed();
    let s = &report.summary;
    let v = |e: Option<f64>| e.unwrap_or(f64::NAN);
    let (on, oc) = (v(s.ours_noisy.mean_abs), v(s.ours_clean.mean_abs));
    let (sn, sc) = (v(s.standard_noisy.mean_abs), v(s.standard_clean.mean_abs));
    let detail = format!(
        "{} trials: ours noisy {:.3}% clean {:.3}%; standard noisy {:.3}% clean {:.3}%; {:.1}s",
        s.trials,
        100.0 * on,
        100.0 * oc,
        100.0 * sn,
        100.0 * sc,
        elapsed.as_secs_f64()
    );
    check(
        s.trials == 30 && on < 0.01 && oc < 0.01 && sn > 0.03 && sc > 0.03 && elapsed < Duration::from_secs(600),
        detail,
    )
}

fn alignment_recovery() -> Outcome {
    let cfg = AlignmentConfig::default();
    let mut rng = GaussianRng::new(77, 0);
    let (mut worst_rel, mut worst_steps) = (0f64, 0f64);
    for case in 0..20u64 {
        let gt8 = gt8_of(&textured_gt16(192, 192, stream_id(&[77, case])).unwrap());
        let r8 = add_gaussian_noise(&gt8, 3.0, case, stream_id(&[1])).unwrap();
        let gains: [f64; 3] = std::array::from_fn(|_| 0.005 * 10f64.powf(rng.uniform()));
        let sigma = 10.0 * rng.uniform();
        let scaled = MultiImage::new(
            std::array::from_fn(|c| gt8.channel(c).map(|v| v / gains[c]).unwrap()),
            Domain::Raw16,
        )
        .unwrap();
        let raw = add_noise_with(&scaled, case, stream_id(&[2]), |c, _| sigma / gains[c]).unwrap();
        let frame = ReferenceFrame::prepare(&r8, &cfg).unwrap();
        for (c, &gain) in gains.iter().enumerate() {
            let est = frame.estimate(&raw, ChannelSelection::Channel(c), &cfg).unwrap();
            worst_rel = worst_rel.max((est.alpha / gain - 1.0).abs());
            let blurred = gaussian_blur(raw.channel(c), cfg.blur_sigma).unwrap();
            let (rb, bits) = (frame.blurred(c), frame.mask(c).bits());
            let objective = |a: f64| -> f64 {
                rb.samples()
                    .iter()
                    .zip(blurred.samples())
                    .zip(bits)
                    .filter(|(_, &b)| b)
                    .map(|((&r, &v), _)| (r - (a * v).clamp(0.0, 255.0)).powi(2))
                    .sum()
            };
            let [lo, hi] = est.bracket;
            let step = (hi - lo) / 9_999.0;
            let (mut best, mut best_v) = (lo, f64::INFINITY);
            for k in 0..10_000 {
                let a = lo + step * k as f64;
                let v = objective(a);
                if v < best_v {
                    (best, best_v) = (a, v);
                }
            }
            worst_steps = worst_steps.max((est.alpha - best).abs() / step);
        }
    }
    check(
        worst_rel < 0.01 && worst_steps <= 1.0,
        format!(
            "60 gains: worst relative error {:.4}%, worst grid distance {worst_steps:.3} steps",
            100.0 * worst_rel
        ),
    )
}

fn calibration() -> Outcome {
    let bundle = synthetic_calibration_scene(1024, 1024, 128.0, 5.0, &calibration_recipe(3.0, 10.0), 5).unwrap();
    let report = run_calibration(&bundle, &CalibrationConfig::default()).unwrap();
    let (o, s) = (
        report.ours.mean_abs.unwrap_or(f64::NAN),
        report.standard.mean_abs.unwrap_or(f64::NAN),
    );
    check(
        o <= 0.02 && s >= 0.20,
        format!("gradient 5: ours {:.3}%, standard {:.3}%", 100.0 * o, 100.0 * s),
    )
}

fn noise_curves() -> Outcome {
    // Truth over [4, 240]: the noisy capture never clips and each width-2
    // bin of the exact reference holds a uniform slice of the ramp.
    let gt = ramp_gt8(1024, 1024, 4.0, 240.0).unwrap();
    let law = |t: f64| 0.05 * t + 2.0;
    let n = add_noise_with(&gt, 3, stream_id(&[3]), |_, t| law(t).sqrt()).unwrap();
    let curve = noise_curve(&n, &gt, &gt, &CurveConfig::default(), None).unwrap();
    let worst = curve
        .bins
        .iter()
        .map(|b| (b.variance / law(b.intensity_center) - 1.0).abs())
        .fold(0.0, f64::max);
    let fit = fit_affine_noise_model(&curve).unwrap();
    let (ea, eb) = ((fit.a / 0.05 - 1.0).abs(), (fit.b / 2.0 - 1.0).abs());
    check(
        worst < 0.05 && ea < 0.05 && eb < 0.10,
        format!(
            "{} bins, worst {:.3}%; a = {:.5} ({:.2}%), b = {:.4} ({:.2}%)",
            curve.bins.len(),
            100.0 * worst,
            fit.a,
            100.0 * ea,
            fit.b,
            100.0 * eb
        ),
    )
}

fn metrics() -> Outcome {
    let img = gt8_of(&textured_gt16(256, 192, 6).unwrap());
    let self_ssim = ssim(&img, &img).unwrap();
    let p255 = psnr_from_sigma(255.0).unwrap();
    let p255_100 = psnr_from_sigma(2.55).unwrap();
    let gt = ramp_gt8(1024, 1024, 40.0, 200.0).unwrap();
    let mut worst = 0f64;
    for (k, sigma) in [1.0, 2.0, 5.0, 10.0].into_iter().enumerate() {
        let noisy = add_gaussian_noise(&gt, sigma, 8, stream_id(&[k as u64])).unwrap();
        worst = worst.max((psnr_mse(&noisy, &gt, None).unwrap() - psnr_from_sigma(sigma).unwrap()).abs());
    }
    check(
        (self_ssim - 1.0).abs() < 1e-12 && p255 == 0.0 && p255_100 == 40.0 && worst < 0.2,
        format!(
            "ssim(a,a) - 1 = {:e}; psnr(255) = {p255}, psnr(2.55) = {p255_100}; psnr_mse gap {worst:.4} dB",
            self_ssim - 1.0
        ),
    )
}

fn gate() -> Outcome {
    let a = GateVerdict::from_sigma(4.5337, 34.0).unwrap();
    let b = GateVerdict::from_sigma(7.0, 34.0).unwrap();
    // quality_gate on a pair whose difference has sigma sqrt(2) * 7 exactly
    let zero = MultiImage::new(
        std::array::from_fn(|_| RasterPlane::filled(64, 64, 100.0).unwrap()),
        Domain::Aligned8,
    )
    .unwrap();
    let d = 7.0 * 2f64.sqrt();
    let checker = MultiImage::new(
        std::array::from_fn(|_| {
            RasterPlane::from_fn(64, 64, |x, y| if (x + y) % 2 == 0 { 100.0 + d } else { 100.0 - d }).unwrap()
        }),
        Domain::Aligned8,
    )
    .unwrap();
    let g = quality_gate(&zero, &checker, 34.0, None).unwrap();
    let ok = (a.clean_pair_psnr - 35.0).abs() <= 0.01
        && a.pass
        && (b.clean_pair_psnr - 31.23).abs() <= 0.01
        && !b.pass
        && (g.clean_pair_psnr - b.clean_pair_psnr).abs() < 1e-9
        && !g.pass;
    check(
        ok,
        format!(
            "sigma 4.5337 -> {:.4} dB pass={}; sigma 7 -> {:.4} dB pass={}; pair gate {:.4} dB",
            a.clean_pair_psnr, a.pass, b.clean_pair_psnr, b.pass, g.clean_pair_psnr
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lowlight"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = vec![];
    for (k, workers) in ["0", "1"].into_iter().enumerate() {
        let root = tmp.path().join(format!("run{k}"));
        let data = root.join("data");
        let s = |p: &Path| p.to_str().unwrap().to_string();
        let (d, e, v) = (s(&data), s(&root.join("estimate")), s(&root.join("validate")));
        run_cli(&[
            "synth-scenes",
            "--out",
            &d,
            "--count",
            "3",
            "--size",
            "256",
            "--seed",
            "13",
            "--sigma-noisy",
            "10,20",
        ])?;
        let m = s(&data.join("manifest.json"));
        run_cli(&[
            "estimate",
            "--manifest",
            &m,
            "--out",
            &e,
            "--seed",
            "13",
            "--workers",
            workers,
        ])?;
        run_cli(&[
            "synth-validate",
            "--generate",
            "2",
            "--size",
            "256",
            "--trials",
            "3",
            "--seed",
            "13",
            "--out",
            &v,
            "--workers",
            workers,
        ])?;
        runs.push(tree(&root));
    }
    let files = runs[0].len();
    let same = runs[0] == runs[1];
    let reports = runs[0]
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|x| x == "json" || x == "csv"))
        .count();
    check(
        same && reports >= 4,
        format!("{files} files ({reports} reports) byte-identical across runs and worker counts: {same}"),
    )
}

fn random_image(rng: &mut GaussianRng, domain: Domain) -> MultiImage {
    let w = 1 + (rng.uniform() * 40.0) as usize;
    let h = 1 + (rng.uniform() * 40.0) as usize;
    let max = domain.max_value();
    let planes = std::array::from_fn(|_| {
        let data = (0..w * h)
            .map(|_| (rng.uniform() * (max + 1.0)).floor().min(max))
            .collect();
        RasterPlane::new(w, h, data).unwrap()
    });
    MultiImage::new(planes, domain).unwrap()
}

fn le32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn le16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn codec_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = GaussianRng::new(9, 9);
    let (mut p8, mut p16, mut bmp, mut hdr) = (0, 0, 0, 0);
    for i in 0..100 {
        let a = random_image(&mut rng, Domain::Aligned8);
        let f8 = tmp.path().join(format!("{i}.ppm"));
        write_pnm8(&a, &f8).unwrap();
        p8 += (decode_pnm(&fs::read(&f8).unwrap()).unwrap() == a) as usize;

        let b = random_image(&mut rng, Domain::Raw16);
        let f16 = tmp.path().join(format!("{i}_16.ppm"));
        write_pnm16(&b, &f16).unwrap();
        p16 += (read_pnm16(&f16).unwrap() == b) as usize;

        let fb = tmp.path().join(format!("{i}.bmp"));
        write_bmp8(&a, &fb).unwrap();
        let bytes = fs::read(&fb).unwrap();
        bmp += (decode_bmp24(&bytes).unwrap() == a) as usize;
        let (w, h) = (a.width() as u32, a.height() as u32);
        let stride = (3 * w).div_ceil(4) * 4;
        let header_ok = &bytes[0..2] == b"BM"
            && le32(&bytes, 2) as usize == bytes.len()
            && le32(&bytes, 10) == 54
            && le32(&bytes, 14) == 40
            && le32(&bytes, 18) == w
            && le32(&bytes, 22) as i32 == h as i32
            && le16(&bytes, 26) == 1
            && le16(&bytes, 28) == 24
            && le32(&bytes, 30) == 0
            && le32(&bytes, 34) == stride * h
            && bytes.len() == 54 + (stride * h) as usize;
        hdr += header_ok as usize;
    }
    check(
        p8 == 100 && p16 == 100 && bmp == 100 && hdr == 100,
        format!("pnm8 {p8}/100, pnm16 {p16}/100, bmp {bmp}/100, bmp headers {hdr}/100"),
    )
}

fn denoise_eval() -> Outcome {
    let gt = gt8_of(&textured_gt16(384, 384, 12).unwrap());
    let noisy = add_gaussian_noise(&gt, 25.0, 12, stream_id(&[25])).unwrap();
    let scene = EvalScene::new("s", "cam", &gt, &gt, &[noisy]).unwrap();
    let inputs = EvalInputs {
        scenes: vec![scene],
        gate_failed: vec![],
        errored: vec![],
    };
    let cfg = EvalConfig {
        denoisers: vec![
            DenoiserSpec::parse("identity=cp {input} {output}").unwrap(),
            DenoiserSpec::parse("gaussian").unwrap(),
        ],
        sigma_grid: vec![5.0, 10.0, 15.0, 20.0, 25.0, 50.0],
        timeout: Duration::from_secs(120),
        execution: Execution::default(),
    };
    let report = run_denoise_eval(&inputs, &cfg).unwrap();
    let identity_exact = report
        .rows
        .iter()
        .filter(|r| r.denoiser == "identity")
        .all(|r| r.ok && r.psnr_after == Some(r.psnr_before) && r.ssim_after == Some(r.ssim_before));
    let g = report
        .best_global
        .iter()
        .find(|b| b.denoiser == "gaussian")
        .ok_or("no gaussian best row")?;
    let gain = g.psnr_after - g.psnr_before;
    check(
        identity_exact && gain > 3.0,
        format!(
            "identity exact: {identity_exact}; gaussian best sigma {} gives {:.3} -> {:.3} dB (+{gain:.3})",
            g.sigma_param, g.psnr_before, g.psnr_after
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("estimator exactness", estimator_exactness),
        ("validation through alignment", validation_through_alignment),
        ("alignment recovery", alignment_recovery),
        ("calibration harness", calibration),
        ("noise curves", noise_curves),
        ("metrics", metrics),
        ("quality gate", gate),
        ("pipeline determinism", determinism),
        ("codec round trip", codec_round_trip),
        ("denoise evaluation", denoise_eval),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
