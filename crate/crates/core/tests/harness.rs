//! Batch pipeline, evaluation and plot-data behaviour on files on disk.

use std::fs;
use std::path::Path;
use std::time::Duration;

use lowlight::alignment::AlignmentConfig;
use lowlight::codec::write_pnm16;
use lowlight::harness::denoise::{load_eval_scenes, run_denoise_eval, DenoiserSpec, EvalConfig};
use lowlight::harness::manifest::{load_manifests, write_manifest, SceneManifest};
use lowlight::harness::pipeline::{run_bundles, run_pipeline, PipelineConfig};
use lowlight::harness::plot::{emit_plot_data, load_report, AnyReport};
use lowlight::rng::stream_id;
use lowlight::synth::{synthetic_scene, textured_gt16, SceneRecipe};
use lowlight::Execution;

/// Writes `n` synthetic scenes with sigma triples (3, 3, 10) and a manifest.
fn write_batch(dir: &Path, n: usize, size: usize) {
    let recipe = SceneRecipe::default();
    let mut scenes = Vec::new();
    for i in 0..n {
        let id = format!("s{i:02}");
        let gt = textured_gt16(size, size, stream_id(&[9, i as u64])).unwrap();
        let (b, _) = synthetic_scene(&id, if i % 2 == 0 { "even" } else { "odd" }, &gt, &recipe, 9).unwrap();
        let save = |role: &str, img| {
            let name = format!("{id}_{role}.ppm");
            write_pnm16(img, dir.join(&name)).unwrap();
            name.into()
        };
        scenes.push(SceneManifest {
            scene_id: id.clone(),
            camera_tag: b.camera_tag.clone(),
            reference: vec![save("r", &b.reference[0])],
            clean: vec![save("c", &b.clean[0])],
            noisy: vec![save("n", &b.noisy[0])],
            crop: None,
            alignment: None,
        });
    }
    write_manifest(&dir.join("manifest.json"), scenes).unwrap();
}

#[test]
fn batch_matches_generators_and_isolates_bad_scenes() {
    let dir = tempfile::tempdir().unwrap();
    write_batch(dir.path(), 3, 320);
    let entries = load_manifests(&[dir.path().join("manifest.json")]).unwrap();
    let cfg = PipelineConfig::default();
    let good = run_pipeline(&entries, &cfg);
    assert!(!good.has_errors());
    assert_eq!(good.passed.len(), 3);
    for s in &good.scenes {
        assert!(
            (s.sigma_clean.pooled / 3.0 - 1.0).abs() < 0.01,
            "{}: {}",
            s.scene_id,
            s.sigma_clean.pooled
        );
        let n = s.noisy[0].sigma_noisy.pooled;
        assert!((n / 10.0 - 1.0).abs() < 0.01, "{}: {n}", s.scene_id);
    }

    fs::write(dir.path().join("s01_n.ppm"), b"P6\n2 2\n65535\n\x00").unwrap();
    let bad = run_pipeline(&entries, &cfg);
    assert_eq!(bad.errored.len(), 1);
    assert_eq!(bad.errored[0].scene_id, "s01");
    assert_eq!(bad.scene("s00"), good.scene("s00"));
    assert_eq!(bad.scene("s02"), good.scene("s02"));
    // every completed scene is in exactly one of passed / failed
    for s in &bad.scenes {
        let hits = bad.passed.contains(&s.scene_id) as u8 + bad.failed.contains(&s.scene_id) as u8;
        assert_eq!(hits, 1);
    }
}

#[test]
fn parallel_and_sequential_reports_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_batch(dir.path(), 2, 192);
    let entries = load_manifests(&[dir.path().join("manifest.json")]).unwrap();
    let par = run_pipeline(&entries, &PipelineConfig::default());
    let seq = run_pipeline(
        &entries,
        &PipelineConfig {
            execution: Execution::Sequential,
            ..PipelineConfig::default()
        },
    );
    assert_eq!(
        serde_json::to_string(&par).unwrap(),
        serde_json::to_string(&seq).unwrap()
    );
}

#[test]
fn identity_denoiser_is_exact_and_best_rows_are_argmax() {
    let dir = tempfile::tempdir().unwrap();
    write_batch(dir.path(), 2, 160);
    let entries = load_manifests(&[dir.path().join("manifest.json")]).unwrap();
    let inputs = load_eval_scenes(&entries, &AlignmentConfig::default(), 34.0, Execution::default());
    assert_eq!(inputs.scenes.len(), 2);
    let cfg = EvalConfig {
        denoisers: vec![
            DenoiserSpec::parse("identity=cp {input} {output}").unwrap(),
            DenoiserSpec::parse("gaussian").unwrap(),
            DenoiserSpec::parse("median").unwrap(),
        ],
        sigma_grid: vec![5.0, 10.0, 20.0],
        timeout: Duration::from_secs(60),
        execution: Execution::default(),
    };
    let rep = run_denoise_eval(&inputs, &cfg).unwrap();
    assert_eq!(rep.rows.len(), 2 * 3 * 3);
    for r in rep.rows.iter().filter(|r| r.denoiser == "identity") {
        assert!(r.ok, "{:?}", r.message);
        assert_eq!(r.psnr_after, Some(r.psnr_before));
        assert_eq!(r.ssim_after, Some(r.ssim_before));
    }
    for b in &rep.best_per_image {
        let max = rep
            .rows
            .iter()
            .filter(|r| format!("{}/{}", r.scene_id, r.noisy_index) == b.key && r.denoiser == b.denoiser)
            .filter_map(|r| r.psnr_after)
            .fold(f64::MIN, f64::max);
        assert_eq!(b.psnr_after, max);
    }
    assert_eq!(rep.best_global.len(), 3);
    assert_eq!(rep.best_per_camera.len(), 6);

    rep.write(dir.path()).unwrap();
    let back = load_report(&dir.path().join("eval.json")).unwrap();
    assert!(matches!(back, AnyReport::Eval(e) if e == rep));
}

#[test]
fn plot_histogram_conserves_scene_count() {
    let recipe = SceneRecipe::default();
    let bundles: Vec<_> = (0..40)
        .map(|i| {
            let gt = textured_gt16(96, 96, i).unwrap();
            synthetic_scene(&format!("p{i:02}"), "cam", &gt, &recipe, i).unwrap().0
        })
        .collect();
    let cfg = PipelineConfig {
        curves: false,
        ..PipelineConfig::default()
    };
    let report = run_bundles(&bundles, &cfg);
    assert!(!report.has_errors(), "{:?}", report.errored);
    assert_eq!(report.passed.len(), 40);

    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&[AnyReport::Noise(report)], &Default::default(), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("sigma_histogram.csv")).unwrap();
    let total: usize = text
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("all,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 40);
    assert!(!text.contains('\r'));
}

#[test]
fn empty_manifest_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(&dir.path().join("m.json"), vec![]).unwrap();
    let entries = load_manifests(&[dir.path().join("m.json")]).unwrap();
    let r = run_pipeline(&entries, &PipelineConfig::default());
    assert!(r.scenes.is_empty() && r.errored.is_empty());
    r.write(dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("noise_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}
