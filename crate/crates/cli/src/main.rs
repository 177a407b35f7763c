//! `lowlight`: batch alignment, noise estimation and validation harnesses.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lowlight::alignment::{AlignmentConfig, ReferenceGamma};
use lowlight::codec::write_pnm16;
use lowlight::exec::with_workers;
use lowlight::harness::calibration::{
    calibration_recipe, run_calibration, synthetic_calibration_scene, CalibrationConfig,
};
use lowlight::harness::denoise::{load_eval_scenes, run_denoise_eval, DenoiserSpec, EvalConfig};
use lowlight::harness::manifest::{load_manifests, write_manifest, ManifestEntry, SceneManifest};
use lowlight::harness::pipeline::{run_pipeline, ImageFormat, NoiseReport, OutputOptions, PipelineConfig, SceneError};
use lowlight::harness::plot::{emit_plot_data, load_report, PlotConfig};
use lowlight::harness::validation::{generated_truths, run_synthetic_validation, ValidationConfig};
use lowlight::harness::{write_json, REPORT_SCHEMA_VERSION};
use lowlight::noise::{AffineNoiseModel, CurveBinning, CurveConfig, DEFAULT_GATE_DB};
use lowlight::rng::stream_id;
use lowlight::synth::{synthetic_scene, textured_gt16, SceneRecipe};
use lowlight::{codec, Execution};

#[derive(Parser, Debug)]
#[command(
    name = "lowlight",
    version,
    about = "Low-light image pair alignment and noise estimation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Scene manifest (JSON); repeat to merge batches.
    #[arg(long, global = true)]
    manifest: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every synthetic generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Comma-separated denoiser sigma grid.
    #[arg(long, global = true, value_delimiter = ',', default_value = "5,10,15,20,25,50")]
    sigma_grid: Vec<f64>,
    /// Clean-pair PSNR threshold of the quality gate.
    #[arg(long, global = true, default_value_t = DEFAULT_GATE_DB)]
    threshold_db: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Bmp,
    Pnm,
}

impl From<Format> for ImageFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Bmp => ImageFormat::Bmp,
            Format::Pnm => ImageFormat::Pnm,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Align every scene and write 8-bit images plus alignment diagnostics.
    Align {
        #[arg(long, value_enum, default_value = "bmp")]
        format: Format,
    },
    /// Full pipeline: align, gate and estimate noise levels.
    Estimate {
        /// Also write aligned images in this format.
        #[arg(long, value_enum)]
        images: Option<Format>,
    },
    /// Clean-pair quality gate only.
    Gate,
    /// Per-intensity noise curves and affine variance fits.
    Curve {
        #[arg(long, default_value_t = 2.0)]
        bin_width: f64,
        #[arg(long, default_value_t = 1000)]
        min_support: usize,
        /// Bin a single channel (0 = red) instead of pooling all three.
        #[arg(long)]
        channel: Option<usize>,
    },
    /// Synthetic validation with known noise levels through alignment.
    SynthValidate {
        /// 16-bit P6 ground-truth images.
        #[arg(long, num_args = 1..)]
        gt: Vec<PathBuf>,
        /// Generate this many textured ground truths instead.
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value = "512", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Calibration on a constant-intensity surface with a median anchor.
    Calibrate {
        /// Use a generated constant surface instead of the manifest.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value = "1024", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 3.0)]
        sigma_rc: f64,
        #[arg(long, default_value_t = 10.0)]
        sigma_noisy: f64,
        /// Illumination change across the frame, in 8-bit levels.
        #[arg(long, default_value_t = 5.0)]
        gradient: f64,
    },
    /// Denoiser evaluation over the sigma grid.
    Eval {
        /// `gaussian`, `median` or `NAME=COMMAND` with {input} {output} {sigma}.
        #[arg(long = "denoiser", required = true)]
        denoisers: Vec<String>,
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// CSV bundles for plotting from JSON reports.
    PlotData {
        #[arg(long, num_args = 1.., required = true)]
        report: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        sigma_bin_width: f64,
    },
    /// Write seeded synthetic 16-bit scenes and a manifest for them.
    SynthScenes {
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, default_value = "512", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 3.0)]
        sigma_reference: f64,
        #[arg(long, default_value_t = 3.0)]
        sigma_clean: f64,
        /// One noisy capture per value.
        #[arg(long, value_delimiter = ',', default_value = "10")]
        sigma_noisy: Vec<f64>,
        #[arg(long, default_value = "synthetic")]
        camera_tag: String,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn entries(common: &Common) -> Result<Vec<ManifestEntry>> {
    if common.manifest.is_empty() {
        bail!("--manifest is required for this command");
    }
    Ok(load_manifests(&common.manifest)?)
}

fn pipeline_config(common: &Common, outputs: OutputOptions, curves: bool) -> PipelineConfig {
    PipelineConfig {
        threshold_db: common.threshold_db,
        curves,
        outputs,
        ..PipelineConfig::default()
    }
}

fn report_errors(errored: &[SceneError]) -> ExitCode {
    for e in errored {
        eprintln!("scene {}: {}", e.scene_id, e.message);
    }
    if errored.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

#[derive(Serialize)]
struct AlignmentRow {
    scene_id: String,
    camera_tag: String,
    gamma: ReferenceGamma,
    clean_gains: [f64; 3],
    noisy_gains: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct AlignmentReport {
    schema_version: u32,
    kind: &'static str,
    scenes: Vec<AlignmentRow>,
    errored: Vec<SceneError>,
}

#[derive(Serialize)]
struct GateReport {
    schema_version: u32,
    kind: &'static str,
    threshold_db: f64,
    passed: Vec<String>,
    failed: Vec<String>,
    errored: Vec<SceneError>,
}

#[derive(Serialize)]
struct CurveRow {
    scene_id: String,
    noisy_index: usize,
    bins: usize,
    model_fit: Option<AffineNoiseModel>,
    note: Option<String>,
}

#[derive(Serialize)]
struct CurveReport {
    schema_version: u32,
    kind: &'static str,
    bin_width: f64,
    curves: Vec<CurveRow>,
    errored: Vec<SceneError>,
}

fn cmd_align(common: &Common, format: Format) -> Result<ExitCode> {
    let outputs = OutputOptions {
        out_dir: Some(common.out.clone()),
        images: Some(format.into()),
        diagnostics: true,
    };
    let report = run_pipeline(&entries(common)?, &pipeline_config(common, outputs, false));
    let scenes = report
        .scenes
        .iter()
        .map(|s| AlignmentRow {
            scene_id: s.scene_id.clone(),
            camera_tag: s.camera_tag.clone(),
            gamma: s.gamma,
            clean_gains: s.clean_gains,
            noisy_gains: s.noisy.iter().map(|n| n.gains).collect(),
        })
        .collect();
    let out = AlignmentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "alignment",
        scenes,
        errored: report.errored.clone(),
    };
    write_json(&common.out.join("alignment.json"), &out)?;
    Ok(report_errors(&report.errored))
}

fn cmd_estimate(common: &Common, images: Option<Format>) -> Result<ExitCode> {
    let outputs = OutputOptions {
        out_dir: Some(common.out.clone()),
        images: images.map(Into::into),
        diagnostics: false,
    };
    let report = run_pipeline(&entries(common)?, &pipeline_config(common, outputs, true));
    report.write(&common.out)?;
    summarize(&report);
    Ok(report_errors(&report.errored))
}

fn summarize(report: &NoiseReport) {
    eprintln!(
        "{} scenes: {} passed, {} failed gate, {} errored",
        report.scenes.len() + report.errored.len(),
        report.passed.len(),
        report.failed.len(),
        report.errored.len()
    );
}

fn cmd_gate(common: &Common) -> Result<ExitCode> {
    let mut cfg = pipeline_config(common, OutputOptions::default(), false);
    cfg.outputs.out_dir = None;
    let report = run_pipeline(&entries(common)?, &cfg);
    report.write_gate_csv(&common.out.join("gate.csv"))?;
    let gate = GateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "gate",
        threshold_db: report.threshold_db,
        passed: report.passed.clone(),
        failed: report.failed.clone(),
        errored: report.errored.clone(),
    };
    write_json(&common.out.join("gate.json"), &gate)?;
    summarize(&report);
    Ok(report_errors(&report.errored))
}

fn cmd_curve(common: &Common, bin_width: f64, min_support: usize, channel: Option<usize>) -> Result<ExitCode> {
    let mut cfg = pipeline_config(common, OutputOptions::default(), true);
    cfg.curve = CurveConfig {
        bin_width,
        min_support,
        binning: channel.map_or(CurveBinning::Pooled, CurveBinning::Channel),
    };
    let report = run_pipeline(&entries(common)?, &cfg);
    let dir = common.out.join("curves");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut curves = Vec::new();
    for s in &report.scenes {
        for n in &s.noisy {
            if let Some(c) = &n.curve {
                let path = dir.join(format!("{}_noisy_{}.csv", s.scene_id, n.index));
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                c.write_csv(std::io::BufWriter::new(file))?;
            }
            curves.push(CurveRow {
                scene_id: s.scene_id.clone(),
                noisy_index: n.index,
                bins: n.curve.as_ref().map_or(0, |c| c.bins.len()),
                model_fit: n.curve.as_ref().and_then(|c| c.model_fit),
                note: n.curve_note.clone(),
            });
        }
    }
    let out = CurveReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "noise_curves",
        bin_width,
        curves,
        errored: report.errored.clone(),
    };
    write_json(&common.out.join("curves.json"), &out)?;
    Ok(report_errors(&report.errored))
}

fn cmd_synth_validate(
    common: &Common,
    gt: &[PathBuf],
    generate: Option<usize>,
    size: (usize, usize),
    trials: usize,
) -> Result<ExitCode> {
    let truths = match (gt.is_empty(), generate) {
        (false, None) => gt
            .iter()
            .map(|p| {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((name, codec::read_pnm16(p)?))
            })
            .collect::<Result<Vec<_>>>()?,
        (true, Some(n)) => generated_truths(n, size.0, size.1, common.seed)?,
        _ => bail!("pass either --gt paths or --generate N"),
    };
    let cfg = ValidationConfig {
        trials,
        seed: common.seed,
        ..ValidationConfig::default()
    };
    let report = run_synthetic_validation(&truths, &cfg)?;
    report.write(&common.out)?;
    let s = &report.summary;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:+.3}%", 100.0 * x));
    eprintln!(
        "{} trials: ours noisy {} clean {}; standard noisy {} clean {}",
        s.trials,
        pct(s.ours_noisy.mean),
        pct(s.ours_clean.mean),
        pct(s.standard_noisy.mean),
        pct(s.standard_clean.mean)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(
    common: &Common,
    synthetic: bool,
    size: (usize, usize),
    sigma_rc: f64,
    sigma_noisy: f64,
    gradient: f64,
) -> Result<ExitCode> {
    let cfg = CalibrationConfig::default();
    let show = |r: &lowlight::harness::calibration::CalibrationReport| {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.3}%", 100.0 * x));
        eprintln!(
            "{}: ours {} standard {}",
            r.scene_id,
            pct(r.ours.mean_abs),
            pct(r.standard.mean_abs)
        );
    };
    if synthetic {
        let recipe = calibration_recipe(sigma_rc, sigma_noisy);
        let bundle = synthetic_calibration_scene(size.0, size.1, 128.0, gradient, &recipe, common.seed)?;
        let report = run_calibration(&bundle, &cfg)?;
        report.write(&common.out)?;
        show(&report);
        return Ok(ExitCode::SUCCESS);
    }
    let mut errored = Vec::new();
    for e in entries(common)? {
        let outcome = e
            .load_bundle()
            .and_then(|b| run_calibration(&b, &cfg))
            .and_then(|r| r.write(&common.out.join(&e.scene.scene_id)).map(|_| r));
        match outcome {
            Ok(r) => show(&r),
            Err(err) => errored.push(SceneError {
                scene_id: e.scene.scene_id.clone(),
                message: err.to_string(),
            }),
        }
    }
    Ok(report_errors(&errored))
}

fn cmd_eval(common: &Common, denoisers: &[String], timeout_secs: u64) -> Result<ExitCode> {
    let denoisers = denoisers
        .iter()
        .map(|d| DenoiserSpec::parse(d))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs = load_eval_scenes(
        &entries(common)?,
        &AlignmentConfig::default(),
        common.threshold_db,
        Execution::default(),
    );
    let cfg = EvalConfig {
        denoisers,
        sigma_grid: common.sigma_grid.clone(),
        timeout: Duration::from_secs(timeout_secs),
        execution: Execution::default(),
    };
    let report = run_denoise_eval(&inputs, &cfg)?;
    report.write(&common.out)?;
    for b in &report.best_global {
        eprintln!(
            "{}: best sigma {} psnr {:.3} -> {:.3} dB, ssim {:.4} -> {:.4}",
            b.denoiser, b.sigma_param, b.psnr_before, b.psnr_after, b.ssim_before, b.ssim_after
        );
    }
    let failed = report.rows.iter().filter(|r| !r.ok).count();
    if failed > 0 {
        eprintln!("{failed} denoiser runs failed");
    }
    Ok(report_errors(&report.errored))
}

fn cmd_plot_data(common: &Common, reports: &[PathBuf], sigma_bin_width: f64) -> Result<ExitCode> {
    let loaded = reports
        .iter()
        .map(|p| load_report(p).with_context(|| format!("reading report {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let files = emit_plot_data(&loaded, &PlotConfig { sigma_bin_width }, &common.out)?;
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth_scenes(
    common: &Common,
    count: usize,
    size: (usize, usize),
    sigma_reference: f64,
    sigma_clean: f64,
    sigma_noisy: &[f64],
    camera_tag: &str,
) -> Result<ExitCode> {
    let exposures = [[0.5, 0.45, 0.55], [0.3, 0.28, 0.33], [0.2, 0.18, 0.22]];
    let recipe = SceneRecipe {
        sigma_reference,
        sigma_clean,
        sigma_noisy: sigma_noisy.to_vec(),
        noisy_exposure: (0..sigma_noisy.len()).map(|k| exposures[k % exposures.len()]).collect(),
        ..SceneRecipe::default()
    };
    let out = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut scenes = Vec::new();
    for i in 0..count {
        let id = format!("scene_{i:03}");
        let gt = textured_gt16(size.0, size.1, stream_id(&[common.seed, 0x7363, i as u64]))?;
        let (bundle, _) = synthetic_scene(&id, camera_tag, &gt, &recipe, common.seed)?;
        let save = |role: &str, img: &lowlight::MultiImage| -> Result<PathBuf> {
            let name = PathBuf::from(format!("{id}_{role}.ppm"));
            write_pnm16(img, out.join(&name))?;
            Ok(name)
        };
        let reference = vec![save("reference", &bundle.reference[0])?];
        let clean = vec![save("clean", &bundle.clean[0])?];
        let noisy = bundle
            .noisy
            .iter()
            .enumerate()
            .map(|(k, n)| save(&format!("noisy_{k}"), n))
            .collect::<Result<Vec<_>>>()?;
        scenes.push(SceneManifest {
            scene_id: id,
            camera_tag: camera_tag.to_string(),
            reference,
            clean,
            noisy,
            crop: None,
            alignment: None,
        });
    }
    write_manifest(&out.join("manifest.json"), scenes)?;
    eprintln!("wrote {count} scenes and {}", out.join("manifest.json").display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Cmd::Align { format } => cmd_align(c, *format),
        Cmd::Estimate { images } => cmd_estimate(c, *images),
        Cmd::Gate => cmd_gate(c),
        Cmd::Curve {
            bin_width,
            min_support,
            channel,
        } => cmd_curve(c, *bin_width, *min_support, *channel),
        Cmd::SynthValidate {
            gt,
            generate,
            size,
            trials,
        } => cmd_synth_validate(c, gt, *generate, *size, *trials),
        Cmd::Calibrate {
            synthetic,
            size,
            sigma_rc,
            sigma_noisy,
            gradient,
        } => cmd_calibrate(c, *synthetic, *size, *sigma_rc, *sigma_noisy, *gradient),
        Cmd::Eval {
            denoisers,
            timeout_secs,
        } => cmd_eval(c, denoisers, *timeout_secs),
        Cmd::PlotData {
            report,
            sigma_bin_width,
        } => cmd_plot_data(c, report, *sigma_bin_width),
        Cmd::SynthScenes {
            count,
            size,
            sigma_reference,
            sigma_clean,
            sigma_noisy,
            camera_tag,
        } => cmd_synth_scenes(
            c,
            *count,
            *size,
            *sigma_reference,
            *sigma_clean,
            sigma_noisy,
            camera_tag,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.common.workers;
    match with_workers(workers, || run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
