//! Denoiser evaluation over a sigma grid, scored against the average of the
//! reference and clean images.
//!
//! External denoisers are shell command templates. `{input}` and `{output}`
//! expand to quoted paths of 8-bit binary PPM files and `{sigma}` to the grid
//! value. The command must exit 0 and leave an image of the input's size at
//! `{output}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::alignment::{align_scene, AlignmentConfig};
use crate::codec::{decode_pnm, quantize_aligned8, write_pnm8};
use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, map_indices, Execution};
use crate::harness::manifest::ManifestEntry;
use crate::harness::pipeline::SceneError;
use crate::harness::{csv_writer, finish_csv, mean, opt_field, write_json, REPORT_SCHEMA_VERSION};
use crate::metrics::{evaluate, ReferenceKind};
use crate::noise::{saturation_mask, sigma_clean, GateVerdict};
use crate::raster::{gaussian_blur, Domain, MultiImage, RasterPlane};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DenoiserKind {
    /// Per-channel Gaussian blur with spatial sigma `sigma / 10` pixels.
    BuiltinGaussian,
    /// Per-channel median over a square window of radius `max(1, round(sigma / 10))`.
    BuiltinMedian,
    External {
        command: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: DenoiserKind,
}

impl DenoiserSpec {
    pub fn new(name: impl Into<String>, kind: DenoiserKind) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `gaussian`, `median`, or `NAME=COMMAND TEMPLATE` for an external one.
    pub fn parse(text: &str) -> Result<Self> {
        match text.split_once('=') {
            Some((name, cmd)) => Self::new(
                name.trim(),
                DenoiserKind::External {
                    command: cmd.to_string(),
                },
            ),
            None => match text.trim() {
                "gaussian" => Self::new("gaussian", DenoiserKind::BuiltinGaussian),
                "median" => Self::new("median", DenoiserKind::BuiltinMedian),
                other => Err(Error::invalid(format!(
                    "unknown denoiser {other:?}; use gaussian, median or NAME=COMMAND"
                ))),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("denoiser name is empty"));
        }
        if let DenoiserKind::External { command } = &self.kind {
            if !command.contains("{input}") || !command.contains("{output}") {
                return Err(Error::invalid(format!(
                    "denoiser {}: command must contain {{input}} and {{output}}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn is_external(&self) -> bool {
        matches!(self.kind, DenoiserKind::External { .. })
    }
}

pub fn median_filter(plane: &RasterPlane, radius: usize, exec: Execution) -> RasterPlane {
    let (w, h) = (plane.width(), plane.height());
    let src = plane.samples();
    let side = 2 * radius + 1;
    let mut out = vec![0.0; w * h];
    for_each_chunk(exec, &mut out, w, |y, row| {
        let mut window = Vec::with_capacity(side * side);
        for (x, o) in row.iter_mut().enumerate() {
            window.clear();
            for dy in 0..side {
                let yy = (y + dy).saturating_sub(radius).min(h - 1);
                for dx in 0..side {
                    let xx = (x + dx).saturating_sub(radius).min(w - 1);
                    window.push(src[yy * w + xx]);
                }
            }
            let mid = window.len() / 2;
            *o = *window.select_nth_unstable_by(mid, f64::total_cmp).1;
        }
    });
    RasterPlane::from_parts(w, h, out)
}

fn builtin(image: &MultiImage, kind: &DenoiserKind, sigma: f64) -> Result<MultiImage> {
    let planes: Vec<Result<RasterPlane>> = match kind {
        DenoiserKind::BuiltinGaussian => map_indices(Execution::default(), 3, |c| {
            gaussian_blur(image.channel(c), sigma / 10.0)
        }),
        DenoiserKind::BuiltinMedian => {
            let radius = ((sigma / 10.0).round() as usize).max(1);
            (0..3)
                .map(|c| Ok(median_filter(image.channel(c), radius, Execution::default())))
                .collect()
        }
        DenoiserKind::External { .. } => unreachable!("external denoisers run as subprocesses"),
    };
    let mut it = planes.into_iter();
    let channels = [it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?];
    quantize_aligned8(&MultiImage::clamped(channels, Domain::Aligned8)?)
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs one external denoiser invocation in a fresh temporary directory.
pub fn run_external(
    name: &str,
    template: &str,
    image: &MultiImage,
    sigma: f64,
    timeout: Duration,
) -> Result<MultiImage> {
    let fail = |message: String| Error::Denoiser {
        name: name.to_string(),
        message,
    };
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("input.ppm");
    let output = dir.path().join("output.ppm");
    let log = dir.path().join("stderr.log");
    write_pnm8(&quantize_aligned8(image)?, &input)?;
    let cmd = template
        .replace("{input}", &shell_quote(&input))
        .replace("{output}", &shell_quote(&output))
        .replace("{sigma}", &sigma.to_string());
    let stderr = fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr)
        .spawn()
        .map_err(|e| fail(format!("cannot spawn shell: {e}")))?;
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(fail(format!("timed out after {} s", timeout.as_secs_f64())));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(fail(format!("wait failed: {e}"))),
        }
    };
    if !status.success() {
        let text = fs::read_to_string(&log).unwrap_or_default();
        let tail: String = text
            .lines()
            .rev()
            .take(3)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect::<Vec<_>>()
            .join(" | ");
        return Err(fail(format!("exited with {status}: {tail}")));
    }
    let bytes = fs::read(&output).map_err(|e| fail(format!("no output image: {e}")))?;
    let out = decode_pnm(&bytes).map_err(|e| fail(format!("unreadable output: {e}")))?;
    if out.domain() != Domain::Aligned8 {
        return Err(fail("output must be an 8-bit PPM".into()));
    }
    if !out.same_shape(image) {
        return Err(fail(format!(
            "output is {}x{}, expected {}x{}",
            out.width(),
            out.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(out)
}

/// A gated scene ready for evaluation: 8-bit noisy images and the
/// reference/clean average.
#[derive(Clone, Debug)]
pub struct EvalScene {
    pub scene_id: String,
    pub camera_tag: String,
    pub noisy: Vec<MultiImage>,
    pub average: MultiImage,
}

impl EvalScene {
    pub fn new(
        scene_id: &str,
        camera_tag: &str,
        reference: &MultiImage,
        clean: &MultiImage,
        noisy: &[MultiImage],
    ) -> Result<Self> {
        let (r, c) = (quantize_aligned8(reference)?, quantize_aligned8(clean)?);
        Ok(Self {
            scene_id: scene_id.to_string(),
            camera_tag: camera_tag.to_string(),
            noisy: noisy.iter().map(quantize_aligned8).collect::<Result<_>>()?,
            average: MultiImage::average(&[r, c])?,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalInputs {
    pub scenes: Vec<EvalScene>,
    pub gate_failed: Vec<String>,
    pub errored: Vec<SceneError>,
}

/// Loads, aligns and gates manifest scenes. Only passing scenes are kept.
pub fn load_eval_scenes(
    entries: &[ManifestEntry],
    alignment: &AlignmentConfig,
    threshold_db: f64,
    exec: Execution,
) -> EvalInputs {
    let outcomes = map_indices(exec, entries.len(), |i| {
        let e = &entries[i];
        let run = || -> Result<(bool, EvalScene)> {
            let bundle = e.load_bundle()?;
            let a = align_scene(&bundle, &e.scene.alignment_config(alignment))?;
            let mask = saturation_mask(&[&a.reference, &a.clean.image])?;
            let s = sigma_clean(&a.reference, &a.clean.image, Some(&mask))?;
            let gate = GateVerdict::from_sigma(s.pooled, threshold_db)?;
            let noisy: Vec<MultiImage> = a.noisy.into_iter().map(|n| n.image).collect();
            Ok((
                gate.pass,
                EvalScene::new(&a.scene_id, &a.camera_tag, &a.reference, &a.clean.image, &noisy)?,
            ))
        };
        (e.scene.scene_id.clone(), run())
    });
    let mut inputs = EvalInputs::default();
    for (scene_id, outcome) in outcomes {
        match outcome {
            Ok((true, scene)) => inputs.scenes.push(scene),
            Ok((false, _)) => inputs.gate_failed.push(scene_id),
            Err(e) => inputs.errored.push(SceneError {
                scene_id,
                message: e.to_string(),
            }),
        }
    }
    inputs
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub denoisers: Vec<DenoiserSpec>,
    pub sigma_grid: Vec<f64>,
    pub timeout: Duration,
    pub execution: Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene_id: String,
    pub camera_tag: String,
    pub noisy_index: usize,
    pub denoiser: String,
    pub sigma_param: f64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub psnr_before: f64,
    pub psnr_after: Option<f64>,
    pub ssim_before: f64,
    pub ssim_after: Option<f64>,
}

/// Best sigma for one key. `rows` counts the successful rows averaged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSigma {
    pub key: String,
    pub denoiser: String,
    pub sigma_param: f64,
    pub rows: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub ssim_before: f64,
    pub ssim_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kind: String,
    pub sigma_grid: Vec<f64>,
    pub denoisers: Vec<DenoiserSpec>,
    pub rows: Vec<EvalRow>,
    /// Key `<scene_id>/<noisy_index>`.
    pub best_per_image: Vec<BestSigma>,
    /// Key is the camera tag; the sigma maximises the camera's mean PSNR.
    pub best_per_camera: Vec<BestSigma>,
    /// Key `all`.
    pub best_global: Vec<BestSigma>,
    pub gate_failed: Vec<String>,
    pub errored: Vec<SceneError>,
}

pub const EVAL_REPORT_KIND: &str = "denoise_eval";

/// For every group (`key_of`) and denoiser, the grid sigma with the highest
/// mean `psnr_after` over its successful rows; ties keep the earlier sigma.
pub fn best_sigma(rows: &[EvalRow], grid: &[f64], key_of: impl Fn(&EvalRow) -> String) -> Vec<BestSigma> {
    // (key, denoiser) -> per-grid-index successful rows
    let mut groups: BTreeMap<(String, String), Vec<Vec<&EvalRow>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok) {
        let Some(gi) = grid.iter().position(|&s| s == r.sigma_param) else {
            continue;
        };
        let slot = groups
            .entry((key_of(r), r.denoiser.clone()))
            .or_insert_with(|| vec![Vec::new(); grid.len()]);
        slot[gi].push(r);
    }
    groups
        .into_iter()
        .filter_map(|((key, denoiser), per_sigma)| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, rs) in per_sigma.iter().enumerate() {
                if let Some(m) = mean(rs.iter().filter_map(|r| r.psnr_after)) {
                    if best.is_none_or(|(_, b)| m > b) {
                        best = Some((gi, m));
                    }
                }
            }
            let (gi, psnr_after) = best?;
            let rs = &per_sigma[gi];
            Some(BestSigma {
                key,
                denoiser,
                sigma_param: grid[gi],
                rows: rs.len(),
                psnr_before: mean(rs.iter().map(|r| r.psnr_before))?,
                psnr_after,
                ssim_before: mean(rs.iter().map(|r| r.ssim_before))?,
                ssim_after: mean(rs.iter().filter_map(|r| r.ssim_after))?,
            })
        })
        .collect()
}

/// Evaluates every (scene, noisy image, denoiser, sigma). Builtin jobs run in
/// parallel; external invocations run one at a time. A failed invocation
/// marks its row and the batch continues.
pub fn run_denoise_eval(inputs: &EvalInputs, cfg: &EvalConfig) -> Result<EvalReport> {
    for d in &cfg.denoisers {
        d.validate()?;
    }
    if cfg.sigma_grid.is_empty() || cfg.sigma_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("sigma grid must be non-empty and positive"));
    }
    let mut scenes: Vec<&EvalScene> = inputs.scenes.iter().collect();
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let images: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| (0..sc.noisy.len()).map(move |k| (s, k)))
        .collect();
    let before = map_indices(cfg.execution, images.len(), |i| {
        let (s, k) = images[i];
        evaluate(&scenes[s].noisy[k], &scenes[s].average, ReferenceKind::GtAverage)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    // One job per (image, denoiser, sigma) in report order.
    let (nd, ng) = (cfg.denoisers.len(), cfg.sigma_grid.len());
    let job = |j: usize| (j / (nd * ng), (j / ng) % nd, j % ng);
    let score = |j: usize| -> Result<crate::metrics::MetricResult> {
        let (i, d, g) = job(j);
        let (s, k) = images[i];
        let noisy = &scenes[s].noisy[k];
        let spec = &cfg.denoisers[d];
        let sigma = cfg.sigma_grid[g];
        let out = match &spec.kind {
            DenoiserKind::External { command } => run_external(&spec.name, command, noisy, sigma, cfg.timeout)?,
            kind => builtin(noisy, kind, sigma)?,
        };
        evaluate(&out, &scenes[s].average, ReferenceKind::GtAverage)
    };
    let total = images.len() * nd * ng;
    let builtin_jobs: Vec<usize> = (0..total).filter(|&j| !cfg.denoisers[job(j).1].is_external()).collect();
    let mut results: Vec<Option<Result<crate::metrics::MetricResult>>> = (0..total).map(|_| None).collect();
    for (j, r) in builtin_jobs
        .iter()
        .zip(map_indices(cfg.execution, builtin_jobs.len(), |b| {
            score(builtin_jobs[b])
        }))
    {
        results[*j] = Some(r);
    }
    for (j, slot) in results.iter_mut().enumerate() {
        if slot.is_none() {
            *slot = Some(score(j));
        }
    }

    let rows: Vec<EvalRow> = results
        .into_iter()
        .enumerate()
        .map(|(j, r)| {
            let (i, d, g) = job(j);
            let (s, k) = images[i];
            let b = &before[i];
            let (ok, message, after) = match r.expect("every job scored") {
                Ok(m) => (true, None, Some(m)),
                Err(e) => (false, Some(e.to_string()), None),
            };
            EvalRow {
                scene_id: scenes[s].scene_id.clone(),
                camera_tag: scenes[s].camera_tag.clone(),
                noisy_index: k,
                denoiser: cfg.denoisers[d].name.clone(),
                sigma_param: cfg.sigma_grid[g],
                ok,
                message,
                psnr_before: b.psnr_db,
                psnr_after: after.as_ref().map(|m| m.psnr_db),
                ssim_before: b.ssim,
                ssim_after: after.as_ref().map(|m| m.ssim),
            }
        })
        .collect();

    let grid = &cfg.sigma_grid;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: EVAL_REPORT_KIND.to_string(),
        sigma_grid: grid.clone(),
        denoisers: cfg.denoisers.clone(),
        best_per_image: best_sigma(&rows, grid, |r| format!("{}/{}", r.scene_id, r.noisy_index)),
        best_per_camera: best_sigma(&rows, grid, |r| r.camera_tag.clone()),
        best_global: best_sigma(&rows, grid, |_| "all".to_string()),
        rows,
        gate_failed: inputs.gate_failed.clone(),
        errored: inputs.errored.clone(),
    })
}

impl EvalReport {
    /// `eval.json`, `eval_rows.csv` and `eval_best.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join("eval.json"), self)?;
        let path = out_dir.join("eval_rows.csv");
        let mut w = csv_writer(&path)?;
        w.write_record([
            "scene_id",
            "camera_tag",
            "noisy_index",
            "denoiser",
            "sigma_param",
            "ok",
            "psnr_before",
            "psnr_after",
            "ssim_before",
            "ssim_after",
            "message",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.scene_id.clone(),
                r.camera_tag.clone(),
                r.noisy_index.to_string(),
                r.denoiser.clone(),
                r.sigma_param.to_string(),
                r.ok.to_string(),
                r.psnr_before.to_string(),
                opt_field(r.psnr_after),
                r.ssim_before.to_string(),
                opt_field(r.ssim_after),
                r.message.clone().unwrap_or_default(),
            ])?;
        }
        finish_csv(w, &path)?;

        let path = out_dir.join("eval_best.csv");
        let mut w = csv_writer(&path)?;
        w.write_record([
            "view",
            "key",
            "denoiser",
            "sigma_param",
            "rows",
            "psnr_before",
            "psnr_after",
            "ssim_before",
            "ssim_after",
        ])?;
        let views = [
            ("image", &self.best_per_image),
            ("camera", &self.best_per_camera),
            ("global", &self.best_global),
        ];
        for (view, list) in views {
            for b in list.iter() {
                w.write_record([
                    view.to_string(),
                    b.key.clone(),
                    b.denoiser.clone(),
                    b.sigma_param.to_string(),
                    b.rows.to_string(),
                    b.psnr_before.to_string(),
                    b.psnr_after.to_string(),
                    b.ssim_before.to_string(),
                    b.ssim_after.to_string(),
                ])?;
            }
        }
        finish_csv(w, &path)
    }
}
