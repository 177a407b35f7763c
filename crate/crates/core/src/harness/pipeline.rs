//! End-to-end batch: average, align, gate, estimate, write.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{align_scene, AlignedScene, AlignmentConfig, ReferenceGamma};
use crate::codec::{quantize_aligned8, write_bmp8, write_pnm8};
use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::harness::manifest::ManifestEntry;
use crate::harness::{csv_writer, finish_csv, mean, write_json, REPORT_SCHEMA_VERSION};
use crate::metrics::psnr_from_sigma;
use crate::noise::{
    fit_affine_noise_model, noise_curve, saturation_mask, sigma_clean, sigma_difference, sigma_noisy, sigma_noisy_avg,
    CurveConfig, GateVerdict, NoiseCurve, NoiseEstimate, NoiseMethod, DEFAULT_GATE_DB,
};
use crate::raster::MultiImage;
use crate::scene::SceneBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Bmp,
    Pnm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Bmp => "bmp",
            ImageFormat::Pnm => "ppm",
        }
    }
}

/// Optional per-scene artifacts written next to the reports.
#[derive(Clone, Debug, Default)]
pub struct OutputOptions {
    pub out_dir: Option<PathBuf>,
    /// Aligned 8-bit images under `images/<scene_id>/`.
    pub images: Option<ImageFormat>,
    /// Alignment diagnostics CSVs under `alignment/<scene_id>/`.
    pub diagnostics: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub alignment: AlignmentConfig,
    pub threshold_db: f64,
    pub curve: CurveConfig,
    pub curves: bool,
    pub outputs: OutputOptions,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alignment: AlignmentConfig::default(),
            threshold_db: DEFAULT_GATE_DB,
            curve: CurveConfig::default(),
            curves: true,
            outputs: OutputOptions::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyReport {
    pub index: usize,
    pub gains: [f64; 3],
    pub alignment_converged: bool,
    /// Noisy vs reference with the clean-pair correction.
    pub sigma_noisy: NoiseEstimate,
    /// Noisy vs the reference/clean average.
    pub sigma_noisy_avg: NoiseEstimate,
    /// Uncorrected `stddev(noisy - reference)`.
    pub sigma_standard: NoiseEstimate,
    /// Ground-truth-free PSNR from `sigma_noisy`.
    pub psnr_estimate: f64,
    pub support: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<NoiseCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub camera_tag: String,
    pub width: usize,
    pub height: usize,
    pub gamma: ReferenceGamma,
    pub clean_gains: [f64; 3],
    pub gate: GateVerdict,
    pub sigma_clean: NoiseEstimate,
    /// Pixels left by the reference/clean saturation mask.
    pub support: usize,
    pub noisy: Vec<NoisyReport>,
}

impl SceneReport {
    /// Mean pooled noisy sigma over the scene's noisy images.
    pub fn mean_sigma_noisy(&self) -> Option<f64> {
        mean(self.noisy.iter().map(|n| n.sigma_noisy.pooled))
    }

    pub fn mean_psnr_noisy(&self) -> Option<f64> {
        mean(self.noisy.iter().map(|n| n.psnr_estimate))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneError {
    pub scene_id: String,
    pub message: String,
}

/// Means over the passed scenes of one camera. Per-scene values are
/// averaged over the scene's noisy images first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraAggregate {
    pub camera_tag: String,
    pub scenes: usize,
    pub noisy_images: usize,
    pub mean_clean_psnr: f64,
    pub mean_sigma_clean: f64,
    pub mean_sigma_noisy: Option<f64>,
    pub mean_psnr_noisy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub schema_version: u32,
    pub kind: String,
    pub threshold_db: f64,
    pub scenes: Vec<SceneReport>,
    pub passed: Vec<String>,
    pub failed: Vec<String>,
    pub errored: Vec<SceneError>,
    pub cameras: Vec<CameraAggregate>,
}

pub const NOISE_REPORT_KIND: &str = "noise_report";

impl NoiseReport {
    pub fn scene(&self, id: &str) -> Option<&SceneReport> {
        self.scenes.iter().find(|s| s.scene_id == id)
    }

    pub fn has_errors(&self) -> bool {
        !self.errored.is_empty()
    }

    /// `noise_report.json` and `noise_report.csv` (one row per noisy image).
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join("noise_report.json"), self)?;
        self.write_csv(&out_dir.join("noise_report.csv"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "scene_id",
            "camera_tag",
            "gate_pass",
            "clean_pair_psnr",
            "sigma_clean",
            "noisy_index",
            "sigma_noisy_r",
            "sigma_noisy_g",
            "sigma_noisy_b",
            "sigma_noisy",
            "sigma_noisy_avg",
            "sigma_standard",
            "psnr_estimate",
            "negative_radicand",
        ])?;
        for s in &self.scenes {
            for n in &s.noisy {
                let e = &n.sigma_noisy;
                w.write_record([
                    s.scene_id.clone(),
                    s.camera_tag.clone(),
                    s.gate.pass.to_string(),
                    s.gate.clean_pair_psnr.to_string(),
                    s.sigma_clean.pooled.to_string(),
                    n.index.to_string(),
                    e.channels[0].to_string(),
                    e.channels[1].to_string(),
                    e.channels[2].to_string(),
                    e.pooled.to_string(),
                    n.sigma_noisy_avg.pooled.to_string(),
                    n.sigma_standard.pooled.to_string(),
                    n.psnr_estimate.to_string(),
                    (e.negative_radicand || s.sigma_clean.negative_radicand).to_string(),
                ])?;
            }
        }
        finish_csv(w, path)
    }

    /// `gate.csv`: one row per scene that completed.
    pub fn write_gate_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["scene_id", "camera_tag", "clean_pair_psnr", "threshold_db", "pass"])?;
        for s in &self.scenes {
            w.write_record([
                s.scene_id.clone(),
                s.camera_tag.clone(),
                s.gate.clean_pair_psnr.to_string(),
                s.gate.threshold.to_string(),
                s.gate.pass.to_string(),
            ])?;
        }
        finish_csv(w, path)
    }
}

fn estimate_aligned(aligned: &AlignedScene, cfg: &PipelineConfig) -> Result<SceneReport> {
    let (r, c) = (&aligned.reference, &aligned.clean.image);
    let rc_mask = saturation_mask(&[r, c])?;
    let clean_est = sigma_clean(r, c, Some(&rc_mask))?;
    let gate = GateVerdict::from_sigma(clean_est.pooled, cfg.threshold_db)?;

    let mut noisy = Vec::with_capacity(aligned.noisy.len());
    for (index, n) in aligned.noisy.iter().enumerate() {
        let role = format!("noisy_{index}");
        let tagged = |e: Error| e.for_image(role.clone());
        let mask = saturation_mask(&[r, c, &n.image]).map_err(tagged)?;
        let est = sigma_noisy(&n.image, r, c, Some(&mask)).map_err(tagged)?;
        let avg = sigma_noisy_avg(&n.image, r, c, Some(&mask)).map_err(tagged)?;
        let standard = sigma_difference(&n.image, r, Some(&mask), NoiseMethod::StandardDifference).map_err(tagged)?;
        let (curve, curve_note) = if cfg.curves {
            match noise_curve(&n.image, r, c, &cfg.curve, Some(&mask)) {
                Ok(mut curve) => {
                    curve.model_fit = fit_affine_noise_model(&curve).ok();
                    (Some(curve), None)
                }
                Err(e @ Error::InsufficientSupport { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(tagged(e)),
            }
        } else {
            (None, None)
        };
        noisy.push(NoisyReport {
            index,
            gains: n.alphas(),
            alignment_converged: n.gains.iter().all(|g| g.converged),
            psnr_estimate: psnr_from_sigma(est.pooled)?,
            support: mask.count(),
            sigma_noisy: est,
            sigma_noisy_avg: avg,
            sigma_standard: standard,
            curve,
            curve_note,
        });
    }
    Ok(SceneReport {
        scene_id: aligned.scene_id.clone(),
        camera_tag: aligned.camera_tag.clone(),
        width: r.width(),
        height: r.height(),
        gamma: aligned.gamma,
        clean_gains: aligned.clean.alphas(),
        gate,
        support: rc_mask.count(),
        sigma_clean: clean_est,
        noisy,
    })
}

fn write_image(image: &MultiImage, format: ImageFormat, path: &Path) -> Result<()> {
    let q = quantize_aligned8(image)?;
    match format {
        ImageFormat::Bmp => write_bmp8(&q, path),
        ImageFormat::Pnm => write_pnm8(&q, path),
    }
}

fn write_artifacts(aligned: &AlignedScene, out: &OutputOptions) -> Result<()> {
    let Some(dir) = &out.out_dir else { return Ok(()) };
    let mut roles: Vec<(&str, &MultiImage)> = vec![("reference", &aligned.reference), ("clean", &aligned.clean.image)];
    roles.extend(aligned.noisy.iter().map(|n| (n.role.as_str(), &n.image)));
    if let Some(format) = out.images {
        let img_dir = dir.join("images").join(&aligned.scene_id);
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        for (role, img) in &roles {
            write_image(img, format, &img_dir.join(format!("{role}.{}", format.extension())))?;
        }
    }
    if out.diagnostics {
        let diag_dir = dir.join("alignment").join(&aligned.scene_id);
        std::fs::create_dir_all(&diag_dir).map_err(|e| Error::io(&diag_dir, e))?;
        for img in std::iter::once(&aligned.clean).chain(&aligned.noisy) {
            let path = diag_dir.join(format!("{}.csv", img.role));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            img.diagnostics.write_csv(std::io::BufWriter::new(file))?;
        }
    }
    Ok(())
}

/// Aligns and estimates one in-memory scene, writing any requested artifacts.
pub fn process_bundle(bundle: &SceneBundle, alignment: &AlignmentConfig, cfg: &PipelineConfig) -> Result<SceneReport> {
    let aligned = align_scene(bundle, alignment)?;
    let report = estimate_aligned(&aligned, cfg)?;
    write_artifacts(&aligned, &cfg.outputs)?;
    Ok(report)
}

/// Assembles a report from per-scene outcomes: sorted by scene id, scenes
/// split into passed/failed/errored, aggregates over passed scenes only.
pub fn assemble_report(outcomes: Vec<(String, Result<SceneReport>)>, threshold_db: f64) -> NoiseReport {
    let mut scenes = Vec::new();
    let mut errored = Vec::new();
    for (scene_id, outcome) in outcomes {
        match outcome {
            Ok(s) => scenes.push(s),
            Err(e) => errored.push(SceneError {
                scene_id,
                message: e.to_string(),
            }),
        }
    }
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    errored.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let passed = scenes
        .iter()
        .filter(|s| s.gate.pass)
        .map(|s| s.scene_id.clone())
        .collect();
    let failed = scenes
        .iter()
        .filter(|s| !s.gate.pass)
        .map(|s| s.scene_id.clone())
        .collect();

    let mut by_camera: BTreeMap<&str, Vec<&SceneReport>> = BTreeMap::new();
    for s in scenes.iter().filter(|s| s.gate.pass) {
        by_camera.entry(&s.camera_tag).or_default().push(s);
    }
    let cameras = by_camera
        .into_iter()
        .map(|(tag, group)| CameraAggregate {
            camera_tag: tag.to_string(),
            scenes: group.len(),
            noisy_images: group.iter().map(|s| s.noisy.len()).sum(),
            mean_clean_psnr: mean(group.iter().map(|s| s.gate.clean_pair_psnr)).unwrap_or(0.0),
            mean_sigma_clean: mean(group.iter().map(|s| s.sigma_clean.pooled)).unwrap_or(0.0),
            mean_sigma_noisy: mean(group.iter().filter_map(|s| s.mean_sigma_noisy())),
            mean_psnr_noisy: mean(group.iter().filter_map(|s| s.mean_psnr_noisy())),
        })
        .collect();

    NoiseReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: NOISE_REPORT_KIND.to_string(),
        threshold_db,
        scenes,
        passed,
        failed,
        errored,
        cameras,
    }
}

/// Runs every manifest scene. A scene that fails to load, align or estimate
/// is recorded in `errored` and never aborts the batch.
pub fn run_pipeline(entries: &[ManifestEntry], cfg: &PipelineConfig) -> NoiseReport {
    let outcomes = map_indices(cfg.execution, entries.len(), |i| {
        let entry = &entries[i];
        let run = || {
            let bundle = entry.load_bundle()?;
            process_bundle(&bundle, &entry.scene.alignment_config(&cfg.alignment), cfg)
        };
        (entry.scene.scene_id.clone(), run())
    });
    assemble_report(outcomes, cfg.threshold_db)
}

/// Same as [`run_pipeline`] for scenes already in memory.
pub fn run_bundles(bundles: &[SceneBundle], cfg: &PipelineConfig) -> NoiseReport {
    let outcomes = map_indices(cfg.execution, bundles.len(), |i| {
        (
            bundles[i].scene_id.clone(),
            process_bundle(&bundles[i], &cfg.alignment, cfg),
        )
    });
    assemble_report(outcomes, cfg.threshold_db)
}
