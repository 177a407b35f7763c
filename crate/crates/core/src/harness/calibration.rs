//! Calibration on a constant-intensity surface, where each image's own
//! heavily blurred copy stands in for the ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{align_scene, AlignmentConfig, AnchorMapping};
use crate::error::Result;
use crate::harness::validation::ErrorSummary;
use crate::harness::{csv_writer, finish_csv, opt_field, relative_error, write_json, REPORT_SCHEMA_VERSION};
use crate::noise::{
    saturation_mask, sigma_blurred_reference, sigma_clean, sigma_difference, sigma_noisy, NoiseEstimate, NoiseMethod,
};
use crate::raster::{scale_clamp, MultiImage, CHANNEL_NAMES};
use crate::scene::SceneBundle;
use crate::synth::{calibration_surface8, synthetic_scene, SceneRecipe, RAW_SCALE};

pub const PSEUDO_GT_BLUR: f64 = 20.0;

#[derive(Clone, Copy, Debug)]
pub struct CalibrationConfig {
    /// Alignment settings; the anchor is replaced by `anchor`.
    pub alignment: AlignmentConfig,
    pub anchor: AnchorMapping,
    pub pseudo_gt_blur: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            alignment: AlignmentConfig::default(),
            anchor: AnchorMapping::MEDIAN,
            pseudo_gt_blur: PSEUDO_GT_BLUR,
        }
    }
}

/// One image and channel (`overall` for the pooled estimate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub image: String,
    pub channel: String,
    pub true_sigma: f64,
    pub ours: f64,
    pub standard: f64,
    pub rel_ours: Option<f64>,
    pub rel_standard: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub kind: String,
    pub scene_id: String,
    pub gamma: f64,
    pub support: usize,
    pub rows: Vec<CalibrationRow>,
    /// Average relative error over all rows, the headline comparison.
    pub ours: ErrorSummary,
    pub standard: ErrorSummary,
}

pub const CALIBRATION_REPORT_KIND: &str = "calibration";

impl CalibrationReport {
    /// `calibration.json` and the boxplot-ready `calibration.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join("calibration.json"), self)?;
        let path = out_dir.join("calibration.csv");
        let mut w = csv_writer(&path)?;
        w.write_record([
            "image",
            "channel",
            "true_sigma",
            "ours",
            "standard",
            "rel_ours",
            "rel_standard",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.image.clone(),
                r.channel.clone(),
                r.true_sigma.to_string(),
                r.ours.to_string(),
                r.standard.to_string(),
                opt_field(r.rel_ours),
                opt_field(r.rel_standard),
            ])?;
        }
        finish_csv(w, &path)
    }
}

fn rows_for(image: &str, truth: &NoiseEstimate, ours: &NoiseEstimate, standard: &NoiseEstimate) -> Vec<CalibrationRow> {
    let pick = |e: &NoiseEstimate, k: usize| if k < 3 { e.channels[k] } else { e.pooled };
    (0..4)
        .map(|k| {
            let (t, o, s) = (pick(truth, k), pick(ours, k), pick(standard, k));
            CalibrationRow {
                image: image.to_string(),
                channel: CHANNEL_NAMES.get(k).copied().unwrap_or("overall").to_string(),
                true_sigma: t,
                ours: o,
                standard: s,
                rel_ours: relative_error(o, t),
                rel_standard: relative_error(s, t),
            }
        })
        .collect()
}

/// Aligns the calibration scene and compares both estimators against the
/// blurred-self pseudo ground truth, for the reference, the clean image and
/// every noisy image.
///
/// The reference and clean images share the clean-pair estimate; the
/// standard method compares each with the other. Noisy images use the
/// corrected noisy estimate against the plain noisy-minus-reference spread.
pub fn run_calibration(bundle: &SceneBundle, cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    let mut align_cfg = cfg.alignment;
    align_cfg.anchor = cfg.anchor;
    let aligned = align_scene(bundle, &align_cfg)?;
    let (r, c) = (&aligned.reference, &aligned.clean.image);
    let mut all: Vec<&MultiImage> = vec![r, c];
    all.extend(aligned.noisy.iter().map(|n| &n.image));
    let mask = saturation_mask(&all)?;
    let m = Some(&mask);
    let truth = |img: &MultiImage| sigma_blurred_reference(img, img, cfg.pseudo_gt_blur, m);
    let std_diff = |a: &MultiImage, b: &MultiImage| sigma_difference(a, b, m, NoiseMethod::StandardDifference);

    let clean_pair = sigma_clean(r, c, m)?;
    let mut rows = rows_for("reference", &truth(r)?, &clean_pair, &std_diff(r, c)?);
    rows.extend(rows_for("clean", &truth(c)?, &clean_pair, &std_diff(c, r)?));
    for n in &aligned.noisy {
        let ours = sigma_noisy(&n.image, r, c, m)?;
        rows.extend(rows_for(&n.role, &truth(&n.image)?, &ours, &std_diff(&n.image, r)?));
    }

    let ours: Vec<f64> = rows.iter().filter_map(|r| r.rel_ours).collect();
    let standard: Vec<f64> = rows.iter().filter_map(|r| r.rel_standard).collect();
    Ok(CalibrationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: CALIBRATION_REPORT_KIND.to_string(),
        scene_id: aligned.scene_id.clone(),
        gamma: aligned.gamma.gamma,
        support: mask.count(),
        rows,
        ours: ErrorSummary::of(&ours),
        standard: ErrorSummary::of(&standard),
    })
}

/// Raw captures of a constant surface at `level` with a diagonal
/// illumination change of `gradient` levels, sigmas in the median-anchored
/// 8-bit frame.
pub fn synthetic_calibration_scene(
    width: usize,
    height: usize,
    level: f64,
    gradient: f64,
    recipe: &SceneRecipe,
    seed: u64,
) -> Result<SceneBundle> {
    let surface = calibration_surface8(width, height, level, gradient)?;
    let gt16 = scale_clamp(&surface, [RAW_SCALE; 3], 0.0, 65535.0)?;
    let recipe = SceneRecipe {
        anchor: AnchorMapping::MEDIAN,
        ..recipe.clone()
    };
    Ok(synthetic_scene("calibration", "synthetic", &gt16, &recipe, seed)?.0)
}

/// Recipe with two noisy captures at different exposures.
pub fn calibration_recipe(sigma_rc: f64, sigma_noisy: f64) -> SceneRecipe {
    SceneRecipe {
        sigma_reference: sigma_rc,
        sigma_clean: sigma_rc,
        sigma_noisy: vec![sigma_noisy; 2],
        noisy_exposure: vec![[0.5, 0.45, 0.55], [0.3, 0.28, 0.33]],
        anchor: AnchorMapping::MEDIAN,
    }
}
