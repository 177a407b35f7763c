//! CSV bundles for plotting: sigma histograms, per-camera boxplots, noise
//! curves, calibration boxplots and relative-error boxplots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::calibration::{CalibrationReport, CALIBRATION_REPORT_KIND};
use crate::harness::denoise::{EvalReport, EVAL_REPORT_KIND};
use crate::harness::pipeline::{NoiseReport, NOISE_REPORT_KIND};
use crate::harness::validation::{ValidationReport, VALIDATION_REPORT_KIND};
use crate::harness::{csv_writer, finish_csv};

#[derive(Clone, Debug)]
pub enum AnyReport {
    Noise(NoiseReport),
    Validation(ValidationReport),
    Calibration(CalibrationReport),
    Eval(EvalReport),
}

pub fn parse_report(text: &str) -> Result<AnyReport> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .unwrap_or_default()
        .to_string();
    Ok(match kind.as_str() {
        NOISE_REPORT_KIND => AnyReport::Noise(serde_json::from_value(value)?),
        VALIDATION_REPORT_KIND => AnyReport::Validation(serde_json::from_value(value)?),
        CALIBRATION_REPORT_KIND => AnyReport::Calibration(serde_json::from_value(value)?),
        EVAL_REPORT_KIND => AnyReport::Eval(serde_json::from_value(value)?),
        other => return Err(Error::invalid(format!("unknown report kind {other:?}"))),
    })
}

pub fn load_report(path: &Path) -> Result<AnyReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text)
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// `None` for empty input. NaNs are dropped.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            min: *v.first()?,
            q1: quantile_sorted(&v, 0.25)?,
            median: quantile_sorted(&v, 0.5)?,
            q3: quantile_sorted(&v, 0.75)?,
            max: *v.last()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Non-empty bins `[k w, (k + 1) w)`, in increasing order.
pub fn histogram(values: &[f64], width: f64) -> Result<Vec<HistBin>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::invalid("histogram bin width must be positive"));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values.iter().filter(|v| v.is_finite()) {
        *counts.entry((v / width).floor() as i64).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, count)| HistBin {
            lo: k as f64 * width,
            hi: (k + 1) as f64 * width,
            count,
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub struct PlotConfig {
    pub sigma_bin_width: f64,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { sigma_bin_width: 1.0 }
    }
}

const BOX_HEADER: [&str; 6] = ["count", "min", "q1", "median", "q3", "max"];

fn box_fields(b: &BoxStats) -> [String; 6] {
    [
        b.count.to_string(),
        b.min.to_string(),
        b.q1.to_string(),
        b.median.to_string(),
        b.q3.to_string(),
        b.max.to_string(),
    ]
}

fn write_boxes(path: &Path, keys: &[&str], groups: &BTreeMap<Vec<String>, Vec<f64>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(keys.iter().copied().chain(BOX_HEADER))?;
    for (key, values) in groups {
        if let Some(b) = BoxStats::of(values) {
            w.write_record(key.iter().cloned().chain(box_fields(&b)))?;
        }
    }
    finish_csv(w, path)
}

fn key(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

/// Writes the five CSV files into `out_dir` and returns their paths. Files
/// are always written, with only a header when no report carries the data.
pub fn emit_plot_data(reports: &[AnyReport], cfg: &PlotConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut scene_sigma: Vec<(String, f64)> = Vec::new();
    let mut camera: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    let mut calibration: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    let mut rel_errors: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();

    let curves_path = out_dir.join("noise_curves.csv");
    let mut curves = csv_writer(&curves_path)?;
    curves.write_record(["scene_id", "noisy_index", "center", "sigma", "variance", "support"])?;

    for report in reports {
        match report {
            AnyReport::Noise(r) => {
                for s in r.scenes.iter().filter(|s| s.gate.pass) {
                    if let Some(sigma) = s.mean_sigma_noisy() {
                        scene_sigma.push((s.camera_tag.clone(), sigma));
                        camera
                            .entry(key(&[&s.camera_tag, "sigma_noisy"]))
                            .or_default()
                            .push(sigma);
                    }
                    if let Some(p) = s.mean_psnr_noisy() {
                        camera
                            .entry(key(&[&s.camera_tag, "psnr_estimate"]))
                            .or_default()
                            .push(p);
                    }
                    camera
                        .entry(key(&[&s.camera_tag, "clean_pair_psnr"]))
                        .or_default()
                        .push(s.gate.clean_pair_psnr);
                    for n in &s.noisy {
                        for b in n.curve.iter().flat_map(|c| &c.bins) {
                            curves.write_record([
                                s.scene_id.clone(),
                                n.index.to_string(),
                                b.intensity_center.to_string(),
                                b.sigma.to_string(),
                                b.variance.to_string(),
                                b.support.to_string(),
                            ])?;
                        }
                    }
                }
            }
            AnyReport::Calibration(r) => {
                for row in &r.rows {
                    for (method, v) in [("true", row.true_sigma), ("ours", row.ours), ("standard", row.standard)] {
                        calibration.entry(key(&[method, &row.channel])).or_default().push(v);
                    }
                }
            }
            AnyReport::Validation(r) => {
                for row in &r.rows {
                    let pairs = [
                        ("ours_clean", row.rel_ours_clean),
                        ("ours_noisy", row.rel_ours_noisy),
                        ("standard_clean", row.rel_standard_clean),
                        ("standard_noisy", row.rel_standard_noisy),
                    ];
                    for (name, v) in pairs {
                        if let Some(v) = v {
                            rel_errors.entry(key(&[name])).or_default().push(v);
                        }
                    }
                }
            }
            AnyReport::Eval(_) => {}
        }
    }
    finish_csv(curves, &curves_path)?;

    let hist_path = out_dir.join("sigma_histogram.csv");
    let mut w = csv_writer(&hist_path)?;
    w.write_record(["group", "bin_lo", "bin_hi", "count"])?;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (tag, v) in &scene_sigma {
        groups.entry(format!("camera:{tag}")).or_default().push(*v);
    }
    let all: Vec<f64> = scene_sigma.iter().map(|(_, v)| *v).collect();
    for (group, values) in std::iter::once(("all".to_string(), all)).chain(groups) {
        if values.is_empty() {
            continue;
        }
        for b in histogram(&values, cfg.sigma_bin_width)? {
            w.write_record([group.clone(), b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
        }
    }
    finish_csv(w, &hist_path)?;

    let camera_path = out_dir.join("camera_boxplots.csv");
    write_boxes(&camera_path, &["camera_tag", "metric"], &camera)?;
    let cal_path = out_dir.join("calibration_boxplots.csv");
    write_boxes(&cal_path, &["method", "channel"], &calibration)?;
    let rel_path = out_dir.join("relative_error_boxplots.csv");
    write_boxes(&rel_path, &["estimator"], &rel_errors)?;
    Ok(vec![hist_path, camera_path, curves_path, cal_path, rel_path])
}
