//! Noise-level estimation from aligned reference / clean / noisy images.
//!
//! All images of a scene are modelled as the same latent image plus
//! independent noise, so `var(A - B) = var(A) + var(B)`. With a reference
//! `r`, clean `c` and noisy `n`:
//!
//! - clean pair: `sigma^2 = var(r - c) / 2`
//! - noisy vs reference: `sigma_n^2 = var(n - r) - var(r - c) / 2`
//! - noisy vs average `a = (r + c) / 2`: `sigma_n^2 = var(n - a) - var(r - c) / 4`
//!
//! Negative radicands (possible on very clean images through sampling
//! noise) are clamped to zero and flagged.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::metrics::psnr_from_sigma;
use crate::raster::{
    gaussian_blur, masked_diff_stats, masked_linear_stats, MultiImage, PixelMask, RasterPlane, RunningStats,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMethod {
    /// Half the variance of the reference/clean difference.
    CleanPair,
    /// Noisy minus reference, corrected by the clean-pair term.
    NoisyVsRef,
    /// Noisy minus the reference/clean average, corrected by a quarter of it.
    NoisyVsAvg,
    /// Noisy minus a heavily blurred reference.
    BlurredRef,
    /// Direct difference from a known ground truth.
    DirectVsGt,
    /// Plain standard deviation of a difference image, no correction.
    StandardDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub method: NoiseMethod,
    /// Per channel, R G B.
    pub channels: [f64; 3],
    pub pooled: f64,
    pub support: usize,
    /// Set when any radicand was negative and clamped to zero.
    pub negative_radicand: bool,
}

impl NoiseEstimate {
    fn from_variances(method: NoiseMethod, vars: [f64; 4], support: usize) -> Self {
        let negative_radicand = vars.iter().any(|&v| v < 0.0);
        let sd = vars.map(|v| v.max(0.0).sqrt());
        Self {
            method,
            channels: [sd[0], sd[1], sd[2]],
            pooled: sd[3],
            support,
            negative_radicand,
        }
    }
}

fn zip4(a: [f64; 4], b: [f64; 4], f: impl Fn(f64, f64) -> f64) -> [f64; 4] {
    std::array::from_fn(|i| f(a[i], b[i]))
}

/// `sqrt(var(ref - clean) / 2)`.
pub fn sigma_clean(reference: &MultiImage, clean: &MultiImage, mask: Option<&PixelMask>) -> Result<NoiseEstimate> {
    let d = masked_diff_stats(reference, clean, mask)?;
    Ok(NoiseEstimate::from_variances(
        NoiseMethod::CleanPair,
        d.variances().map(|v| 0.5 * v),
        d.support(),
    ))
}

/// `sqrt(var(noisy - ref) - var(ref - clean) / 2)`.
pub fn sigma_noisy(
    noisy: &MultiImage,
    reference: &MultiImage,
    clean: &MultiImage,
    mask: Option<&PixelMask>,
) -> Result<NoiseEstimate> {
    let nr = masked_diff_stats(noisy, reference, mask)?;
    let rc = masked_diff_stats(reference, clean, mask)?;
    Ok(NoiseEstimate::from_variances(
        NoiseMethod::NoisyVsRef,
        zip4(nr.variances(), rc.variances(), |a, b| a - 0.5 * b),
        nr.support(),
    ))
}

/// `sqrt(var(noisy - (ref + clean) / 2) - var(ref - clean) / 4)`.
pub fn sigma_noisy_avg(
    noisy: &MultiImage,
    reference: &MultiImage,
    clean: &MultiImage,
    mask: Option<&PixelMask>,
) -> Result<NoiseEstimate> {
    let na = masked_linear_stats(&[(1.0, noisy), (-0.5, reference), (-0.5, clean)], mask)?;
    let rc = masked_diff_stats(reference, clean, mask)?;
    Ok(NoiseEstimate::from_variances(
        NoiseMethod::NoisyVsAvg,
        zip4(na.variances(), rc.variances(), |a, b| a - 0.25 * b),
        na.support(),
    ))
}

/// Plain `stddev(a - b)` tagged with the given method.
pub fn sigma_difference(
    a: &MultiImage,
    b: &MultiImage,
    mask: Option<&PixelMask>,
    method: NoiseMethod,
) -> Result<NoiseEstimate> {
    let d = masked_diff_stats(a, b, mask)?;
    Ok(NoiseEstimate::from_variances(method, d.variances(), d.support()))
}

/// Noise measured against a known ground truth.
pub fn sigma_direct(image: &MultiImage, gt: &MultiImage, mask: Option<&PixelMask>) -> Result<NoiseEstimate> {
    sigma_difference(image, gt, mask, NoiseMethod::DirectVsGt)
}

/// Blurs every channel with the same sigma.
pub fn blur_image(image: &MultiImage, sigma: f64) -> Result<MultiImage> {
    let planes = map_indices(Execution::default(), 3, |c| gaussian_blur(image.channel(c), sigma));
    let mut it = planes.into_iter();
    let channels: [RasterPlane; 3] = [it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?];
    MultiImage::clamped(channels, image.domain())
}

/// `stddev(noisy - blur(reference, blur_sigma))`.
///
/// Passing the same image twice measures it against its own smoothed
/// version, which is how constant calibration surfaces get a pseudo ground
/// truth. Edges leak into the difference, so textured scenes overestimate.
pub fn sigma_blurred_reference(
    noisy: &MultiImage,
    reference: &MultiImage,
    blur_sigma: f64,
    mask: Option<&PixelMask>,
) -> Result<NoiseEstimate> {
    noisy.check_same_shape(reference, "blurred-reference estimate")?;
    let blurred = blur_image(reference, blur_sigma)?;
    sigma_difference(noisy, &blurred, mask, NoiseMethod::BlurredRef)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub clean_pair_psnr: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const DEFAULT_GATE_DB: f64 = 34.0;

impl GateVerdict {
    pub fn from_sigma(sigma: f64, threshold_db: f64) -> Result<Self> {
        let psnr = psnr_from_sigma(sigma)?;
        Ok(Self {
            clean_pair_psnr: psnr,
            threshold: threshold_db,
            pass: psnr >= threshold_db,
        })
    }
}

/// Clean-pair PSNR from the pooled clean-pair sigma, compared to a threshold.
pub fn quality_gate(
    reference: &MultiImage,
    clean: &MultiImage,
    threshold_db: f64,
    mask: Option<&PixelMask>,
) -> Result<GateVerdict> {
    let s = sigma_clean(reference, clean, mask)?;
    GateVerdict::from_sigma(s.pooled, threshold_db)
}

/// Pixels where no channel of any input is clipped at 0 or 255.
pub fn saturation_mask(images: &[&MultiImage]) -> Result<PixelMask> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("saturation mask needs at least one image"))?;
    for img in &images[1..] {
        first.check_same_shape(img, "saturation mask")?;
    }
    let n = first.pixel_count();
    let mut bits = vec![true; n];
    for img in images {
        for plane in img.channels() {
            for (b, &v) in bits.iter_mut().zip(plane.samples()) {
                if v <= 0.0 || v >= 255.0 {
                    *b = false;
                }
            }
        }
    }
    PixelMask::from_bits(first.width(), first.height(), bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveBinning {
    /// Every channel sample binned by its own reference value.
    Pooled,
    Channel(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct CurveConfig {
    pub bin_width: f64,
    pub min_support: usize,
    pub binning: CurveBinning,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            bin_width: 2.0,
            min_support: 1000,
            binning: CurveBinning::Pooled,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub intensity_center: f64,
    pub sigma: f64,
    pub variance: f64,
    pub support: usize,
}

/// `var(t) = a * t + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineNoiseModel {
    pub a: f64,
    pub b: f64,
}

impl AffineNoiseModel {
    pub fn variance_at(&self, t: f64) -> f64 {
        self.a * t + self.b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurve {
    pub bins: Vec<CurveBin>,
    pub bin_width: f64,
    pub model_fit: Option<AffineNoiseModel>,
}

impl NoiseCurve {
    /// CSV `center,sigma,support`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["center", "sigma", "support"])?;
        for b in &self.bins {
            w.write_record([
                b.intensity_center.to_string(),
                b.sigma.to_string(),
                b.support.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Per-intensity noise curve: the noisy-vs-average estimator applied within
/// bins of reference intensity.
pub fn noise_curve(
    noisy: &MultiImage,
    reference: &MultiImage,
    clean: &MultiImage,
    config: &CurveConfig,
    mask: Option<&PixelMask>,
) -> Result<NoiseCurve> {
    noisy.check_same_shape(reference, "noise curve")?;
    noisy.check_same_shape(clean, "noise curve")?;
    if let Some(m) = mask {
        m.check_matches(noisy.width(), noisy.height())?;
    }
    if !(config.bin_width > 0.0) {
        return Err(Error::invalid("curve bin width must be > 0"));
    }
    let channels: Vec<usize> = match config.binning {
        CurveBinning::Pooled => vec![0, 1, 2],
        CurveBinning::Channel(c) if c < 3 => vec![c],
        CurveBinning::Channel(c) => return Err(Error::invalid(format!("no channel {c}"))),
    };
    let nbins = (256.0 / config.bin_width).ceil() as usize;
    let (w, h) = (noisy.width(), noisy.height());

    // [bins][0 = noisy - avg, 1 = ref - clean], accumulated per row then
    // merged in row order.
    let rows: Vec<Vec<[RunningStats; 2]>> = map_indices(Execution::default(), h, |y| {
        let mut acc = vec![[RunningStats::default(); 2]; nbins];
        for &c in &channels {
            let (n, r, cl) = (
                noisy.channel(c).row(y),
                reference.channel(c).row(y),
                clean.channel(c).row(y),
            );
            for x in 0..w {
                if mask.is_some_and(|m| !m.is_set(y * w + x)) {
                    continue;
                }
                let bin = ((r[x] / config.bin_width).floor().max(0.0) as usize).min(nbins - 1);
                acc[bin][0].push(n[x] - 0.5 * r[x] - 0.5 * cl[x]);
                acc[bin][1].push(r[x] - cl[x]);
            }
        }
        acc
    });
    let mut totals = vec![[RunningStats::default(); 2]; nbins];
    for row in &rows {
        for (t, r) in totals.iter_mut().zip(row) {
            t[0].merge(&r[0]);
            t[1].merge(&r[1]);
        }
    }

    let bins: Vec<CurveBin> = totals
        .iter()
        .enumerate()
        .filter(|(_, t)| t[0].count() as usize >= config.min_support)
        .map(|(k, t)| {
            let variance = (t[0].variance() - 0.25 * t[1].variance()).max(0.0);
            CurveBin {
                intensity_center: (k as f64 + 0.5) * config.bin_width,
                sigma: variance.sqrt(),
                variance,
                support: t[0].count() as usize,
            }
        })
        .collect();
    if bins.is_empty() {
        let best = totals.iter().map(|t| t[0].count() as usize).max().unwrap_or(0);
        return Err(Error::InsufficientSupport {
            what: "noise-curve bin".into(),
            got: best,
            needed: config.min_support,
        });
    }
    Ok(NoiseCurve {
        bins,
        bin_width: config.bin_width,
        model_fit: None,
    })
}

/// Support-weighted least squares of bin variance on bin center.
pub fn fit_affine_noise_model(curve: &NoiseCurve) -> Result<AffineNoiseModel> {
    if curve.bins.len() < 2 {
        return Err(Error::InsufficientSupport {
            what: "noise curve".into(),
            got: curve.bins.len(),
            needed: 2,
        });
    }
    let wsum: f64 = curve.bins.iter().map(|b| b.support as f64).sum();
    let tbar = curve
        .bins
        .iter()
        .map(|b| b.support as f64 * b.intensity_center)
        .sum::<f64>()
        / wsum;
    let vbar = curve.bins.iter().map(|b| b.support as f64 * b.variance).sum::<f64>() / wsum;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for b in &curve.bins {
        let w = b.support as f64;
        let dt = b.intensity_center - tbar;
        sxy += w * dt * (b.variance - vbar);
        sxx += w * dt * dt;
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateImage("all curve bins share one intensity".into()));
    }
    let a = sxy / sxx;
    Ok(AffineNoiseModel { a, b: vbar - a * tbar })
}
