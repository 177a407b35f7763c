//! PSNR and SSIM on aligned 8-bit images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, map_indices, Execution};
use crate::raster::{gaussian_kernel, masked_diff_stats, MultiImage, PixelMask, RasterPlane};

/// Reported PSNR for identical inputs / zero noise.
pub const PSNR_CAP_DB: f64 = 99.0;

const PEAK: f64 = 255.0;

fn capped(db: f64) -> f64 {
    if db.is_finite() {
        db.min(PSNR_CAP_DB)
    } else {
        PSNR_CAP_DB
    }
}

/// `10 log10(255^2 / MSE)` with all channels pooled.
pub fn psnr_mse(a: &MultiImage, b: &MultiImage, mask: Option<&PixelMask>) -> Result<f64> {
    let d = masked_diff_stats(a, b, mask)?;
    let mse = d.pooled.variance + d.pooled.mean * d.pooled.mean;
    Ok(psnr_from_mse(mse))
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    capped(10.0 * (PEAK * PEAK / mse).log10())
}

/// `20 log10(255 / sigma)`, capped at 99 dB.
pub fn psnr_from_sigma(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(capped(20.0 * (PEAK / sigma).log10()))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// "Valid" separable convolution: output is `(w - k + 1) x (h - k + 1)`.
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64], exec: Execution) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for_each_chunk(exec, &mut tmp, ow, |y, out| {
        let row = &plane[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = row[x..x + k].iter().zip(kernel).map(|(v, q)| v * q).sum();
        }
    });
    let mut out = vec![0.0; ow * oh];
    for_each_chunk(exec, &mut out, ow, |y, orow| {
        for (j, &q) in kernel.iter().enumerate() {
            let trow = &tmp[(y + j) * ow..(y + j + 1) * ow];
            for (o, &t) in orow.iter_mut().zip(trow) {
                *o += q * t;
            }
        }
    });
    out
}

/// Mean SSIM of one channel pair.
pub fn ssim_plane(a: &RasterPlane, b: &RasterPlane) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch("SSIM planes differ in size".into()));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel(SSIM_SIGMA)?;
    debug_assert_eq!(kernel.len(), SSIM_WINDOW);
    let exec = Execution::default();
    let (sa, sb) = (a.samples(), b.samples());
    let aa: Vec<f64> = sa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = sb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = sa.iter().zip(sb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(sa, w, h, &kernel, exec);
    let mu_b = filter_valid(sb, w, h, &kernel, exec);
    let e_aa = filter_valid(&aa, w, h, &kernel, exec);
    let e_bb = filter_valid(&bb, w, h, &kernel, exec);
    let e_ab = filter_valid(&ab, w, h, &kernel, exec);

    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let sum: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(sum / mu_a.len() as f64)
}

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L 255),
/// averaged over the three channels.
pub fn ssim(a: &MultiImage, b: &MultiImage) -> Result<f64> {
    Ok(ssim_channels(a, b)?.iter().sum::<f64>() / 3.0)
}

pub fn ssim_channels(a: &MultiImage, b: &MultiImage) -> Result<[f64; 3]> {
    a.check_same_shape(b, "SSIM")?;
    let per = map_indices(Execution::default(), 3, |c| ssim_plane(a.channel(c), b.channel(c)));
    let mut it = per.into_iter();
    Ok([it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Average of the reference and clean images.
    GtAverage,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetric {
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub psnr_db: f64,
    pub ssim: f64,
    pub channels: [ChannelMetric; 3],
    pub reference_kind: ReferenceKind,
}

/// PSNR and SSIM of `image` against `reference`, pooled and per channel.
pub fn evaluate(image: &MultiImage, reference: &MultiImage, kind: ReferenceKind) -> Result<MetricResult> {
    let d = masked_diff_stats(image, reference, None)?;
    let ssims = ssim_channels(image, reference)?;
    let channels = std::array::from_fn(|c| {
        let s = d.channels[c];
        ChannelMetric {
            psnr_db: psnr_from_mse(s.variance + s.mean * s.mean),
            ssim: ssims[c],
        }
    });
    Ok(MetricResult {
        psnr_db: psnr_from_mse(d.pooled.variance + d.pooled.mean * d.pooled.mean),
        ssim: ssims.iter().sum::<f64>() / 3.0,
        channels,
        reference_kind: kind,
    })
}
