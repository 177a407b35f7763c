use serde::{Deserialize, Serialize};

use super::{Domain, MultiImage, PixelMask, RasterPlane};
use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};

/// Support below which statistics are flagged as low-support.
pub const LOW_SUPPORT_PIXELS: usize = 1000;

/// Welford accumulator with Chan's pairwise merge.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance (divide by N).
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn summary(&self) -> ChannelStats {
        let variance = self.variance();
        ChannelStats {
            count: self.count as usize,
            mean: self.mean,
            variance,
            stddev: variance.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub stddev: f64,
}

/// Statistics of a masked per-pixel difference, per channel and pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffStats {
    pub channels: [ChannelStats; 3],
    pub pooled: ChannelStats,
    pub low_support: bool,
}

impl DiffStats {
    /// Variances as `[r, g, b, pooled]`.
    pub fn variances(&self) -> [f64; 4] {
        [
            self.channels[0].variance,
            self.channels[1].variance,
            self.channels[2].variance,
            self.pooled.variance,
        ]
    }

    pub fn support(&self) -> usize {
        self.channels[0].count
    }
}

/// Smallest pooled sample `v` with at least `p`% of samples `<= v`.
pub fn percentile(image: &MultiImage, p: f64) -> Result<f64> {
    let mut samples: Vec<f64> = image.pooled_samples().collect();
    percentile_of(&mut samples, p)
}

/// Empirical CDF inversion on a scratch buffer (reordered in place).
pub fn percentile_of(samples: &mut [f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::invalid(format!("percentile must be in (0, 100], got {p}")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("percentile of an empty sample set"));
    }
    let n = samples.len();
    // p * n / 100 is exact for the usual integer inputs; the guard only
    // absorbs representation error for fractional p.
    let rank = ((p * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
    let k = rank.min(n) - 1;
    let (_, v, _) = samples.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Ok(*v)
}

/// `min(max(gain * v, lo), hi)` per sample with a per-channel gain.
pub fn scale_clamp(image: &MultiImage, gains: [f64; 3], lo: f64, hi: f64) -> Result<MultiImage> {
    if let Some(g) = gains.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
        return Err(Error::invalid(format!("gain must be > 0, got {g}")));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("clamp range [{lo}, {hi}] is empty")));
    }
    let domain = if lo >= 0.0 && hi <= 255.0 {
        Domain::Aligned8
    } else if lo >= 0.0 && hi <= 65535.0 {
        Domain::Raw16
    } else {
        return Err(Error::invalid(format!(
            "clamp range [{lo}, {hi}] fits no sample domain"
        )));
    };
    let channels = std::array::from_fn(|c| {
        let src = image.channel(c);
        let g = gains[c];
        RasterPlane::from_parts(
            src.width(),
            src.height(),
            src.samples().iter().map(|&v| (g * v).max(lo).min(hi)).collect(),
        )
    });
    Ok(MultiImage::from_parts(channels, domain))
}

/// Statistics of `a - b` over the mask (all pixels when `None`).
pub fn masked_diff_stats(a: &MultiImage, b: &MultiImage, mask: Option<&PixelMask>) -> Result<DiffStats> {
    masked_linear_stats(&[(1.0, a), (-1.0, b)], mask)
}

/// Statistics of `sum_k coef_k * image_k` over the mask.
///
/// Rows are accumulated independently and merged in row order, so the
/// result does not depend on the execution strategy.
pub fn masked_linear_stats(terms: &[(f64, &MultiImage)], mask: Option<&PixelMask>) -> Result<DiffStats> {
    let (_, first) = *terms.first().ok_or_else(|| Error::invalid("no images to combine"))?;
    for (_, img) in &terms[1..] {
        first.check_same_shape(img, "difference statistics")?;
        if img.domain() != first.domain() {
            return Err(Error::invalid("combined images must share a sample domain"));
        }
    }
    let (w, h) = (first.width(), first.height());
    if let Some(m) = mask {
        m.check_matches(w, h)?;
    }

    let rows: Vec<[RunningStats; 3]> = map_indices(Execution::default(), h, |y| {
        let mut acc = [RunningStats::default(); 3];
        for (c, stats) in acc.iter_mut().enumerate() {
            for x in 0..w {
                let i = y * w + x;
                if mask.is_none_or(|m| m.is_set(i)) {
                    let mut v = 0.0;
                    for (k, img) in terms {
                        v += k * img.channel(c).samples()[i];
                    }
                    stats.push(v);
                }
            }
        }
        acc
    });

    let mut totals = [RunningStats::default(); 3];
    for row in &rows {
        for (t, r) in totals.iter_mut().zip(row) {
            t.merge(r);
        }
    }
    let support = totals[0].count() as usize;
    if support == 0 {
        return Err(Error::InsufficientSupport {
            what: "difference mask".into(),
            got: 0,
            needed: 1,
        });
    }
    let mut pooled = RunningStats::default();
    totals.iter().for_each(|t| pooled.merge(t));
    Ok(DiffStats {
        channels: totals.map(|t| t.summary()),
        pooled: pooled.summary(),
        low_support: support < LOW_SUPPORT_PIXELS,
    })
}
