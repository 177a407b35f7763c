//! Pixel containers and the plane-level primitives the pipeline is built on.

mod filter;
mod stats;

pub use filter::{gaussian_blur, gaussian_blur_with, gaussian_kernel, gradient_magnitude};
pub use stats::{
    masked_diff_stats, masked_linear_stats, percentile, percentile_of, scale_clamp, ChannelStats, DiffStats,
    RunningStats, LOW_SUPPORT_PIXELS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNEL_NAMES: [&str; 3] = ["red", "green", "blue"];

/// One channel of real-valued samples in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterPlane {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl RasterPlane {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} plane",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { width, height, samples })
    }

    /// Internal constructor for kernels whose output is finite by construction.
    pub(crate) fn from_parts(width: usize, height: usize, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), width * height);
        Self { width, height, samples }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.samples[y * self.width..(y + 1) * self.width]
    }

    pub fn same_shape(&self, other: &RasterPlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.samples.iter().map(|&v| f(v)).collect())
    }

    pub fn crop(&self, rect: Rect) -> Result<Self> {
        rect.check_within(self.width, self.height)?;
        let mut samples = Vec::with_capacity(rect.w * rect.h);
        for y in rect.y..rect.y + rect.h {
            samples.extend_from_slice(&self.row(y)[rect.x..rect.x + rect.w]);
        }
        Ok(Self::from_parts(rect.w, rect.h, samples))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Sample domain of a [`MultiImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Linear sensor data, `[0, 65535]`.
    Raw16,
    /// Intensity-aligned 8-bit data, `[0, 255]`.
    Aligned8,
}

impl Domain {
    pub fn max_value(self) -> f64 {
        match self {
            Domain::Raw16 => 65535.0,
            Domain::Aligned8 => 255.0,
        }
    }
}

/// Three-channel (RGB) image with a domain tag.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiImage {
    channels: [RasterPlane; 3],
    domain: Domain,
}

impl MultiImage {
    pub fn new(channels: [RasterPlane; 3], domain: Domain) -> Result<Self> {
        if !channels[0].same_shape(&channels[1]) || !channels[0].same_shape(&channels[2]) {
            return Err(Error::DimensionMismatch("channel planes differ in size".into()));
        }
        let max = domain.max_value();
        for (c, plane) in channels.iter().enumerate() {
            let (lo, hi) = plane.min_max();
            if lo < 0.0 || hi > max {
                return Err(Error::invalid(format!(
                    "{} channel has samples in [{lo}, {hi}], outside {domain:?} range [0, {max}]",
                    CHANNEL_NAMES[c]
                )));
            }
        }
        Ok(Self { channels, domain })
    }

    /// Builds an image clamping every sample into the domain range.
    pub fn clamped(channels: [RasterPlane; 3], domain: Domain) -> Result<Self> {
        let max = domain.max_value();
        let [r, g, b] = channels;
        let clamp = |p: RasterPlane| {
            let (w, h) = (p.width, p.height);
            RasterPlane::from_parts(w, h, p.into_samples().into_iter().map(|v| v.clamp(0.0, max)).collect())
        };
        Self::new([clamp(r), clamp(g), clamp(b)], domain)
    }

    /// Same plane replicated into all three channels.
    pub fn gray(plane: RasterPlane, domain: Domain) -> Result<Self> {
        Self::new([plane.clone(), plane.clone(), plane], domain)
    }

    pub(crate) fn from_parts(channels: [RasterPlane; 3], domain: Domain) -> Self {
        Self { channels, domain }
    }

    pub fn width(&self) -> usize {
        self.channels[0].width
    }

    pub fn height(&self) -> usize {
        self.channels[0].height
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn channel(&self, c: usize) -> &RasterPlane {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[RasterPlane; 3] {
        &self.channels
    }

    pub fn into_channels(self) -> [RasterPlane; 3] {
        self.channels
    }

    pub fn same_shape(&self, other: &MultiImage) -> bool {
        self.width() == other.width() && self.height() == other.height()
    }

    pub(crate) fn check_same_shape(&self, other: &MultiImage, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )))
        }
    }

    pub fn crop(&self, rect: Rect) -> Result<Self> {
        let [r, g, b] = &self.channels;
        Ok(Self::from_parts(
            [r.crop(rect)?, g.crop(rect)?, b.crop(rect)?],
            self.domain,
        ))
    }

    /// Per-sample mean of a group of same-sized images in the same domain.
    pub fn average(images: &[MultiImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot average an empty image group"))?;
        if images.len() == 1 {
            return Ok(first.clone());
        }
        for other in &images[1..] {
            first.check_same_shape(other, "averaged group")?;
            if other.domain != first.domain {
                return Err(Error::invalid("averaged group mixes sample domains"));
            }
        }
        let n = images.len() as f64;
        let channels = std::array::from_fn(|c| {
            let mut acc = vec![0.0; first.pixel_count()];
            for img in images {
                for (a, &v) in acc.iter_mut().zip(img.channels[c].samples()) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            RasterPlane::from_parts(first.width(), first.height(), acc)
        });
        Ok(Self::from_parts(channels, first.domain))
    }

    /// Every sample of every channel, R then G then B.
    pub fn pooled_samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().flat_map(|p| p.samples().iter().copied())
    }
}

/// Boolean per-pixel support mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} mask bits for a {width}x{height} image",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &PixelMask) -> Result<Self> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch("mask sizes differ".into()));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn crop(&self, rect: Rect) -> Result<Self> {
        rect.check_within(self.width, self.height)?;
        let mut bits = Vec::with_capacity(rect.w * rect.h);
        for y in rect.y..rect.y + rect.h {
            let start = y * self.width + rect.x;
            bits.extend_from_slice(&self.bits[start..start + rect.w]);
        }
        Ok(Self {
            width: rect.w,
            height: rect.h,
            bits,
        })
    }

    pub(crate) fn check_matches(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} mask for a {width}x{height} image",
                self.width, self.height
            )))
        }
    }
}

/// Crop rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(Error::invalid(format!(
                "crop {}x{}+{}+{} outside {width}x{height} image",
                self.w, self.h, self.x, self.y
            )));
        }
        Ok(())
    }
}
