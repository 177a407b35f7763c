//! Intensity alignment of 16-bit captures into the 8-bit reference frame.
//!
//! The averaged raw reference is scaled so that a chosen percentile lands on
//! a chosen 8-bit value (99th percentile → 230 by default). Every other image
//! of the scene gets a gain `alpha` per channel, found by golden-section
//! search on
//!
//! ```text
//! E(alpha) = sum_{i in M} (R~(i) - clamp(alpha * I~(i), 0, 255))^2
//! ```
//!
//! where `R~`, `I~` are the σ=5 blurred reference and raw image and `M` is
//! the set of pixels whose blurred-reference gradient magnitude is below 1.
//! The blur is used only for estimation; the gain is applied to the
//! unblurred raw image.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::optimize::GoldenSection;
use crate::raster::{gaussian_blur, gradient_magnitude, percentile, scale_clamp, MultiImage, PixelMask, RasterPlane};
use crate::scene::SceneBundle;

/// 95% band of the reference-vs-aligned difference for a clean pair at 35 dB:
/// `1.96 * sqrt(2) * 255 * 10^(-35/20)`.
pub fn noise_bound_35db() -> f64 {
    1.96 * std::f64::consts::SQRT_2 * 255.0 * 10f64.powf(-35.0 / 20.0)
}

/// Percentile → 8-bit value anchor for the reference mapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorMapping {
    pub percentile: f64,
    pub value: f64,
}

impl AnchorMapping {
    /// 99th percentile → 230, used for dataset scenes.
    pub const REFERENCE: AnchorMapping = AnchorMapping {
        percentile: 99.0,
        value: 230.0,
    };
    /// Median → 128, used for constant-intensity calibration scenes.
    pub const MEDIAN: AnchorMapping = AnchorMapping {
        percentile: 50.0,
        value: 128.0,
    };
}

impl Default for AnchorMapping {
    fn default() -> Self {
        Self::REFERENCE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGamma {
    pub gamma: f64,
    pub anchor_percentile: f64,
    pub anchor_value: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct AlignmentConfig {
    pub anchor: AnchorMapping,
    pub blur_sigma: f64,
    pub gradient_threshold: f64,
    pub min_mask_support: usize,
    /// Search bracket is `[alpha0 / f, alpha0 * f]`.
    pub bracket_factor: f64,
    pub search: GoldenSection,
    /// One gain shared by all channels instead of one per channel.
    pub joint_alpha: bool,
    pub diagnostics_bin_width: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            anchor: AnchorMapping::REFERENCE,
            blur_sigma: 5.0,
            gradient_threshold: 1.0,
            min_mask_support: 1000,
            bracket_factor: 4.0,
            search: GoldenSection::default(),
            joint_alpha: false,
            diagnostics_bin_width: 8.0,
        }
    }
}

/// `gamma = anchor.value / percentile(raw_ref, anchor.percentile)`.
pub fn compute_reference_gamma(raw_ref: &MultiImage, anchor: AnchorMapping) -> Result<ReferenceGamma> {
    if !(anchor.value > 0.0 && anchor.value <= 255.0) {
        return Err(Error::invalid(format!(
            "anchor value must be in (0, 255], got {}",
            anchor.value
        )));
    }
    let p = percentile(raw_ref, anchor.percentile)?;
    if p <= 0.0 {
        return Err(Error::DegenerateImage(format!(
            "reference percentile {} is {p}",
            anchor.percentile
        )));
    }
    Ok(ReferenceGamma {
        gamma: anchor.value / p,
        anchor_percentile: anchor.percentile,
        anchor_value: anchor.value,
    })
}

/// Masked (reference, raw) sample pairs, compacted for repeated evaluation.
#[derive(Default)]
struct MaskedPairs {
    reference: Vec<f64>,
    raw: Vec<f64>,
}

const OBJECTIVE_CHUNK: usize = 1 << 14;

impl MaskedPairs {
    fn extend(&mut self, ref_blur: &RasterPlane, raw_blur: &RasterPlane, mask: &PixelMask) {
        for (i, (&r, &v)) in ref_blur.samples().iter().zip(raw_blur.samples()).enumerate() {
            if mask.is_set(i) {
                self.reference.push(r);
                self.raw.push(v);
            }
        }
    }

    fn len(&self) -> usize {
        self.reference.len()
    }

    /// Fixed-size chunks summed in order, independent of thread count.
    fn objective(&self, alpha: f64, exec: Execution) -> f64 {
        let chunks = self.len().div_ceil(OBJECTIVE_CHUNK);
        let partials = map_indices(exec, chunks, |k| {
            let lo = k * OBJECTIVE_CHUNK;
            let hi = (lo + OBJECTIVE_CHUNK).min(self.len());
            self.reference[lo..hi]
                .iter()
                .zip(&self.raw[lo..hi])
                .map(|(&r, &v)| {
                    let d = r - (alpha * v).clamp(0.0, 255.0);
                    d * d
                })
                .sum::<f64>()
        });
        partials.iter().sum()
    }

    fn means(&self) -> (f64, f64) {
        let n = self.len() as f64;
        (self.reference.iter().sum::<f64>() / n, self.raw.iter().sum::<f64>() / n)
    }
}

/// Evaluates the clamped least-squares alignment objective.
pub fn alignment_objective(
    ref_blur: &RasterPlane,
    raw_blur: &RasterPlane,
    mask: &PixelMask,
    alpha: f64,
) -> Result<f64> {
    if !ref_blur.same_shape(raw_blur) {
        return Err(Error::DimensionMismatch("objective planes differ in size".into()));
    }
    mask.check_matches(ref_blur.width(), ref_blur.height())?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    let mut pairs = MaskedPairs::default();
    pairs.extend(ref_blur, raw_blur, mask);
    if pairs.len() == 0 {
        return Err(Error::InsufficientSupport {
            what: "alignment mask".into(),
            got: 0,
            needed: 1,
        });
    }
    Ok(pairs.objective(alpha, Execution::default()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub objective_value: f64,
    pub mask_size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub bracket: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelSelection {
    Channel(usize),
    /// All channels share one gain; the objective sums over the three masks.
    Joint,
}

/// Blurred 8-bit reference and its per-channel low-gradient masks, computed
/// once per scene.
pub struct ReferenceFrame {
    image: MultiImage,
    blurred: [RasterPlane; 3],
    masks: [PixelMask; 3],
}

fn blur_channels(image: &MultiImage, sigma: f64) -> Result<[RasterPlane; 3]> {
    let planes = map_indices(Execution::default(), 3, |c| gaussian_blur(image.channel(c), sigma));
    let mut it = planes.into_iter();
    Ok([it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?])
}

impl ReferenceFrame {
    pub fn prepare(ref8: &MultiImage, config: &AlignmentConfig) -> Result<Self> {
        let blurred = blur_channels(ref8, config.blur_sigma)?;
        let mut masks = Vec::with_capacity(3);
        for plane in &blurred {
            let grad = gradient_magnitude(plane)?;
            let bits = grad.samples().iter().map(|&g| g < config.gradient_threshold).collect();
            masks.push(PixelMask::from_bits(plane.width(), plane.height(), bits)?);
        }
        let masks: [PixelMask; 3] = masks.try_into().unwrap();
        Ok(Self {
            image: ref8.clone(),
            blurred,
            masks,
        })
    }

    pub fn image(&self) -> &MultiImage {
        &self.image
    }

    pub fn blurred(&self, c: usize) -> &RasterPlane {
        &self.blurred[c]
    }

    pub fn mask(&self, c: usize) -> &PixelMask {
        &self.masks[c]
    }

    pub fn estimate(
        &self,
        raw: &MultiImage,
        selection: ChannelSelection,
        config: &AlignmentConfig,
    ) -> Result<AlphaEstimate> {
        self.image.check_same_shape(raw, "alignment")?;
        let raw_blur = blur_channels(raw, config.blur_sigma)?;
        self.estimate_blurred(&raw_blur, selection, config)
    }

    /// Per-channel gains (or the joint gain replicated) for one raw image.
    pub fn estimate_gains(&self, raw: &MultiImage, config: &AlignmentConfig) -> Result<[AlphaEstimate; 3]> {
        self.image.check_same_shape(raw, "alignment")?;
        let raw_blur = blur_channels(raw, config.blur_sigma)?;
        if config.joint_alpha {
            let e = self.estimate_blurred(&raw_blur, ChannelSelection::Joint, config)?;
            return Ok([e; 3]);
        }
        Ok([
            self.estimate_blurred(&raw_blur, ChannelSelection::Channel(0), config)?,
            self.estimate_blurred(&raw_blur, ChannelSelection::Channel(1), config)?,
            self.estimate_blurred(&raw_blur, ChannelSelection::Channel(2), config)?,
        ])
    }

    fn estimate_blurred(
        &self,
        raw_blur: &[RasterPlane; 3],
        selection: ChannelSelection,
        config: &AlignmentConfig,
    ) -> Result<AlphaEstimate> {
        let channels: Vec<usize> = match selection {
            ChannelSelection::Channel(c) if c < 3 => vec![c],
            ChannelSelection::Channel(c) => return Err(Error::invalid(format!("no channel {c}"))),
            ChannelSelection::Joint => vec![0, 1, 2],
        };
        let mut pairs = MaskedPairs::default();
        for &c in &channels {
            pairs.extend(&self.blurred[c], &raw_blur[c], &self.masks[c]);
        }
        if pairs.len() < config.min_mask_support {
            return Err(Error::InsufficientSupport {
                what: "low-gradient alignment mask".into(),
                got: pairs.len(),
                needed: config.min_mask_support,
            });
        }
        let (mean_ref, mean_raw) = pairs.means();
        if !(mean_raw > 0.0) || !(mean_ref > 0.0) {
            return Err(Error::DegenerateImage(format!(
                "masked means are reference {mean_ref}, raw {mean_raw}; initial gain undefined"
            )));
        }
        let alpha0 = mean_ref / mean_raw;
        let bracket = [alpha0 / config.bracket_factor, alpha0 * config.bracket_factor];
        let exec = Execution::default();
        let m = config
            .search
            .minimize(|a| pairs.objective(a, exec), bracket[0], bracket[1]);
        Ok(AlphaEstimate {
            alpha: m.x,
            objective_value: m.value,
            mask_size: pairs.len(),
            iterations: m.iterations,
            converged: m.converged,
            bracket,
        })
    }
}

/// Convenience wrapper preparing a [`ReferenceFrame`] for a single estimate.
pub fn estimate_alpha(
    ref8: &MultiImage,
    raw: &MultiImage,
    selection: ChannelSelection,
    config: &AlignmentConfig,
) -> Result<AlphaEstimate> {
    ReferenceFrame::prepare(ref8, config)?.estimate(raw, selection, config)
}

/// `clamp(alpha_c * raw, 0, 255)` per channel.
pub fn apply_gains(raw: &MultiImage, gains: [f64; 3]) -> Result<MultiImage> {
    scale_clamp(raw, gains, 0.0, 255.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffBin {
    pub bin_center: f64,
    pub mean_diff: Option<f64>,
    pub p2_5_diff: Option<f64>,
    pub p97_5_diff: Option<f64>,
    pub count: usize,
}

/// Per-intensity summary of `aligned - reference`, binned on the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    pub bin_width: f64,
    pub noise_bound: f64,
    pub bins: Vec<DiffBin>,
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl AlignmentDiagnostics {
    pub fn compute(aligned: &MultiImage, reference: &MultiImage, bin_width: f64) -> Result<Self> {
        aligned.check_same_shape(reference, "diagnostics")?;
        if !(bin_width > 0.0) {
            return Err(Error::invalid("diagnostic bin width must be > 0"));
        }
        let nbins = (256.0 / bin_width).ceil() as usize;
        let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); nbins];
        for c in 0..3 {
            let a = aligned.channel(c).samples();
            let r = reference.channel(c).samples();
            for (&av, &rv) in a.iter().zip(r) {
                let bin = ((rv / bin_width).floor() as usize).min(nbins - 1);
                diffs[bin].push(av - rv);
            }
        }
        let bins = diffs
            .into_iter()
            .enumerate()
            .map(|(k, mut d)| {
                let bin_center = (k as f64 + 0.5) * bin_width;
                if d.is_empty() {
                    return DiffBin {
                        bin_center,
                        mean_diff: None,
                        p2_5_diff: None,
                        p97_5_diff: None,
                        count: 0,
                    };
                }
                d.sort_by(f64::total_cmp);
                DiffBin {
                    bin_center,
                    mean_diff: Some(d.iter().sum::<f64>() / d.len() as f64),
                    p2_5_diff: Some(sorted_quantile(&d, 0.025)),
                    p97_5_diff: Some(sorted_quantile(&d, 0.975)),
                    count: d.len(),
                }
            })
            .collect();
        Ok(Self {
            bin_width,
            noise_bound: noise_bound_35db(),
            bins,
        })
    }

    /// CSV block `bin_center,mean_diff,p2.5_diff,p97.5_diff,count`; empty
    /// bins leave the statistic fields blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["bin_center", "mean_diff", "p2.5_diff", "p97.5_diff", "count"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for b in &self.bins {
            w.write_record([
                b.bin_center.to_string(),
                opt(b.mean_diff),
                opt(b.p2_5_diff),
                opt(b.p97_5_diff),
                b.count.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlignedImage {
    pub role: String,
    pub image: MultiImage,
    pub gains: [AlphaEstimate; 3],
    pub diagnostics: AlignmentDiagnostics,
}

impl AlignedImage {
    pub fn alphas(&self) -> [f64; 3] {
        self.gains.map(|g| g.alpha)
    }
}

#[derive(Clone, Debug)]
pub struct AlignedScene {
    pub scene_id: String,
    pub camera_tag: String,
    pub gamma: ReferenceGamma,
    pub reference: MultiImage,
    pub clean: AlignedImage,
    pub noisy: Vec<AlignedImage>,
}

/// Aligns a whole scene bundle into the 8-bit reference frame.
///
/// Groups are averaged in the raw domain first. Errors are tagged with the
/// role of the image that failed.
pub fn align_scene(bundle: &SceneBundle, config: &AlignmentConfig) -> Result<AlignedScene> {
    bundle.validate()?;
    let ref_raw = MultiImage::average(&bundle.reference).map_err(|e| e.for_image("reference"))?;
    let gamma = compute_reference_gamma(&ref_raw, config.anchor).map_err(|e| e.for_image("reference"))?;
    let ref8 = scale_clamp(&ref_raw, [gamma.gamma; 3], 0.0, 255.0)?;
    let frame = ReferenceFrame::prepare(&ref8, config).map_err(|e| e.for_image("reference"))?;

    let clean_raw = MultiImage::average(&bundle.clean).map_err(|e| e.for_image("clean"))?;
    let mut jobs: Vec<(String, &MultiImage)> = vec![("clean".to_string(), &clean_raw)];
    for (i, n) in bundle.noisy.iter().enumerate() {
        jobs.push((format!("noisy_{i}"), n));
    }

    let crop = |img: MultiImage| match bundle.crop {
        Some(rect) => img.crop(rect),
        None => Ok(img),
    };
    let reference = crop(ref8)?;

    let results = map_indices(Execution::default(), jobs.len(), |k| {
        let (role, raw) = &jobs[k];
        let run = || -> Result<AlignedImage> {
            let gains = frame.estimate_gains(raw, config)?;
            let aligned = crop(apply_gains(raw, gains.map(|g| g.alpha))?)?;
            let diagnostics = AlignmentDiagnostics::compute(&aligned, &reference, config.diagnostics_bin_width)?;
            Ok(AlignedImage {
                role: role.clone(),
                image: aligned,
                gains,
                diagnostics,
            })
        };
        run().map_err(|e| e.for_image(role.clone()))
    });
    let mut images = results.into_iter().collect::<Result<Vec<_>>>()?;
    let clean = images.remove(0);
    Ok(AlignedScene {
        scene_id: bundle.scene_id.clone(),
        camera_tag: bundle.camera_tag.clone(),
        gamma,
        reference,
        clean,
        noisy: images,
    })
}
