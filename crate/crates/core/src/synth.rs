//! Synthetic ground truths and scenes with known noise, for validation.

use crate::alignment::{compute_reference_gamma, AnchorMapping};
use crate::error::{Error, Result};
use crate::raster::{scale_clamp, Domain, MultiImage, RasterPlane};
use crate::rng::{add_gaussian_noise, add_noise_with, stream_id, GaussianRng};
use crate::scene::SceneBundle;

/// 16-bit counts per 8-bit-equivalent intensity level in generated truths.
pub const RAW_SCALE: f64 = 60.0;

struct Shape {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    disc: bool,
    level: f64,
    /// Shading amplitude in levels across the half-extent, along x and y.
    shade: [f64; 2],
}

/// Piecewise-smooth 16-bit scene: a shaded background with gently shaded
/// rectangles and discs. Intensities stay within roughly `[15, 235]` 8-bit
/// levels. Shading keeps the upper percentiles off wide plateaus, so noise
/// barely moves them.
pub fn textured_gt16(width: usize, height: usize, seed: u64) -> Result<MultiImage> {
    if width < 16 || height < 16 {
        return Err(Error::invalid("synthetic truth needs at least 16x16 pixels"));
    }
    let mut rng = GaussianRng::new(seed, stream_id(&[0x67, 0x74]));
    let (w, h) = (width as f64, height as f64);
    let phase = rng.uniform() * std::f64::consts::TAU;
    let nshapes = 10 + (rng.uniform() * 8.0) as usize;
    let shapes: Vec<Shape> = (0..nshapes)
        .map(|_| Shape {
            cx: rng.uniform() * w,
            cy: rng.uniform() * h,
            rx: (0.04 + 0.14 * rng.uniform()) * w,
            ry: (0.04 + 0.14 * rng.uniform()) * h,
            disc: rng.uniform() < 0.5,
            level: 45.0 + 160.0 * rng.uniform(),
            shade: [24.0 * rng.uniform() - 12.0, 24.0 * rng.uniform() - 12.0],
        })
        .collect();
    let tints = [0.88 + 0.1 * rng.uniform(), 1.0, 0.82 + 0.12 * rng.uniform()];

    let base = RasterPlane::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        let mut level = 75.0 + 35.0 * u + 20.0 * (std::f64::consts::TAU * 0.8 * v + phase).sin();
        for s in &shapes {
            let (dx, dy) = ((x as f64 - s.cx) / s.rx, (y as f64 - s.cy) / s.ry);
            let inside = if s.disc {
                dx * dx + dy * dy <= 1.0
            } else {
                dx.abs() <= 1.0 && dy.abs() <= 1.0
            };
            if inside {
                level = s.level + s.shade[0] * dx + s.shade[1] * dy;
            }
        }
        level
    })?;
    let channels = std::array::from_fn(|c| base.map(|v| v * tints[c] * RAW_SCALE).expect("finite"));
    MultiImage::new(channels, Domain::Raw16)
}

/// Horizontal linear ramp from `lo` to `hi` in all channels.
pub fn ramp_gt8(width: usize, height: usize, lo: f64, hi: f64) -> Result<MultiImage> {
    let span = (width.max(2) - 1) as f64;
    let p = RasterPlane::from_fn(width, height, |x, _| lo + (hi - lo) * x as f64 / span)?;
    MultiImage::gray(p, Domain::Aligned8)
}

/// Constant surface with a smooth diagonal illumination change of
/// `gradient` levels from corner to corner.
pub fn calibration_surface8(width: usize, height: usize, level: f64, gradient: f64) -> Result<MultiImage> {
    let (w, h) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    let p = RasterPlane::from_fn(width, height, |x, y| {
        level + gradient * 0.5 * (x as f64 / w + y as f64 / h) - 0.5 * gradient
    })?;
    MultiImage::gray(p, Domain::Aligned8)
}

/// Noise levels and exposure gains for a generated scene. Sigmas are in
/// 8-bit levels of the aligned frame.
#[derive(Clone, Debug)]
pub struct SceneRecipe {
    pub sigma_reference: f64,
    pub sigma_clean: f64,
    pub sigma_noisy: Vec<f64>,
    /// Raw exposure of each noisy capture relative to the reference, per channel.
    pub noisy_exposure: Vec<[f64; 3]>,
    /// Mapping that defines the 8-bit frame the sigmas refer to.
    pub anchor: AnchorMapping,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            sigma_reference: 3.0,
            sigma_clean: 3.0,
            sigma_noisy: vec![10.0],
            noisy_exposure: vec![[0.5, 0.45, 0.55]],
            anchor: AnchorMapping::REFERENCE,
        }
    }
}

/// Generates raw captures of `gt16` with the recipe's noise, returning the
/// bundle and the 8-bit ground truth in the recipe's anchor frame.
pub fn synthetic_scene(
    scene_id: &str,
    camera_tag: &str,
    gt16: &MultiImage,
    recipe: &SceneRecipe,
    seed: u64,
) -> Result<(SceneBundle, MultiImage)> {
    let gamma = compute_reference_gamma(gt16, recipe.anchor)?.gamma;
    let gt8 = scale_clamp(gt16, [gamma; 3], 0.0, 255.0)?;
    let id_hash = scene_id
        .bytes()
        .fold(0u64, |a, b| a.wrapping_mul(131).wrapping_add(b as u64));
    let scene_key = stream_id(&[seed, id_hash]);

    let reference = add_gaussian_noise(gt16, recipe.sigma_reference / gamma, seed, stream_id(&[scene_key, 1]))?;
    let clean = add_gaussian_noise(gt16, recipe.sigma_clean / gamma, seed, stream_id(&[scene_key, 2]))?;
    let mut noisy = Vec::new();
    for (k, &sigma) in recipe.sigma_noisy.iter().enumerate() {
        let gains = recipe.noisy_exposure.get(k).copied().unwrap_or([1.0; 3]);
        let exposed = scale_clamp(gt16, gains, 0.0, 65535.0)?;
        // Noise scaled with the exposure so the aligned noise is `sigma`.
        let stream = stream_id(&[scene_key, 10 + k as u64]);
        noisy.push(add_noise_with(&exposed, seed, stream, |c, _| sigma / gamma * gains[c])?);
    }
    Ok((
        SceneBundle {
            scene_id: scene_id.to_string(),
            camera_tag: camera_tag.to_string(),
            reference: vec![reference],
            clean: vec![clean],
            noisy,
            crop: None,
        },
        gt8,
    ))
}
