use super::RasterPlane;
use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, Execution};

/// Normalized 1-D Gaussian kernel truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut weights: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / denom).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(weights)
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(plane: &RasterPlane, sigma: f64) -> Result<RasterPlane> {
    gaussian_blur_with(plane, sigma, Execution::default())
}

pub fn gaussian_blur_with(plane: &RasterPlane, sigma: f64, exec: Execution) -> Result<RasterPlane> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = kernel.len() / 2;
    let (w, h) = (plane.width(), plane.height());
    let src = plane.samples();

    // Horizontal pass on a row padded with replicated edge samples.
    let mut tmp = vec![0.0; w * h];
    for_each_chunk(exec, &mut tmp, w, |y, out| {
        let row = &src[y * w..(y + 1) * w];
        let mut padded = Vec::with_capacity(w + 2 * radius);
        padded.extend(std::iter::repeat_n(row[0], radius));
        padded.extend_from_slice(row);
        padded.extend(std::iter::repeat_n(row[w - 1], radius));
        for (x, o) in out.iter_mut().enumerate() {
            let window = &padded[x..x + kernel.len()];
            *o = window.iter().zip(&kernel).map(|(v, k)| v * k).sum();
        }
    });

    // Vertical pass, accumulating whole rows for cache locality.
    let mut out = vec![0.0; w * h];
    for_each_chunk(exec, &mut out, w, |y, orow| {
        for (k, &weight) in kernel.iter().enumerate() {
            let sy = (y + k).saturating_sub(radius).min(h - 1);
            let trow = &tmp[sy * w..(sy + 1) * w];
            for (o, &t) in orow.iter_mut().zip(trow) {
                *o += weight * t;
            }
        }
    });
    Ok(RasterPlane::from_parts(w, h, out))
}

/// Per-pixel gradient magnitude: central differences inside, one-sided on
/// the borders.
pub fn gradient_magnitude(plane: &RasterPlane) -> Result<RasterPlane> {
    let (w, h) = (plane.width(), plane.height());
    if w < 2 || h < 2 {
        return Err(Error::invalid(format!(
            "gradient needs at least a 2x2 plane, got {w}x{h}"
        )));
    }
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / span as f64;
    let mut out = vec![0.0; w * h];
    for_each_chunk(Execution::default(), &mut out, w, |y, orow| {
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for (x, o) in orow.iter_mut().enumerate() {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = diff(plane.get(x0, y), plane.get(x1, y), x1 - x0);
            let gy = diff(plane.get(x, y0), plane.get(x, y1), y1 - y0);
            *o = (gx * gx + gy * gy).sqrt();
        }
    });
    Ok(RasterPlane::from_parts(w, h, out))
}
