//! Binary PNM (P6) and 24-bit BMP codecs.
//!
//! PNM input accepts maxval 255 (decoded as [`Domain::Aligned8`]) or 65535
//! (big-endian samples, decoded as [`Domain::Raw16`]). Writers round half
//! away from zero and clamp to the output range.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{Domain, MultiImage, RasterPlane};

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Parses the next decimal token, returning it with its byte offset.
    fn number(&mut self, field: &str) -> Result<(usize, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| format_err(start, format!("{field} out of range")))
    }
}

/// Decodes a binary P6 image.
pub fn decode_pnm(bytes: &[u8]) -> Result<MultiImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(format_err(0, "missing P6 magic"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(2, "expected whitespace after magic"));
    }
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(maxval_at, "zero image dimension"));
    }
    let (domain, bytes_per_sample) = match maxval {
        255 => (Domain::Aligned8, 1),
        65535 => (Domain::Raw16, 2),
        other => {
            return Err(format_err(
                maxval_at,
                format!("unsupported maxval {other} (expected 255 or 65535)"),
            ))
        }
    };
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(cur.pos, "expected single whitespace before payload"));
    }
    let data_start = cur.pos + 1;
    let pixels = width
        .checked_mul(height)
        .ok_or_else(|| format_err(maxval_at, "image too large"))?;
    let needed = pixels * 3 * bytes_per_sample;
    let payload = &bytes[data_start..];
    if payload.len() < needed {
        return Err(format_err(
            data_start + payload.len(),
            format!("truncated payload: {} of {needed} bytes", payload.len()),
        ));
    }

    let mut planes = [
        Vec::with_capacity(pixels),
        Vec::with_capacity(pixels),
        Vec::with_capacity(pixels),
    ];
    for px in payload[..needed].chunks_exact(3 * bytes_per_sample) {
        for (c, plane) in planes.iter_mut().enumerate() {
            let v = if bytes_per_sample == 1 {
                px[c] as f64
            } else {
                u16::from_be_bytes([px[2 * c], px[2 * c + 1]]) as f64
            };
            plane.push(v);
        }
    }
    let [r, g, b] = planes;
    MultiImage::new(
        [
            RasterPlane::new(width, height, r)?,
            RasterPlane::new(width, height, g)?,
            RasterPlane::new(width, height, b)?,
        ],
        domain,
    )
}

/// Reads a binary P6 file, 8- or 16-bit.
pub fn read_pnm16(path: impl AsRef<Path>) -> Result<MultiImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| e.for_image(path.display().to_string()))
}

#[inline]
fn quantize(v: f64, max: f64) -> f64 {
    v.round().clamp(0.0, max)
}

fn interleaved(image: &MultiImage, max: f64) -> impl Iterator<Item = [f64; 3]> + '_ {
    let [r, g, b] = image.channels();
    r.samples()
        .iter()
        .zip(g.samples())
        .zip(b.samples())
        .map(move |((&r, &g), &b)| [quantize(r, max), quantize(g, max), quantize(b, max)])
}

fn require_domain(image: &MultiImage, domain: Domain, what: &str) -> Result<()> {
    if image.domain() == domain {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} needs a {domain:?} image, got {:?}",
            image.domain()
        )))
    }
}

pub fn encode_pnm8(image: &MultiImage) -> Result<Vec<u8>> {
    require_domain(image, Domain::Aligned8, "8-bit PNM")?;
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.reserve(image.pixel_count() * 3);
    for px in interleaved(image, 255.0) {
        out.extend(px.iter().map(|&v| v as u8));
    }
    Ok(out)
}

pub fn encode_pnm16(image: &MultiImage) -> Result<Vec<u8>> {
    require_domain(image, Domain::Raw16, "16-bit PNM")?;
    let mut out = format!("P6\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    out.reserve(image.pixel_count() * 6);
    for px in interleaved(image, 65535.0) {
        for v in px {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    Ok(out)
}

/// Uncompressed 24-bit BI_RGB, bottom-up rows padded to 4 bytes.
pub fn encode_bmp8(image: &MultiImage) -> Result<Vec<u8>> {
    require_domain(image, Domain::Aligned8, "BMP")?;
    let (w, h) = (image.width(), image.height());
    let stride = (w * 3 + 3) & !3;
    let image_size = stride * h;
    let file_size = 54 + image_size;
    if file_size > u32::MAX as usize || w > i32::MAX as usize || h > i32::MAX as usize {
        return Err(Error::invalid("image too large for BMP"));
    }
    let mut out = Vec::with_capacity(file_size);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_size as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&54u32.to_le_bytes());
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // BI_RGB
    out.extend_from_slice(&(image_size as u32).to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes()); // 72 dpi
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());

    let [r, g, b] = image.channels();
    for y in (0..h).rev() {
        let row_start = out.len();
        for x in 0..w {
            for plane in [b, g, r] {
                out.push(quantize(plane.get(x, y), 255.0) as u8);
            }
        }
        out.resize(row_start + stride, 0);
    }
    Ok(out)
}

/// Decodes the BMP flavour produced by [`encode_bmp8`] (24-bit BI_RGB).
pub fn decode_bmp24(bytes: &[u8]) -> Result<MultiImage> {
    let u32_at = |o: usize| -> Result<u32> {
        bytes
            .get(o..o + 4)
            .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
            .ok_or_else(|| format_err(o, "truncated header"))
    };
    if bytes.len() < 54 || &bytes[..2] != b"BM" {
        return Err(format_err(0, "missing BM signature"));
    }
    let offset = u32_at(10)? as usize;
    let width = u32_at(18)? as i32;
    let height = u32_at(22)? as i32;
    let bpp = u16::from_le_bytes([bytes[28], bytes[29]]);
    if bpp != 24 {
        return Err(format_err(28, format!("unsupported bit depth {bpp}")));
    }
    if u32_at(30)? != 0 {
        return Err(format_err(30, "compressed BMP not supported"));
    }
    if width <= 0 || height == 0 {
        return Err(format_err(18, "bad dimensions"));
    }
    let (w, h) = (width as usize, height.unsigned_abs() as usize);
    let stride = (w * 3 + 3) & !3;
    if bytes.len() < offset + stride * h {
        return Err(format_err(bytes.len(), "truncated pixel array"));
    }
    let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for row in 0..h {
        let y = if height > 0 { h - 1 - row } else { row };
        let src = &bytes[offset + row * stride..];
        for x in 0..w {
            for (k, c) in [2usize, 1, 0].into_iter().enumerate() {
                planes[c][y * w + x] = src[x * 3 + k] as f64;
            }
        }
    }
    let [r, g, b] = planes;
    MultiImage::new(
        [
            RasterPlane::new(w, h, r)?,
            RasterPlane::new(w, h, g)?,
            RasterPlane::new(w, h, b)?,
        ],
        Domain::Aligned8,
    )
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pnm8(image: &MultiImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pnm8(image)?)
}

pub fn write_pnm16(image: &MultiImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pnm16(image)?)
}

pub fn write_bmp8(image: &MultiImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_bmp8(image)?)
}

/// Rounds every sample the way the 8-bit writers do.
pub fn quantize_aligned8(image: &MultiImage) -> Result<MultiImage> {
    require_domain(image, Domain::Aligned8, "8-bit quantization")?;
    let channels = image.channels().clone().map(|p| {
        let (w, h) = (p.width(), p.height());
        RasterPlane::from_parts(w, h, p.into_samples().into_iter().map(|v| quantize(v, 255.0)).collect())
    });
    Ok(MultiImage::from_parts(channels, Domain::Aligned8))
}
