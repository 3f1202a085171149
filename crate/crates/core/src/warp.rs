//! Dense warp fields and bilinear grid sampling.
//!
//! Coordinates are corner-aligned: pixel `x` of a width-`W` image sits at
//! `2x/(W-1) - 1`, so `-1` and `+1` are the first and last pixel centers.
//! A warp field stores, for every output pixel, the normalized location in the
//! source frame to sample from. Samples outside `[-1, 1]` read as black.

use crate::error::{Error, Result};
use crate::frame::{bilerp, Frame, CHANNELS};
use crate::geometry::AffineTransform;

/// Slack allowed when testing a coordinate against `[-1, 1]`.
pub const RANGE_EPS: f32 = 1e-5;

#[inline]
pub fn to_normalized(p: f64, extent: usize) -> f64 {
    2.0 * p / (extent - 1) as f64 - 1.0
}

#[inline]
pub fn from_normalized(u: f64, extent: usize) -> f64 {
    (u + 1.0) * 0.5 * (extent - 1) as f64
}

#[inline]
pub fn in_range(u: f32) -> bool {
    (-1.0 - RANGE_EPS..=1.0 + RANGE_EPS).contains(&u)
}

/// `H x W x 2` normalized sampling coordinates, interleaved `(u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WarpField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invalid(format!("warp field must be at least 2x2, got {height}x{width}")));
        }
        if data.len() != height * width * 2 {
            return Err(Error::dims(
                format!("{} values", height * width * 2),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite warp field value"));
        }
        Ok(Self { height, width, data })
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        affine_to_warp_field(&AffineTransform::IDENTITY, height, width)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width * 2])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Bilinear interpolation of the field at fractional pixel coordinates,
    /// clamped to the field's extent.
    #[inline]
    pub fn sample(&self, px: f32, py: f32) -> (f32, f32) {
        let [u, v] = bilerp::<2>(&self.data, self.width, self.height, px, py, false);
        (u, v)
    }

    /// Sample the field at a normalized output location.
    #[inline]
    pub fn sample_normalized(&self, u: f32, v: f32) -> (f32, f32) {
        let px = (u + 1.0) * 0.5 * (self.width - 1) as f32;
        let py = (v + 1.0) * 0.5 * (self.height - 1) as f32;
        self.sample(px, py)
    }

    /// Per-pixel validity: both coordinates inside `[-1, 1]`.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.data
            .chunks_exact(2)
            .map(|uv| in_range(uv[0]) && in_range(uv[1]))
            .collect()
    }

    /// Resample the field to another resolution. Affine fields stay exact.
    pub fn resize(&self, height: usize, width: usize) -> Result<WarpField> {
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        if height < 2 || width < 2 {
            return Err(Error::invalid("warp field resize below 2x2"));
        }
        let sx = (self.width - 1) as f32 / (width - 1) as f32;
        let sy = (self.height - 1) as f32 / (height - 1) as f32;
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = self.sample(x as f32 * sx, y as f32 * sy);
                data.push(u);
                data.push(v);
            }
        }
        Ok(WarpField { height, width, data })
    }

    /// Elementwise average of two fields of equal shape.
    pub fn average(&self, other: &WarpField) -> Result<WarpField> {
        if self.dims() != other.dims() {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Ok(WarpField { height: self.height, width: self.width, data })
    }

    /// Largest displacement from the identity, in pixels.
    pub fn max_displacement_px(&self) -> f64 {
        self.displacements().fold(0.0, f64::max)
    }

    pub fn mean_displacement_px(&self) -> f64 {
        let n = (self.height * self.width) as f64;
        self.displacements().sum::<f64>() / n
    }

    fn displacements(&self) -> impl Iterator<Item = f64> + '_ {
        let (h, w) = (self.height, self.width);
        self.data.chunks_exact(2).enumerate().map(move |(i, uv)| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let dx = from_normalized(uv[0] as f64, w) - x;
            let dy = from_normalized(uv[1] as f64, h) - y;
            (dx * dx + dy * dy).sqrt()
        })
    }
}

/// Express a pixel-space affine as a warp field: output pixel `(x, y)` samples
/// the source at `a(x, y)`.
pub fn affine_to_warp_field(a: &AffineTransform, h: usize, w: usize) -> Result<WarpField> {
    a.check_finite()?;
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("warp field must be at least 2x2, got {h}x{w}")));
    }
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = a.apply(x as f64, y as f64);
            data.push(to_normalized(sx, w) as f32);
            data.push(to_normalized(sy, h) as f32);
        }
    }
    WarpField::new(h, w, data)
}

/// Field for an affine acting directly on normalized coordinates, the
/// convention used by the network's affine head.
pub fn affine_grid_normalized(theta: &AffineTransform, h: usize, w: usize) -> Result<WarpField> {
    theta.check_finite()?;
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        let v = to_normalized(y as f64, h);
        for x in 0..w {
            let u = to_normalized(x as f64, w);
            let (a, b) = theta.apply(u, v);
            data.push(a as f32);
            data.push(b as f32);
        }
    }
    WarpField::new(h, w, data)
}

#[inline]
fn sample_or_black(frame: &Frame, u: f32, v: f32) -> [f32; 3] {
    if !(in_range(u) && in_range(v)) {
        return [0.0; 3];
    }
    let px = (u + 1.0) * 0.5 * (frame.width() - 1) as f32;
    let py = (v + 1.0) * 0.5 * (frame.height() - 1) as f32;
    frame.sample_bilinear(px, py)
}

/// Bilinearly resample `frame` at the field's coordinates.
pub fn apply_warp(frame: &Frame, field: &WarpField) -> Result<Frame> {
    if frame.dims() != field.dims() {
        return Err(Error::dims(
            format!("{}x{}", frame.height(), frame.width()),
            format!("{}x{}", field.height(), field.width()),
        ));
    }
    let mut data = Vec::with_capacity(frame.height() * frame.width() * CHANNELS);
    for uv in field.data().chunks_exact(2) {
        data.extend_from_slice(&sample_or_black(frame, uv[0], uv[1]));
    }
    Ok(Frame::from_raw(frame.height(), frame.width(), data))
}

/// Warp, crop and resize in one resampling pass.
///
/// Output pixel `(x, y)` maps to the normalized point of the crop rectangle
/// `(left, top, right, bottom)`, the field (at any resolution) is interpolated
/// there, and `frame` is sampled at the result. This is the composition of
/// [`apply_warp`] followed by a crop-resize, without the intermediate image.
pub fn warp_crop_resize(
    frame: &Frame,
    field: &WarpField,
    rect: (f32, f32, f32, f32),
    out_h: usize,
    out_w: usize,
) -> Result<Frame> {
    if out_h < 2 || out_w < 2 {
        return Err(Error::invalid("output must be at least 2x2"));
    }
    let (left, top, right, bottom) = rect;
    let (fh, fw) = field.dims();
    let (h, w) = frame.dims();
    let (sx, sy) = (0.5 * (w - 1) as f32, 0.5 * (h - 1) as f32);
    let col_px: Vec<f32> = (0..out_w)
        .map(|x| {
            let u = left + (right - left) * x as f32 / (out_w - 1) as f32;
            (u + 1.0) * 0.5 * (fw - 1) as f32
        })
        .collect();
    let mut data = vec![0.0f32; out_h * out_w * CHANNELS];
    for (y, row) in data.chunks_exact_mut(out_w * CHANNELS).enumerate() {
        let v = top + (bottom - top) * y as f32 / (out_h - 1) as f32;
        let py = (v + 1.0) * 0.5 * (fh - 1) as f32;
        for (px, out) in col_px.iter().zip(row.chunks_exact_mut(CHANNELS)) {
            let [su, sv] = bilerp::<2>(field.data(), fw, fh, *px, py, false);
            if in_range(su) && in_range(sv) {
                let p = bilerp::<3>(frame.data(), w, h, (su + 1.0) * sx, (sv + 1.0) * sy, true);
                for (o, q) in out.iter_mut().zip(p) {
                    *o = q.clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(Frame::from_raw(out_h, out_w, data))
}
