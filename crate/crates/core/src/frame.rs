//! RGB frames with samples in `[0, 1]`, frame sequences and grayscale planes.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Sampling positions this close to a pixel center, in pixels, read that
/// pixel exactly. Absorbs `f32` round-off in normalized coordinates.
pub const SNAP_PX: f32 = 1e-4;

#[inline]
fn snap_weight(f: f32) -> f32 {
    if f < SNAP_PX {
        0.0
    } else if f > 1.0 - SNAP_PX {
        1.0
    } else {
        f
    }
}

/// Bilinear read of a `C`-channel interleaved plane at clamped pixel
/// coordinates, optionally snapping near-integer weights.
#[inline(always)]
pub(crate) fn bilerp<const C: usize>(d: &[f32], w: usize, h: usize, px: f32, py: f32, snap: bool) -> [f32; C] {
    let px = px.clamp(0.0, (w - 1) as f32);
    let py = py.clamp(0.0, (h - 1) as f32);
    let x0 = (px as usize).min(w - 2);
    let y0 = (py as usize).min(h - 2);
    let (mut fx, mut fy) = (px - x0 as f32, py - y0 as f32);
    if snap {
        fx = snap_weight(fx);
        fy = snap_weight(fy);
    }
    let i00 = (y0 * w + x0) * C;
    let i10 = i00 + w * C;
    let (r0, r1) = (&d[i00..i00 + 2 * C], &d[i10..i10 + 2 * C]);
    std::array::from_fn(|c| {
        let top = r0[c] * (1.0 - fx) + r0[c + C] * fx;
        let bot = r1[c] * (1.0 - fx) + r1[c + C] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// An `H x W x 3` image, row-major, interleaved RGB, samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invalid(format!(
                "frame must be at least 2x2, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::dims(
                format!("{} samples", height * width * CHANNELS),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid(format!(
                "sample {pos} = {} is not a finite value in [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Construct without validation. Callers guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Build a frame from a per-pixel closure; values are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for v in px {
                    if !v.is_finite() {
                        return Err(Error::invalid(format!("non-finite sample at ({x}, {y})")));
                    }
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * CHANNELS {
            return Err(Error::dims(
                format!("{} bytes", height * width * CHANNELS),
                format!("{} bytes", bytes.len()),
            ));
        }
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
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
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Luma plane (Rec. 601 weights).
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        GrayImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Bilinear resize with corner-aligned sampling, so normalized coordinates
    /// mean the same thing before and after.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Frame> {
        if out_h < 2 || out_w < 2 {
            return Err(Error::invalid(format!("resize target {out_h}x{out_w} below 2x2")));
        }
        if (out_h, out_w) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let sy = (self.height - 1) as f32 / (out_h - 1) as f32;
        let sx = (self.width - 1) as f32 / (out_w - 1) as f32;
        let mut data = Vec::with_capacity(out_h * out_w * CHANNELS);
        for y in 0..out_h {
            let fy = y as f32 * sy;
            for x in 0..out_w {
                let px = self.sample_bilinear(x as f32 * sx, fy);
                data.extend_from_slice(&px);
            }
        }
        Ok(Frame::from_raw(out_h, out_w, data))
    }

    /// Bilinear sample at pixel coordinates, clamped to the pixel-center box;
    /// callers handle out-of-range policy. Positions within [`SNAP_PX`] of a
    /// pixel center read that pixel exactly.
    #[inline]
    pub(crate) fn sample_bilinear(&self, px: f32, py: f32) -> [f32; 3] {
        bilerp::<CHANNELS>(&self.data, self.width, self.height, px, py, true).map(|v| v.clamp(0.0, 1.0))
    }

    /// Mean squared error over all samples.
    pub fn mse(&self, other: &Frame) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Peak signal-to-noise ratio in dB for unit-range signals. Identical frames
/// give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Ordered frames of identical dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("frame sequence must contain at least one frame"))?;
        let dims = first.dims();
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::dims(
                    format!("{}x{}", dims.0, dims.1),
                    format!("{}x{}", f.height(), f.width()),
                )
                .at_frame(i));
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn get(&self, i: usize) -> Option<&Frame> {
        self.frames.get(i)
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn resize(&self, h: usize, w: usize) -> Result<FrameSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.resize(h, w))
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames)
    }
}

impl<'a> IntoIterator for &'a FrameSequence {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

/// Single-channel plane used by feature detection.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge clamping.
    #[inline]
    pub fn sample(&self, px: f32, py: f32) -> f32 {
        let px = px.clamp(0.0, (self.width - 1) as f32);
        let py = py.clamp(0.0, (self.height - 1) as f32);
        let x0 = (px as usize).min(self.width - 2);
        let y0 = (py as usize).min(self.height - 2);
        let fx = px - x0 as f32;
        let fy = py - y0 as f32;
        let i = y0 * self.width + x0;
        let d = &self.data;
        let top = d[i] + (d[i + 1] - d[i]) * fx;
        let bot = d[i + self.width] + (d[i + self.width + 1] - d[i + self.width]) * fx;
        top + (bot - top) * fy
    }
}
