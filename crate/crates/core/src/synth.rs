//! Procedural scenes and ground-truth camera shake.
//!
//! Shake convention: the shaken frame at pixel `x` shows what the stable frame
//! shows at `J_t(x)`, so `J_t` maps shaken coordinates to stable coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::geometry::AffineTransform;
use crate::warp::{affine_to_warp_field, apply_warp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Checkerboard with per-cell tint so cells stay distinguishable.
    Checker { cell: usize },
    /// Multi-octave smooth noise over a linear ramp.
    GradientNoise,
    /// Rectangles and discs over a smooth background.
    Sprites,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraPath {
    Static,
    /// Pixels per frame.
    Linear { vx: f64, vy: f64 },
    /// Amplitudes in pixels, period in frames.
    Sinusoidal { amp_x: f64, amp_y: f64, period: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Canvas side relative to the frame side.
    pub canvas_scale: usize,
    pub texture: Texture,
    pub path: CameraPath,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            canvas_scale: 2,
            texture: Texture::Sprites,
            path: CameraPath::Static,
            frames: 64,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!("frame size {}x{} below 2x2", self.height, self.width)));
        }
        if self.canvas_scale < 2 {
            return Err(Error::Config("canvas must be at least twice the frame size".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frame count must be >= 1".into()));
        }
        if let Texture::Checker { cell } = self.texture {
            if cell == 0 {
                return Err(Error::Config("checker cell must be >= 1".into()));
            }
        }
        if let CameraPath::Sinusoidal { period, .. } = self.path {
            if !(period > 0.0) {
                return Err(Error::Config("sinusoid period must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Smooth value noise in `[0, 1]` on a lattice of `cell` pixels.
struct ValueNoise {
    cols: usize,
    cell: f64,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(h: usize, w: usize, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let cols = (w as f64 / cell).ceil() as usize + 2;
        let rows = (h as f64 / cell).ceil() as usize + 2;
        Self {
            cols,
            cell,
            lattice: (0..rows * cols).map(|_| rng.random()).collect(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f32 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let s = |t: f64| (t * t * (3.0 - 2.0 * t)) as f32;
        let (fx, fy) = (s(gx - x0 as f64), s(gy - y0 as f64));
        let l = |c: usize, r: usize| self.lattice[r * self.cols + c];
        let top = l(x0, y0) + (l(x0 + 1, y0) - l(x0, y0)) * fx;
        let bot = l(x0, y0 + 1) + (l(x0 + 1, y0 + 1) - l(x0, y0 + 1)) * fx;
        top + (bot - top) * fy
    }
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r2: f64 },
}

fn paint_canvas(h: usize, w: usize, texture: Texture, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match texture {
        Texture::Checker { cell } => {
            let cols = w.div_ceil(cell);
            let tint: Vec<[f32; 3]> = (0..h.div_ceil(cell) * cols)
                .map(|_| [rng.random_range(0.0..0.25), rng.random_range(0.0..0.25), rng.random_range(0.0..0.25)])
                .collect();
            Frame::from_fn(h, w, |x, y| {
                let (cx, cy) = (x / cell, y / cell);
                let base = if (cx + cy) % 2 == 0 { 0.7 } else { 0.1 };
                let t = tint[cy * cols + cx];
                [base + t[0], base + t[1], base + t[2]]
            })
            .expect("canvas dimensions validated")
        }
        Texture::GradientNoise => {
            let octaves: Vec<(ValueNoise, f32)> = [(32.0, 0.45), (12.0, 0.3), (5.0, 0.25)]
                .iter()
                .map(|&(c, a)| (ValueNoise::new(h, w, c, &mut rng), a))
                .collect();
            let hue: [f32; 3] = [rng.random_range(0.6..1.0), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)];
            Frame::from_fn(h, w, |x, y| {
                let n: f32 = octaves.iter().map(|(o, a)| a * o.at(x as f64, y as f64)).sum();
                let ramp = 0.2 * (x as f32 / w as f32) + 0.1 * (y as f32 / h as f32);
                let g = 0.75 * n + ramp;
                [g * hue[0], g * hue[1], g * hue[2]]
            })
            .expect("canvas dimensions validated")
        }
        Texture::Sprites => {
            let bg = ValueNoise::new(h, w, 40.0, &mut rng);
            let count = (h * w) / 260;
            let shapes: Vec<(Shape, [f32; 3])> = (0..count)
                .map(|_| {
                    let color = [rng.random(), rng.random(), rng.random()];
                    let cx = rng.random_range(0.0..w as f64);
                    let cy = rng.random_range(0.0..h as f64);
                    let shape = if rng.random_bool(0.7) {
                        let hw = rng.random_range(2.0..9.0);
                        let hh = rng.random_range(2.0..9.0);
                        Shape::Rect {
                            x0: cx - hw,
                            y0: cy - hh,
                            x1: cx + hw,
                            y1: cy + hh,
                        }
                    } else {
                        let r: f64 = rng.random_range(2.5..7.0);
                        Shape::Disc { cx, cy, r2: r * r }
                    };
                    (shape, color)
                })
                .collect();
            // bucket shapes by row band to keep painting linear in area
            let band = 32usize;
            let mut bands: Vec<Vec<usize>> = vec![Vec::new(); h.div_ceil(band)];
            for (i, (s, _)) in shapes.iter().enumerate() {
                let (ya, yb) = match *s {
                    Shape::Rect { y0, y1, .. } => (y0, y1),
                    Shape::Disc { cy, r2, .. } => (cy - r2.sqrt(), cy + r2.sqrt()),
                };
                let lo = (ya.max(0.0) as usize / band).min(bands.len() - 1);
                let hi = (yb.max(0.0) as usize / band).min(bands.len() - 1);
                for b in bands.iter_mut().take(hi + 1).skip(lo) {
                    b.push(i);
                }
            }
            let sharp = Frame::from_fn(h, w, |x, y| {
                let g = 0.3 + 0.35 * bg.at(x as f64, y as f64);
                let mut px = [g, g * 0.9, g * 0.8];
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                for &i in &bands[y / band] {
                    let (s, c) = &shapes[i];
                    let hit = match *s {
                        Shape::Rect { x0, y0, x1, y1 } => fx >= x0 && fx < x1 && fy >= y0 && fy < y1,
                        Shape::Disc { cx, cy, r2 } => (fx - cx).powi(2) + (fy - cy).powi(2) <= r2,
                    };
                    if hit {
                        px = *c;
                    }
                }
                px
            })
            .expect("canvas dimensions validated");
            soften(&sharp)
        }
    }
}

/// Separable `[1, 2, 1] / 4` blur, a stand-in for lens softness.
fn soften(f: &Frame) -> Frame {
    let (h, w) = f.dims();
    let pass = |src: &Frame, dx: usize, dy: usize| {
        Frame::from_fn(h, w, |x, y| {
            let a = src.pixel(x.saturating_sub(dx), y.saturating_sub(dy));
            let b = src.pixel(x, y);
            let c = src.pixel((x + dx).min(w - 1), (y + dy).min(h - 1));
            std::array::from_fn(|k| 0.25 * a[k] + 0.5 * b[k] + 0.25 * c[k])
        })
        .expect("same dimensions")
    };
    pass(&pass(f, 1, 0), 0, 1)
}

/// A painted canvas plus a camera path over it.
#[derive(Clone, Debug)]
pub struct Scene {
    cfg: SceneConfig,
    canvas: Frame,
}

impl Scene {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let canvas = paint_canvas(cfg.height * cfg.canvas_scale, cfg.width * cfg.canvas_scale, cfg.texture, cfg.seed);
        Ok(Self { cfg, canvas })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn canvas(&self) -> &Frame {
        &self.canvas
    }

    /// Canvas position of the top-left frame pixel at time `t`.
    pub fn origin(&self, t: usize) -> (f64, f64) {
        let bx = ((self.canvas.width() - self.cfg.width) / 2) as f64;
        let by = ((self.canvas.height() - self.cfg.height) / 2) as f64;
        let t = t as f64;
        match self.cfg.path {
            CameraPath::Static => (bx, by),
            CameraPath::Linear { vx, vy } => (bx + vx * t, by + vy * t),
            CameraPath::Sinusoidal { amp_x, amp_y, period } => {
                let s = (2.0 * std::f64::consts::PI * t / period).sin();
                (bx + amp_x * s, by + amp_y * s)
            }
        }
    }

    /// Frame `t` viewed through `view`, which maps frame pixels to the stable
    /// frame's pixel grid.
    pub fn render_frame(&self, t: usize, view: &AffineTransform) -> Frame {
        let (ox, oy) = self.origin(t);
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = view.apply(x as f64, y as f64);
                data.extend_from_slice(&self.canvas.sample_bilinear((sx + ox) as f32, (sy + oy) as f32));
            }
        }
        Frame::from_raw(h, w, data)
    }

    pub fn render(&self) -> FrameSequence {
        let frames = (0..self.cfg.frames)
            .into_par_iter()
            .map(|t| self.render_frame(t, &AffineTransform::IDENTITY))
            .collect();
        FrameSequence::new(frames).expect("uniform frames")
    }

    /// Stable and shaken renders with the shake sampled from the scene canvas
    /// itself, so shaken frames have no empty borders.
    pub fn render_shaken(&self, model: &JitterModel) -> Result<SyntheticClip> {
        let transforms = model.sample(self.cfg.frames, (self.cfg.height, self.cfg.width))?;
        let shaken = (0..self.cfg.frames)
            .into_par_iter()
            .map(|t| self.render_frame(t, &transforms[t]))
            .collect();
        Ok(SyntheticClip {
            stable: self.render(),
            shaken: FrameSequence::new(shaken)?,
            transforms,
        })
    }
}

pub fn render_scene(cfg: &SceneConfig) -> Result<FrameSequence> {
    Ok(Scene::new(cfg.clone())?.render())
}

#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub stable: FrameSequence,
    pub shaken: FrameSequence,
    /// `transforms[t]` maps shaken pixels of frame `t` to stable pixels.
    pub transforms: Vec<AffineTransform>,
}

/// AR(1) similarity jitter about the frame center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    /// Pixels.
    pub trans_sigma: f64,
    /// Radians.
    pub rot_sigma: f64,
    /// Log scale units.
    pub scale_sigma: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for JitterModel {
    fn default() -> Self {
        Self {
            trans_sigma: 4.0,
            rot_sigma: 0.01,
            scale_sigma: 0.0,
            rho: 0.8,
            seed: 0,
        }
    }
}

/// Each parameter is clipped to this many standard deviations.
const CLIP_SIGMAS: f64 = 3.0;

impl JitterModel {
    pub fn none() -> Self {
        Self {
            trans_sigma: 0.0,
            rot_sigma: 0.0,
            scale_sigma: 0.0,
            rho: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.trans_sigma, self.rot_sigma, self.scale_sigma];
        if sig.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("jitter sigmas must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("jitter rho {} outside [0, 1)", self.rho)));
        }
        Ok(())
    }

    /// Per-frame shake transforms for frames of size `(h, w)`.
    pub fn sample(&self, n: usize, (h, w): (usize, usize)) -> Result<Vec<AffineTransform>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sig = [self.trans_sigma, self.trans_sigma, self.rot_sigma, self.scale_sigma];
        let innov = (1.0 - self.rho * self.rho).sqrt();
        let mut state = [0.0f64; 4];
        let center = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            for (k, s) in state.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                let next = if t == 0 { sig[k] * e } else { self.rho * *s + innov * sig[k] * e };
                *s = next.clamp(-CLIP_SIGMAS * sig[k], CLIP_SIGMAS * sig[k]);
            }
            out.push(AffineTransform::similarity_about(center, state[2], state[3].exp(), state[0], state[1]));
        }
        Ok(out)
    }
}

/// Shake an existing sequence by resampling each frame; uncovered pixels are
/// black.
pub fn inject_jitter(seq: &FrameSequence, model: &JitterModel) -> Result<(FrameSequence, Vec<AffineTransform>)> {
    let (h, w) = seq.dims();
    let transforms = model.sample(seq.len(), (h, w))?;
    let frames = seq
        .frames()
        .par_iter()
        .zip(&transforms)
        .map(|(f, j)| apply_warp(f, &affine_to_warp_field(j, h, w)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((FrameSequence::new(frames)?, transforms))
}
