//! Corner detection and patch-correlation matching.

use crate::frame::{Frame, GrayImage};
use crate::motion::fit::{Correspondence, CorrespondenceSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f32,
}

/// Produces keypoints from a grayscale plane. Implementations must be
/// deterministic and return points sorted by decreasing response.
pub trait FeatureDetector: Send + Sync {
    fn detect(&self, gray: &GrayImage, max_points: usize) -> Vec<Keypoint>;
}

/// Shi–Tomasi minimum-eigenvalue corners on a Gaussian-weighted structure
/// tensor, with non-maximum suppression and parabolic subpixel refinement.
#[derive(Clone, Debug)]
pub struct ShiTomasi {
    /// Gaussian window sigma for the structure tensor, in pixels.
    pub window_sigma: f32,
    /// Half-size of the non-maximum suppression neighborhood.
    pub nms_radius: usize,
    /// Keep responses above `quality * max_response`.
    pub quality: f32,
    /// Absolute response floor; flat images produce nothing.
    pub min_response: f32,
    /// Pixels closer than this to the border are never reported.
    pub border: usize,
}

impl Default for ShiTomasi {
    fn default() -> Self {
        Self {
            window_sigma: 1.2,
            nms_radius: 3,
            quality: 0.01,
            min_response: 1e-4,
            border: 7,
        }
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with zero padding.
fn blur(src: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for (t, kv) in k.iter().enumerate() {
            let yy = y as isize + t as isize - r;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

impl ShiTomasi {
    /// Minimum-eigenvalue response map, same size as the input.
    pub fn response_map(&self, gray: &GrayImage) -> Vec<f32> {
        let (w, h) = (gray.width, gray.height);
        let mut ixx = vec![0.0f32; w * h];
        let mut iyy = vec![0.0f32; w * h];
        let mut ixy = vec![0.0f32; w * h];
        let d = &gray.data;
        for y in 1..h.saturating_sub(1) {
            for x in 1..w - 1 {
                let p = |dx: isize, dy: isize| d[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)) / 8.0;
                let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1)) / 8.0;
                let i = y * w + x;
                ixx[i] = gx * gx;
                iyy[i] = gy * gy;
                ixy[i] = gx * gy;
            }
        }
        let k = gaussian_kernel(self.window_sigma);
        let sxx = blur(&ixx, w, h, &k);
        let syy = blur(&iyy, w, h, &k);
        let sxy = blur(&ixy, w, h, &k);
        sxx.iter()
            .zip(&syy)
            .zip(&sxy)
            .map(|((&a, &c), &b)| {
                let half_tr = 0.5 * (a + c);
                let diff = 0.5 * (a - c);
                (half_tr - (diff * diff + b * b).sqrt()).max(0.0)
            })
            .collect()
    }
}

impl FeatureDetector for ShiTomasi {
    fn detect(&self, gray: &GrayImage, max_points: usize) -> Vec<Keypoint> {
        let (w, h) = (gray.width, gray.height);
        if max_points == 0 || w <= 2 * self.border || h <= 2 * self.border {
            return Vec::new();
        }
        let resp = self.response_map(gray);
        let max_resp = resp.iter().cloned().fold(0.0f32, f32::max);
        let thresh = (self.quality * max_resp).max(self.min_response);
        if max_resp < thresh {
            return Vec::new();
        }
        let r = self.nms_radius as isize;
        let mut out = Vec::new();
        for y in self.border..h - self.border {
            for x in self.border..w - self.border {
                let v = resp[y * w + x];
                if v < thresh {
                    continue;
                }
                let mut is_max = true;
                'nms: for dy in -r..=r {
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (xx, yy) = (x as isize + dx, y as isize + dy);
                        if xx < 0 || yy < 0 || xx as usize >= w || yy as usize >= h {
                            continue;
                        }
                        let n = resp[yy as usize * w + xx as usize];
                        // plateaus resolve to their first pixel in raster order
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if n > v || (earlier && n == v) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                let at = |xx: usize, yy: usize| resp[yy * w + xx];
                let ox = parabolic_offset(at(x - 1, y), v, at(x + 1, y));
                let oy = parabolic_offset(at(x, y - 1), v, at(x, y + 1));
                out.push(Keypoint {
                    x: x as f64 + ox,
                    y: y as f64 + oy,
                    response: v,
                });
            }
        }
        out.sort_by(|a, b| {
            b.response
                .total_cmp(&a.response)
                .then(a.y.total_cmp(&b.y))
                .then(a.x.total_cmp(&b.x))
        });
        out.truncate(max_points);
        out
    }
}

fn parabolic_offset(l: f32, c: f32, r: f32) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5) as f64
}

/// Detect corners with the default detector.
pub fn detect_features(frame: &Frame, max_points: usize) -> Vec<Keypoint> {
    ShiTomasi::default().detect(&frame.to_gray(), max_points)
}

#[derive(Clone, Debug)]
pub struct MatchConfig {
    /// Descriptor patch half-size; patches are `(2r+1)^2` samples.
    pub patch_radius: usize,
    /// Lowe ratio on correlation distances `1 - ncc`.
    pub ratio: f32,
    /// Minimum normalized cross-correlation of an accepted match.
    pub min_ncc: f32,
    /// Optional search radius in pixels.
    pub max_displacement: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            patch_radius: 5,
            ratio: 0.8,
            min_ncc: 0.7,
            max_displacement: Some(48.0),
        }
    }
}

/// Zero-mean, unit-norm intensity patch around a keypoint.
#[derive(Clone, Debug)]
pub struct Descriptor {
    pub x: f64,
    pub y: f64,
    pub values: Vec<f32>,
}

pub fn describe(gray: &GrayImage, points: &[Keypoint], patch_radius: usize) -> Vec<Descriptor> {
    let r = patch_radius as isize;
    points
        .iter()
        .filter_map(|kp| {
            let mut v = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    v.push(gray.sample(kp.x as f32 + dx as f32, kp.y as f32 + dy as f32));
                }
            }
            let mean = v.iter().sum::<f32>() / v.len() as f32;
            v.iter_mut().for_each(|s| *s -= mean);
            let norm = v.iter().map(|s| s * s).sum::<f32>().sqrt();
            if norm < 1e-6 {
                return None;
            }
            v.iter_mut().for_each(|s| *s /= norm);
            Some(Descriptor {
                x: kp.x,
                y: kp.y,
                values: v,
            })
        })
        .collect()
}

#[inline]
fn ncc(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-to-one matching by patch correlation with a ratio test. Sources come
/// from `a`, targets from `b`.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], cfg: &MatchConfig) -> CorrespondenceSet {
    if a.is_empty() || b.is_empty() {
        return CorrespondenceSet::default();
    }
    let grid = cfg.max_displacement.map(|r| Buckets::new(b, r.max(1.0)));
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    let mut scratch = Vec::new();
    for (ia, da) in a.iter().enumerate() {
        let mut best = (f32::NEG_INFINITY, usize::MAX);
        let mut second = f32::NEG_INFINITY;
        let mut consider = |ib: usize| {
            let db = &b[ib];
            if let Some(r) = cfg.max_displacement {
                let (dx, dy) = (db.x - da.x, db.y - da.y);
                if dx * dx + dy * dy > r * r {
                    return;
                }
            }
            let s = ncc(&da.values, &db.values);
            if s > best.0 {
                second = best.0;
                best = (s, ib);
            } else if s > second {
                second = s;
            }
        };
        match &grid {
            Some(g) => {
                g.near(da.x, da.y, &mut scratch);
                for &ib in &scratch {
                    consider(ib);
                }
            }
            None => (0..b.len()).for_each(&mut consider),
        }
        if best.1 == usize::MAX || best.0 < cfg.min_ncc {
            continue;
        }
        let d_best = 1.0 - best.0;
        if second.is_finite() {
            let d_second = 1.0 - second;
            if !(d_best < cfg.ratio * d_second) {
                continue;
            }
        }
        candidates.push((d_best, ia, best.1));
    }
    candidates.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_b = vec![false; b.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (_, ia, ib) in candidates {
        if !used_b[ib] {
            used_b[ib] = true;
            pairs.push((ia, ib));
        }
    }
    pairs.sort_unstable();
    CorrespondenceSet::new(
        pairs
            .into_iter()
            .map(|(ia, ib)| Correspondence::new((a[ia].x, a[ia].y), (b[ib].x, b[ib].y)))
            .collect(),
    )
}

/// Match detected points between two frames.
pub fn match_features(points_a: &[Keypoint], frame_a: &Frame, points_b: &[Keypoint], frame_b: &Frame) -> CorrespondenceSet {
    match_features_with(points_a, frame_a, points_b, frame_b, &MatchConfig::default())
}

pub fn match_features_with(
    points_a: &[Keypoint],
    frame_a: &Frame,
    points_b: &[Keypoint],
    frame_b: &Frame,
    cfg: &MatchConfig,
) -> CorrespondenceSet {
    let da = describe(&frame_a.to_gray(), points_a, cfg.patch_radius);
    let db = describe(&frame_b.to_gray(), points_b, cfg.patch_radius);
    match_descriptors(&da, &db, cfg)
}

/// Uniform grid over descriptor positions for radius queries.
struct Buckets {
    cell: f64,
    cols: usize,
    rows: usize,
    min_x: f64,
    min_y: f64,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(items: &[Descriptor], cell: f64) -> Self {
        let min_x = items.iter().map(|d| d.x).fold(f64::INFINITY, f64::min);
        let min_y = items.iter().map(|d| d.y).fold(f64::INFINITY, f64::min);
        let max_x = items.iter().map(|d| d.x).fold(f64::NEG_INFINITY, f64::max);
        let max_y = items.iter().map(|d| d.y).fold(f64::NEG_INFINITY, f64::max);
        let cols = ((max_x - min_x) / cell).floor() as usize + 1;
        let rows = ((max_y - min_y) / cell).floor() as usize + 1;
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, d) in items.iter().enumerate() {
            let cx = ((d.x - min_x) / cell).floor() as usize;
            let cy = ((d.y - min_y) / cell).floor() as usize;
            cells[cy * cols + cx].push(i);
        }
        Self {
            cell,
            cols,
            rows,
            min_x,
            min_y,
            cells,
        }
    }

    fn near(&self, x: f64, y: f64, out: &mut Vec<usize>) {
        out.clear();
        let cx = ((x - self.min_x) / self.cell).floor() as isize;
        let cy = ((y - self.min_y) / self.cell).floor() as isize;
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                if gx < 0 || gy < 0 || gx as usize >= self.cols || gy as usize >= self.rows {
                    continue;
                }
                out.extend_from_slice(&self.cells[gy as usize * self.cols + gx as usize]);
            }
        }
        out.sort_unstable();
    }
}
