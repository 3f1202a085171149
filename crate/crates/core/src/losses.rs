//! Training objectives as plain evaluable functions. All squared-error terms
//! are mean-reduced over elements; accumulation is in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::AffineTransform;
use crate::tensor::Tensor;
use crate::warp::{apply_warp, to_normalized, WarpField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 8.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::Config(format!("loss weights must be nonnegative, got {alpha}, {beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

/// Pluggable feature network for the perceptual content term.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, frame: &Frame) -> Result<Vec<f32>>;
}

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    Ok(())
}

fn mse_slices(a: &[f32], b: &[f32]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}

/// Pixel MSE, plus feature MSE when a hook is given.
pub fn content_loss(s: &Frame, p: &Frame, hook: Option<&dyn FeatureExtractor>) -> Result<f64> {
    check_dims(s, p)?;
    let mut loss = mse_slices(s.data(), p.data());
    if let Some(h) = hook {
        let fs = h.extract(s)?;
        let fp = h.extract(p)?;
        if fs.len() != fp.len() {
            return Err(Error::dims(format!("{} features", fs.len()), format!("{} features", fp.len())));
        }
        loss += mse_slices(&fs, &fp);
    }
    Ok(loss)
}

/// Content loss summed over the two predicted frames `t` and `t+1`.
pub fn content_loss_pair(s: [&Frame; 2], p: [&Frame; 2], hook: Option<&dyn FeatureExtractor>) -> Result<f64> {
    Ok(content_loss(s[0], p[0], hook)? + content_loss(s[1], p[1], hook)?)
}

/// Mean L1 distance, in normalized units, between field-mapped source points
/// and their targets. Points are pixel coordinates.
pub fn points_loss(field: &WarpField, p: &[(f64, f64)], p_prime: &[(f64, f64)]) -> Result<f64> {
    if p.len() != p_prime.len() {
        return Err(Error::dims(format!("{} targets", p.len()), format!("{} targets", p_prime.len())));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let (h, w) = field.dims();
    let mut total = 0.0;
    for (&(x, y), &(tx, ty)) in p.iter().zip(p_prime) {
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return Err(Error::invalid(format!("point ({x}, {y}) outside {w}x{h} field")));
        }
        let (u, v) = field.sample(x as f32, y as f32);
        // targets are rounded to the field's storage precision
        let (nx, ny) = (to_normalized(tx, w) as f32, to_normalized(ty, h) as f32);
        total += (u as f64 - nx as f64).abs() + (v as f64 - ny as f64).abs();
    }
    Ok(total / p.len() as f64)
}

/// Lattice of 2-D vertices, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMesh {
    rows: usize,
    cols: usize,
    vertices: Vec<(f64, f64)>,
}

pub const DEFAULT_MESH_SIZE: usize = 17;

impl GridMesh {
    pub fn new(rows: usize, cols: usize, vertices: Vec<(f64, f64)>) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::invalid(format!("mesh must be at least 3x3, got {rows}x{cols}")));
        }
        if vertices.len() != rows * cols {
            return Err(Error::dims(format!("{} vertices", rows * cols), format!("{} vertices", vertices.len())));
        }
        Ok(Self { rows, cols, vertices })
    }

    /// Axis-aligned lattice with the given spacing, origin at `(0, 0)`.
    pub fn regular(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        let v = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c as f64 * spacing, r as f64 * spacing)))
            .collect();
        Self::new(rows, cols, v)
    }

    /// Field values sampled on a `rows x cols` lattice spanning the field.
    pub fn from_warp_field(field: &WarpField, rows: usize, cols: usize) -> Result<Self> {
        let (h, w) = field.dims();
        let mut v = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let py = (h - 1) as f32 * r as f32 / (rows.max(2) - 1) as f32;
            for c in 0..cols {
                let px = (w - 1) as f32 * c as f32 / (cols.max(2) - 1) as f32;
                let (u, vv) = field.sample(px, py);
                v.push((u as f64, vv as f64));
            }
        }
        Self::new(rows, cols, v)
    }

    pub fn from_warp_field_default(field: &WarpField) -> Result<Self> {
        Self::from_warp_field(field, DEFAULT_MESH_SIZE, DEFAULT_MESH_SIZE)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> (f64, f64) {
        self.vertices[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, p: (f64, f64)) {
        self.vertices[r * self.cols + c] = p;
    }

    pub fn map(&self, a: &AffineTransform) -> GridMesh {
        GridMesh {
            rows: self.rows,
            cols: self.cols,
            vertices: self.vertices.iter().map(|&(x, y)| a.apply(x, y)).collect(),
        }
    }

    fn interior(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.rows - 1).flat_map(move |r| (1..self.cols - 1).map(move |c| (r, c)))
    }
}

#[inline]
fn sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 - b.0, a.1 - b.1)
}

/// Second-difference penalty: for each interior vertex, the L1 norm of
/// `(v_a - v) - (v - v_b)` over opposite neighbors, averaged over the
/// horizontal and vertical pairs, then over vertices.
pub fn relative_grid_loss(mesh: &GridMesh) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (r, c) in mesh.interior() {
        let v = mesh.get(r, c);
        let l1 = |a: (f64, f64), b: (f64, f64)| {
            let d = sub(sub(a, v), sub(v, b));
            d.0.abs() + d.1.abs()
        };
        let horiz = l1(mesh.get(r, c + 1), mesh.get(r, c - 1));
        let vert = l1(mesh.get(r + 1, c), mesh.get(r - 1, c));
        total += 0.5 * (horiz + vert);
        n += 1;
    }
    total / n as f64
}

/// Orthogonality penalty `|(v_right - v) . (v_down - v)|` averaged over
/// interior vertices.
pub fn adjacent_grid_loss(mesh: &GridMesh) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (r, c) in mesh.interior() {
        let v = mesh.get(r, c);
        let a = sub(mesh.get(r, c + 1), v);
        let b = sub(mesh.get(r + 1, c), v);
        total += (a.0 * b.0 + a.1 * b.1).abs();
        n += 1;
    }
    total / n as f64
}

/// MSE between the current prediction and the previous one warped by `phi`.
pub fn temporal_loss(p_curr: &Frame, p_prev: &Frame, phi: &WarpField) -> Result<f64> {
    check_dims(p_curr, p_prev)?;
    let warped = apply_warp(p_prev, phi)?;
    Ok(mse_slices(p_curr.data(), warped.data()))
}

/// Individual generator terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub content: f64,
    pub points: f64,
    pub relative: f64,
    pub adjacent: f64,
    pub temporal: f64,
}

impl LossParts {
    pub fn shape(&self) -> f64 {
        self.points + self.relative + self.adjacent
    }
}

pub fn generator_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    parts.content + w.alpha * parts.shape() + w.beta * parts.temporal
}

/// Constant target maps: all `-1` for predictions, all `+1` for real frames.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorTargets {
    pub predicted: Tensor,
    pub stable: Tensor,
}

impl DiscriminatorTargets {
    pub fn for_shape(shape: &[usize]) -> Self {
        Self {
            predicted: Tensor::full(shape, -1.0),
            stable: Tensor::full(shape, 1.0),
        }
    }
}

pub fn discrimination_loss(d_of_p: &Tensor, d_of_s: &Tensor) -> Result<f64> {
    if d_of_p.shape() != d_of_s.shape() {
        return Err(Error::dims(format!("{:?}", d_of_p.shape()), format!("{:?}", d_of_s.shape())));
    }
    let t = DiscriminatorTargets::for_shape(d_of_p.shape());
    Ok(mse_slices(d_of_p.data(), t.predicted.data()) + mse_slices(d_of_s.data(), t.stable.data()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub content: f64,
    pub points: f64,
    pub relative: f64,
    pub adjacent: f64,
    pub temporal: f64,
    pub generator_total: f64,
    pub discriminator: Option<f64>,
}

impl LossReport {
    pub fn new(parts: &LossParts, w: &LossWeights, discriminator: Option<f64>) -> Self {
        Self {
            content: parts.content,
            points: parts.points,
            relative: parts.relative,
            adjacent: parts.adjacent,
            temporal: parts.temporal,
            generator_total: generator_loss(parts, w),
            discriminator,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::affine_to_warp_field;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn content_fixed_points_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Frame::from_fn(6, 5, |_, _| [rng.random_range(0.0..0.9); 3]).unwrap();
        assert_eq!(content_loss(&s, &s, None).unwrap(), 0.0);
        let p = Frame::from_fn(6, 5, |x, y| s.pixel(x, y).map(|v| v + 0.1)).unwrap();
        assert!((content_loss(&s, &p, None).unwrap() - 0.01).abs() < 1e-6);
    }

    #[test]
    fn content_matches_loop_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_frame(&mut rng, 7, 9);
        let b = rand_frame(&mut rng, 7, 9);
        let mut acc = 0.0f64;
        for y in 0..7 {
            for x in 0..9 {
                for c in 0..3 {
                    acc += (a.get(x, y, c) as f64 - b.get(x, y, c) as f64).powi(2);
                }
            }
        }
        let oracle = acc / (7.0 * 9.0 * 3.0);
        assert!((content_loss(&a, &b, None).unwrap() - oracle).abs() < 1e-9);
        assert_eq!(content_loss(&a, &b, None).unwrap(), content_loss(&b, &a, None).unwrap());
        assert!(content_loss(&a, &rand_frame(&mut rng, 7, 8), None).is_err());
    }

    struct MeanColor;
    impl FeatureExtractor for MeanColor {
        fn extract(&self, f: &Frame) -> Result<Vec<f32>> {
            let n = (f.height() * f.width()) as f32;
            let mut m = vec![0.0; 3];
            for px in f.data().chunks_exact(3) {
                for c in 0..3 {
                    m[c] += px[c] / n;
                }
            }
            Ok(m)
        }
    }

    #[test]
    fn hook_adds_feature_term() {
        let a = Frame::filled(4, 4, [0.2; 3]).unwrap();
        let b = Frame::filled(4, 4, [0.5; 3]).unwrap();
        let plain = content_loss(&a, &b, None).unwrap();
        let hooked = content_loss(&a, &b, Some(&MeanColor)).unwrap();
        assert!((hooked - 2.0 * plain).abs() < 1e-6);
        let pair = content_loss_pair([&a, &a], [&b, &a], None).unwrap();
        assert!((pair - plain).abs() < 1e-12);
    }

    #[test]
    fn points_fixed_points() {
        let id = WarpField::identity(9, 11).unwrap();
        let p = vec![(1.0, 2.0), (4.5, 3.25), (10.0, 8.0)];
        assert!(points_loss(&id, &p, &p).unwrap() < 1e-6);
        let t = affine_to_warp_field(&AffineTransform::translation(1.5, -0.5), 9, 11).unwrap();
        let q: Vec<_> = p.iter().map(|&(x, y)| (x + 1.5, y - 0.5)).collect();
        assert!(points_loss(&t, &p, &q).unwrap() < 1e-6);
        assert_eq!(points_loss(&id, &[], &[]).unwrap(), 0.0);
    }

    #[test]
    fn points_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (8, 10);
        let data: Vec<f32> = (0..h * w * 2).map(|_| rng.random_range(-1.2..1.2)).collect();
        let field = WarpField::new(h, w, data).unwrap();
        let p: Vec<(f64, f64)> = (0..12).map(|_| (rng.random_range(0.0..9.0), rng.random_range(0.0..7.0))).collect();
        let q: Vec<(f64, f64)> = (0..12).map(|_| (rng.random_range(0.0..9.0), rng.random_range(0.0..7.0))).collect();
        let mut acc = 0.0;
        for (a, b) in p.iter().zip(&q) {
            // hand bilinear
            let (x0, y0) = (a.0.floor() as usize, a.1.floor() as usize);
            let (fx, fy) = ((a.0 - x0 as f64) as f32, (a.1 - y0 as f64) as f32);
            let g = |x: usize, y: usize| field.get(x, y);
            let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
            let u = lerp(lerp(g(x0, y0).0, g(x0 + 1, y0).0, fx), lerp(g(x0, y0 + 1).0, g(x0 + 1, y0 + 1).0, fx), fy);
            let v = lerp(lerp(g(x0, y0).1, g(x0 + 1, y0).1, fx), lerp(g(x0, y0 + 1).1, g(x0 + 1, y0 + 1).1, fx), fy);
            acc += (u as f64 - (2.0 * b.0 / 9.0 - 1.0)).abs() + (v as f64 - (2.0 * b.1 / 7.0 - 1.0)).abs();
        }
        let got = points_loss(&field, &p, &q).unwrap();
        assert!((got - acc / 12.0).abs() < 1e-5, "{got} vs {}", acc / 12.0);
    }

    #[test]
    fn relative_single_displaced_vertex() {
        let mut m = GridMesh::regular(5, 5, 1.0).unwrap();
        assert_eq!(relative_grid_loss(&m), 0.0);
        let d = 0.3;
        m.set(2, 2, (2.0 + d, 2.0));
        // center: horizontal term 2d, vertical term 2d -> 2d
        // (2,1),(2,3): horizontal term d, vertical 0 -> d/2 each
        // (1,2),(3,2): horizontal 0, vertical term d (x offset) -> d/2 each
        let oracle = (2.0 * d + 4.0 * (d / 2.0)) / 9.0;
        assert!((relative_grid_loss(&m) - oracle).abs() < 1e-12);
    }

    #[test]
    fn adjacent_shear_matches_oracle() {
        let base = GridMesh::regular(4, 5, 2.0).unwrap();
        assert_eq!(adjacent_grid_loss(&base), 0.0);
        let shear = AffineTransform::new([1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let m = base.map(&shear);
        // right edge (2,0), down edge (2,2): |dot| = 4 = |cos45| * 2 * 2*sqrt2
        let per = (45f64.to_radians().cos() * 2.0 * (2.0 * 2f64.sqrt())).abs();
        assert!((adjacent_grid_loss(&m) - per).abs() < 1e-9);
        assert!(adjacent_grid_loss(&base.map(&AffineTransform::scale(3.0, 3.0))) < 1e-12);
    }

    #[test]
    fn temporal_fixed_points_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prev = rand_frame(&mut rng, 8, 8);
        let phi = affine_to_warp_field(&AffineTransform::translation(1.0, 0.0), 8, 8).unwrap();
        let curr = apply_warp(&prev, &phi).unwrap();
        assert_eq!(temporal_loss(&curr, &prev, &phi).unwrap(), 0.0);
        let id = WarpField::identity(8, 8).unwrap();
        assert!(temporal_loss(&prev, &prev, &id).unwrap() < 1e-12);
        let other = rand_frame(&mut rng, 8, 8);
        let warped = apply_warp(&prev, &phi).unwrap();
        let mut acc = 0.0;
        for (a, b) in other.data().iter().zip(warped.data()) {
            acc += (*a as f64 - *b as f64).powi(2);
        }
        assert!((temporal_loss(&other, &prev, &phi).unwrap() - acc / (64.0 * 3.0)).abs() < 1e-9);
    }

    #[test]
    fn generator_weighting() {
        assert_eq!(generator_loss(&LossParts::default(), &LossWeights::default()), 0.0);
        let p = LossParts {
            content: 1.0,
            points: 1.0,
            relative: 0.0,
            adjacent: 0.0,
            temporal: 1.0,
        };
        assert_eq!(generator_loss(&p, &LossWeights::default()), 10.0);
        let r = LossReport::new(&p, &LossWeights::default(), None);
        assert_eq!(r.generator_total, 10.0);
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn discrimination_fixed_points() {
        let p = Tensor::full(&[3, 4], -1.0);
        let s = Tensor::full(&[3, 4], 1.0);
        assert_eq!(discrimination_loss(&p, &s).unwrap(), 0.0);
        let z = Tensor::zeros(&[3, 4]);
        assert_eq!(discrimination_loss(&z, &z).unwrap(), 2.0);
        assert!(discrimination_loss(&z, &Tensor::zeros(&[4, 3])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Tensor::from_fn(&[5, 5], |_| rng.random_range(-2.0..2.0));
        let b = Tensor::from_fn(&[5, 5], |_| rng.random_range(-2.0..2.0));
        let oracle: f64 = a.data().iter().map(|&v| (v as f64 + 1.0).powi(2)).sum::<f64>() / 25.0
            + b.data().iter().map(|&v| (v as f64 - 1.0).powi(2)).sum::<f64>() / 25.0;
        assert!((discrimination_loss(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn grid_losses_vanish_under_affine_and_rotation(
            a in prop::array::uniform6(-2.0f64..2.0), theta in -3.2f64..3.2, s in 0.1f64..5.0,
        ) {
            let lattice = GridMesh::regular(6, 7, 1.5).unwrap();
            let aff = AffineTransform { coeffs: a };
            prop_assert!(relative_grid_loss(&lattice.map(&aff)) < 1e-9);
            let rot = AffineTransform::rotation(theta).compose(&AffineTransform::scale(s, s));
            prop_assert!(adjacent_grid_loss(&lattice.map(&rot)) < 1e-9);
        }

        #[test]
        fn relative_translation_invariant(seed in 0u64..500, tx in -50.0f64..50.0, ty in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = (0..25).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
            let m = GridMesh::new(5, 5, v).unwrap();
            let moved = m.map(&AffineTransform::translation(tx, ty));
            prop_assert!((relative_grid_loss(&m) - relative_grid_loss(&moved)).abs() < 1e-9);
            prop_assert!(relative_grid_loss(&m) >= 0.0 && adjacent_grid_loss(&m) >= 0.0);
        }

        #[test]
        fn generator_linear_in_each_part(c in 0.0f64..5.0, k in 0.0f64..4.0, idx in 0usize..5) {
            let base = LossParts { content: c, points: 0.3, relative: 0.2, adjacent: 0.1, temporal: 0.4 };
            let w = LossWeights::default();
            let mut scaled = base;
            let weight = match idx {
                0 => { scaled.content *= k; 1.0 }
                1 => { scaled.points *= k; w.alpha }
                2 => { scaled.relative *= k; w.alpha }
                3 => { scaled.adjacent *= k; w.alpha }
                _ => { scaled.temporal *= k; w.beta }
            };
            let comp = [base.content, base.points, base.relative, base.adjacent, base.temporal][idx];
            let expect = generator_loss(&base, &w) + weight * comp * (k - 1.0);
            prop_assert!((generator_loss(&scaled, &w) - expect).abs() < 1e-9);
        }
    }
}
