//! Common valid region of a set of warp fields, and crop-resize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, CHANNELS};
use crate::warp::{from_normalized, to_normalized, WarpField};

/// Axis-aligned rectangle in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRegion {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl CropRegion {
    pub const FULL: CropRegion = CropRegion {
        left: -1.0,
        top: -1.0,
        right: 1.0,
        bottom: 1.0,
    };

    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        let r = Self { left, top, right, bottom };
        let inside = |v: f64| (-1.0 - 1e-9..=1.0 + 1e-9).contains(&v);
        if !(left < right && top < bottom) || ![left, top, right, bottom].into_iter().all(inside) {
            return Err(Error::invalid(format!("invalid crop region {r:?}")));
        }
        Ok(r)
    }

    /// Region spanning pixel centers `l..=r`, `t..=b` of a `w x h` grid.
    pub fn from_pixels(rect: PixelRect, h: usize, w: usize) -> Self {
        Self {
            left: to_normalized(rect.left as f64, w),
            top: to_normalized(rect.top as f64, h),
            right: to_normalized(rect.right as f64, w),
            bottom: to_normalized(rect.bottom as f64, h),
        }
    }

    /// Fraction of the normalized square covered.
    pub fn area_fraction(&self) -> f64 {
        (self.right - self.left) * (self.bottom - self.top) / 4.0
    }

    pub fn as_f32(&self) -> (f32, f32, f32, f32) {
        (self.left as f32, self.top as f32, self.right as f32, self.bottom as f32)
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.right - self.left + 1) * (self.bottom - self.top + 1)
    }

    /// Total order used to pick among equal-area rectangles.
    fn rank_key(&self) -> (std::cmp::Reverse<usize>, usize, usize, usize) {
        (std::cmp::Reverse(self.area()), self.top, self.left, self.bottom)
    }

    /// True when `a` is preferred over `b`: larger area, then smaller top,
    /// smaller left, smaller bottom.
    pub fn preferred(a: &PixelRect, b: &PixelRect) -> bool {
        a.rank_key() < b.rank_key()
    }
}

/// Largest all-true rectangle of a row-major mask, with the tie-break of
/// [`PixelRect::preferred`]. Runs in `O(h*w)`.
pub fn maximal_rectangle(mask: &[bool], h: usize, w: usize) -> Option<PixelRect> {
    assert_eq!(mask.len(), h * w);
    let mut heights = vec![0usize; w];
    let mut lo = vec![0usize; w];
    let mut hi = vec![0usize; w];
    let mut stack: Vec<usize> = Vec::with_capacity(w);
    let mut best: Option<PixelRect> = None;
    for b in 0..h {
        for c in 0..w {
            heights[c] = if mask[b * w + c] { heights[c] + 1 } else { 0 };
        }
        // lo[c]: leftmost column of the run of heights >= heights[c] ending at c
        stack.clear();
        for c in 0..w {
            while let Some(&t) = stack.last() {
                if heights[t] >= heights[c] {
                    stack.pop();
                } else {
                    break;
                }
            }
            lo[c] = stack.last().map_or(0, |&t| t + 1);
            stack.push(c);
        }
        stack.clear();
        for c in (0..w).rev() {
            while let Some(&t) = stack.last() {
                if heights[t] >= heights[c] {
                    stack.pop();
                } else {
                    break;
                }
            }
            hi[c] = stack.last().map_or(w - 1, |&t| t - 1);
            stack.push(c);
        }
        for c in 0..w {
            if heights[c] == 0 {
                continue;
            }
            let cand = PixelRect {
                left: lo[c],
                top: b + 1 - heights[c],
                right: hi[c],
                bottom: b,
            };
            if best.as_ref().is_none_or(|cur| PixelRect::preferred(&cand, cur)) {
                best = Some(cand);
            }
        }
    }
    best
}

/// Pixels whose warped coordinates stay inside `[-1, 1]` in every field.
pub fn common_valid_mask(fields: &[&WarpField]) -> Result<Vec<bool>> {
    let first = fields.first().ok_or_else(|| Error::invalid("no warp fields"))?;
    let dims = first.dims();
    let mut mask = vec![true; dims.0 * dims.1];
    for (i, f) in fields.iter().enumerate() {
        if f.dims() != dims {
            return Err(Error::dims(format!("{}x{}", dims.0, dims.1), format!("{}x{}", f.height(), f.width())).at_frame(i));
        }
        for (m, v) in mask.iter_mut().zip(f.valid_mask()) {
            *m &= v;
        }
    }
    Ok(mask)
}

/// Largest rectangle valid in all fields, as a normalized region.
pub fn compute_crop_region(fields: &[&WarpField]) -> Result<CropRegion> {
    let mask = common_valid_mask(fields)?;
    let (h, w) = fields[0].dims();
    let rect = maximal_rectangle(&mask, h, w).ok_or(Error::NoValidRegion)?;
    if rect.right == rect.left || rect.bottom == rect.top {
        return Err(Error::NoValidRegion);
    }
    Ok(CropRegion::from_pixels(rect, h, w))
}

/// Bilinear resample of `region` onto an `out_h x out_w` grid, stretching to
/// fill it.
pub fn crop_resize(frame: &Frame, region: &CropRegion, out_h: usize, out_w: usize) -> Result<Frame> {
    let (h, w) = frame.dims();
    let span_x = (region.right - region.left) * 0.5 * (w - 1) as f64;
    let span_y = (region.bottom - region.top) * 0.5 * (h - 1) as f64;
    if span_x < 1.0 || span_y < 1.0 {
        return Err(Error::invalid(format!("crop region {region:?} spans under 2 px")));
    }
    if out_h < 2 || out_w < 2 {
        return Err(Error::invalid("output must be at least 2x2"));
    }
    let x0 = from_normalized(region.left, w);
    let y0 = from_normalized(region.top, h);
    let mut data = Vec::with_capacity(out_h * out_w * CHANNELS);
    for y in 0..out_h {
        let py = y0 + span_y * y as f64 / (out_h - 1) as f64;
        for x in 0..out_w {
            let px = x0 + span_x * x as f64 / (out_w - 1) as f64;
            data.extend_from_slice(&frame.sample_bilinear(px as f32, py as f32));
        }
    }
    Ok(Frame::from_raw(out_h, out_w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::psnr;
    use crate::geometry::AffineTransform;
    use crate::warp::affine_to_warp_field;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search over every rectangle with a prefix-sum validity test.
    fn brute_force(mask: &[bool], h: usize, w: usize) -> Option<PixelRect> {
        let mut ps = vec![0usize; (h + 1) * (w + 1)];
        for y in 0..h {
            for x in 0..w {
                ps[(y + 1) * (w + 1) + x + 1] =
                    mask[y * w + x] as usize + ps[y * (w + 1) + x + 1] + ps[(y + 1) * (w + 1) + x] - ps[y * (w + 1) + x];
            }
        }
        let count = |t: usize, l: usize, b: usize, r: usize| {
            ps[(b + 1) * (w + 1) + r + 1] + ps[t * (w + 1) + l] - ps[t * (w + 1) + r + 1] - ps[(b + 1) * (w + 1) + l]
        };
        let mut best: Option<PixelRect> = None;
        for t in 0..h {
            for b in t..h {
                for l in 0..w {
                    for r in l..w {
                        let rect = PixelRect { left: l, top: t, right: r, bottom: b };
                        if count(t, l, b, r) == rect.area() && best.as_ref().is_none_or(|c| PixelRect::preferred(&rect, c)) {
                            best = Some(rect);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn identity_fields_give_full_region() {
        let id = WarpField::identity(20, 30).unwrap();
        let r = compute_crop_region(&[&id, &id]).unwrap();
        assert_eq!(r, CropRegion::FULL);
    }

    #[test]
    fn translated_field_excludes_strip() {
        let (h, w) = (32, 32);
        // +0.25 normalized in u is 3.875 px
        let t = affine_to_warp_field(&AffineTransform::translation(0.25 * 31.0 / 2.0, 0.0), h, w).unwrap();
        let id = WarpField::identity(h, w).unwrap();
        let fields = [&id, &t];
        let mask = common_valid_mask(&fields).unwrap();
        let rect = maximal_rectangle(&mask, h, w).unwrap();
        assert_eq!(Some(rect), brute_force(&mask, h, w));
        assert_eq!((rect.left, rect.right, rect.top, rect.bottom), (0, 27, 0, 31));
        let r = compute_crop_region(&fields).unwrap();
        assert!(r.right < 1.0 && r.left == -1.0);
    }

    #[test]
    fn opposite_translations_shrink_symmetrically() {
        let (h, w) = (32, 32);
        let d = 0.25 * 31.0 / 2.0;
        let a = affine_to_warp_field(&AffineTransform::translation(d, 0.0), h, w).unwrap();
        let b = affine_to_warp_field(&AffineTransform::translation(-d, 0.0), h, w).unwrap();
        let mask = common_valid_mask(&[&a, &b]).unwrap();
        assert_eq!(maximal_rectangle(&mask, h, w), brute_force(&mask, h, w));
        let r = compute_crop_region(&[&a, &b]).unwrap();
        assert!((r.left + r.right).abs() < 1e-9);
        assert!(r.left > -1.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let far = affine_to_warp_field(&AffineTransform::translation(100.0, 0.0), 8, 8).unwrap();
        assert!(matches!(compute_crop_region(&[&far]), Err(Error::NoValidRegion)));
    }

    #[test]
    fn tie_break_prefers_top_then_left() {
        // two disjoint 2x3 blocks of equal area
        let (h, w) = (6, 8);
        let mut mask = vec![false; h * w];
        for (t, l) in [(3, 0), (0, 5)] {
            for y in t..t + 2 {
                for x in l..l + 3 {
                    mask[y * w + x] = true;
                }
            }
        }
        let r = maximal_rectangle(&mask, h, w).unwrap();
        assert_eq!((r.top, r.left), (0, 5));
        assert_eq!(Some(r), brute_force(&mask, h, w));
    }

    #[test]
    fn crop_full_region_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Frame::from_fn(17, 23, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let out = crop_resize(&f, &CropRegion::FULL, 17, 23).unwrap();
        assert!(out.data().iter().zip(f.data()).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn centered_half_region_magnifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Frame::from_fn(33, 33, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let region = CropRegion::new(-0.5, -0.5, 0.5, 0.5).unwrap();
        let out = crop_resize(&f, &region, 33, 33).unwrap();
        // output pixel (x, y) reads source (8 + x/2, 8 + y/2)
        for y in 0..33 {
            for x in 0..33 {
                let (sx, sy) = (8.0 + x as f32 * 0.5, 8.0 + y as f32 * 0.5);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
                for c in 0..3 {
                    let g = |xx: usize, yy: usize| f.get(xx.min(32), yy.min(32), c);
                    let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
                    let bot = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
                    let want = top * (1.0 - fy) + bot * fy;
                    assert!((out.get(x, y, c) - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn upscale_downscale_round_trip() {
        let f = Frame::from_fn(40, 56, |x, y| {
            let v = 0.5 + 0.4 * ((x as f32 * 0.3).sin() * (y as f32 * 0.2).cos());
            [v, 1.0 - v, 0.5]
        })
        .unwrap();
        let up = crop_resize(&f, &CropRegion::FULL, 80, 112).unwrap();
        let down = crop_resize(&up, &CropRegion::FULL, 40, 56).unwrap();
        assert!(psnr(&down, &f).unwrap() >= 35.0);
    }

    #[test]
    fn degenerate_region_rejected() {
        let f = Frame::filled(10, 10, [0.5; 3]).unwrap();
        let thin = CropRegion::new(0.0, -1.0, 0.1, 1.0).unwrap();
        assert!(crop_resize(&f, &thin, 10, 10).is_err());
    }

    fn random_fields(rng: &mut ChaCha8Rng, h: usize, w: usize, count: usize) -> Vec<WarpField> {
        (0..count)
            .map(|_| {
                let a = AffineTransform::similarity_about(
                    ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.9..1.1),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                );
                affine_to_warp_field(&a, h, w).unwrap()
            })
            .collect()
    }

    #[test]
    fn random_affine_fields_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let (h, w) = (rng.random_range(4..=48), rng.random_range(4..=48));
            let count = rng.random_range(1..=10);
            let fields = random_fields(&mut rng, h, w, count);
            let refs: Vec<&WarpField> = fields.iter().collect();
            let mask = common_valid_mask(&refs).unwrap();
            assert_eq!(maximal_rectangle(&mask, h, w), brute_force(&mask, h, w));
        }
    }

    proptest! {
        #[test]
        fn random_masks_match_oracle(h in 1usize..14, w in 1usize..14, seed in 0u64..u64::MAX, density in 0.3f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
            prop_assert_eq!(maximal_rectangle(&mask, h, w), brute_force(&mask, h, w));
        }
    }
}
