//! Forward-only layer primitives on `[C, H, W]` feature maps and `[N, E]`
//! token matrices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};
use crate::warp::{in_range, WarpField};

/// Upper bound on im2col buffer elements per tile.
const IM2COL_TILE: usize = 1 << 22;

pub const NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, padding: usize, stride: usize) -> Self {
        Self { kernel, padding, stride }
    }

    pub fn out_size(&self, n: usize) -> Result<usize> {
        let padded = n + 2 * self.padding;
        if self.stride == 0 || padded < self.kernel {
            return Err(Error::invalid(format!("conv k={} p={} s={} cannot cover extent {n}", self.kernel, self.padding, self.stride)));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn transposed_out_size(&self, n: usize, output_padding: usize) -> Result<usize> {
        let full = (n - 1) * self.stride + self.kernel + output_padding;
        full.checked_sub(2 * self.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::invalid(format!("transposed conv k={} p={} cannot produce output from extent {n}", self.kernel, self.padding)))
    }
}

/// 2-D convolution. `weight` is `[C_out, C_in, k, k]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: ConvGeom) -> Result<Tensor> {
    let (cin, h, w) = x.dims3()?;
    let cout = weight.shape()[0];
    weight.expect_shape(&[cout, cin, g.kernel, g.kernel], "conv weight")?;
    if let Some(b) = bias {
        b.expect_shape(&[cout], "conv bias")?;
    }
    let (oh, ow) = (g.out_size(h)?, g.out_size(w)?);
    let kk = cin * g.kernel * g.kernel;
    let rows_per_tile = (IM2COL_TILE / (kk * ow).max(1)).clamp(1, oh);
    let tiles: Vec<(usize, usize)> = (0..oh).step_by(rows_per_tile).map(|r0| (r0, (r0 + rows_per_tile).min(oh))).collect();
    let xd = x.data();
    let parts: Vec<Vec<f32>> = tiles
        .par_iter()
        .map(|&(r0, r1)| {
            let n = (r1 - r0) * ow;
            let mut cols = vec![0.0f32; kk * n];
            for c in 0..cin {
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let row = &mut cols[((c * g.kernel + ky) * g.kernel + kx) * n..][..n];
                        for (t, oy) in (r0..r1).enumerate() {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &xd[(c * h + iy as usize) * w..][..w];
                            let dst = &mut row[t * ow..][..ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            let mut out = vec![0.0f32; cout * n];
            gemm(cout, kk, n, weight.data(), false, &cols, false, &mut out, false);
            out
        })
        .collect();
    let mut out = vec![0.0f32; cout * oh * ow];
    for (&(r0, r1), part) in tiles.iter().zip(&parts) {
        let n = (r1 - r0) * ow;
        for co in 0..cout {
            out[co * oh * ow + r0 * ow..][..n].copy_from_slice(&part[co * n..][..n]);
        }
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), oh * ow);
    }
    Tensor::new(vec![cout, oh, ow], out)
}

/// Transposed convolution. `weight` is `[C_in, C_out, k, k]`.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: ConvGeom, output_padding: usize) -> Result<Tensor> {
    let (cin, h, w) = x.dims3()?;
    let cout = weight.shape().get(1).copied().unwrap_or(0);
    weight.expect_shape(&[cin, cout, g.kernel, g.kernel], "deconv weight")?;
    if let Some(b) = bias {
        b.expect_shape(&[cout], "deconv bias")?;
    }
    let (oh, ow) = (g.transposed_out_size(h, output_padding)?, g.transposed_out_size(w, output_padding)?);
    let kk = cout * g.kernel * g.kernel;
    let n = h * w;
    let mut cols = vec![0.0f32; kk * n];
    gemm(kk, cin, n, weight.data(), true, x.data(), false, &mut cols, false);
    let mut out = vec![0.0f32; cout * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(co, plane)| {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = &cols[((co * g.kernel + ky) * g.kernel + kx) * n..][..n];
                for iy in 0..h {
                    let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    let dst = &mut plane[oy as usize * ow..][..ow];
                    for ix in 0..w {
                        let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                        if ox >= 0 && ox < ow as isize {
                            dst[ox as usize] += row[iy * w + ix];
                        }
                    }
                }
            }
        }
    });
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), oh * ow);
    }
    Tensor::new(vec![cout, oh, ow], out)
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Inference-mode batch norm from running statistics.
pub fn batch_norm(x: &mut Tensor, gamma: &Tensor, beta: &Tensor, mean: &Tensor, var: &Tensor) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    for (t, name) in [(gamma, "bn gamma"), (beta, "bn beta"), (mean, "bn mean"), (var, "bn var")] {
        t.expect_shape(&[c], name)?;
    }
    for (ch, plane) in x.data_mut().chunks_exact_mut(h * w).enumerate() {
        let scale = gamma.data()[ch] / (var.data()[ch] + NORM_EPS).sqrt();
        let shift = beta.data()[ch] - mean.data()[ch] * scale;
        plane.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(())
}

/// Per-row layer norm over the last dimension of an `[N, E]` matrix.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (n, e) = x.dims2()?;
    gamma.expect_shape(&[e], "ln gamma")?;
    beta.expect_shape(&[e], "ln beta")?;
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(e) {
        let mean = row.iter().sum::<f32>() / e as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / e as f32;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    Tensor::new(vec![n, e], out)
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Tanh form of GELU.
pub fn gelu(v: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh())
}

/// `x W^T + b` for `x: [N, in]`, `weight: [out, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, din) = x.dims2()?;
    let (dout, win) = weight.dims2()?;
    if din != win {
        return Err(Error::dims(format!("linear input dim {win}"), format!("{din}")));
    }
    let mut out = vec![0.0f32; n * dout];
    gemm(n, din, dout, x.data(), false, weight.data(), true, &mut out, false);
    if let Some(b) = bias {
        b.expect_shape(&[dout], "linear bias")?;
        for row in out.chunks_exact_mut(dout) {
            row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
        }
    }
    Tensor::new(vec![n, dout], out)
}

/// Non-overlapping `s x s` average pooling.
pub fn avg_pool(x: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::invalid(format!("pool stride {s} does not divide {h}x{w}")));
    }
    let (oh, ow) = (h / s, w / s);
    let inv = 1.0 / (s * s) as f32;
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let src = &x.data()[(ch * h + y) * w..][..w];
            let dst = &mut out[(ch * oh + y / s) * ow..][..ow];
            for (xx, v) in src.iter().enumerate() {
                dst[xx / s] += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![c, oh, ow], out)
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if s == 0 {
        return Err(Error::invalid("upsample factor must be >= 1"));
    }
    let (oh, ow) = (h * s, w * s);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let src = &x.data()[(ch * h + y / s) * w..][..w];
            out.extend((0..ow).map(|xx| src[xx / s]));
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, h, w) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if (h, w) != (hb, wb) {
        return Err(Error::dims(format!("{h}x{w} skip"), format!("{hb}x{wb}")));
    }
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, h, w], data)
}

/// `[C, H, W]` map to `[H*W, C]` tokens.
pub fn map_to_tokens(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    Tensor::new(vec![h * w, c], x.transpose2_from(c, h * w))
}

/// `[H*W, C]` tokens to a `[C, H, W]` map.
pub fn tokens_to_map(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c) = t.dims2()?;
    if n != h * w {
        return Err(Error::dims(format!("{} tokens", h * w), format!("{n}")));
    }
    Tensor::new(vec![c, h, w], t.transpose2_from(n, c))
}

/// Bilinear resampling of every channel at the field's coordinates; points
/// outside `[-1, 1]` read zero.
pub fn grid_sample(x: &Tensor, field: &WarpField) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if field.dims() != (h, w) {
        return Err(Error::dims(format!("{h}x{w} field"), format!("{}x{}", field.height(), field.width())));
    }
    let taps: Vec<Option<(usize, usize, usize, usize, f32, f32)>> = field
        .data()
        .chunks_exact(2)
        .map(|uv| {
            if !(in_range(uv[0]) && in_range(uv[1])) {
                return None;
            }
            let px = ((uv[0] + 1.0) * 0.5 * (w - 1) as f32).clamp(0.0, (w - 1) as f32);
            let py = ((uv[1] + 1.0) * 0.5 * (h - 1) as f32).clamp(0.0, (h - 1) as f32);
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            Some((x0, y0, (x0 + 1).min(w - 1), (y0 + 1).min(h - 1), px - x0 as f32, py - y0 as f32))
        })
        .collect();
    let mut out = vec![0.0f32; c * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(ch, plane)| {
        let src = &x.data()[ch * h * w..][..h * w];
        for (o, tap) in plane.iter_mut().zip(&taps) {
            if let Some((x0, y0, x1, y1, fx, fy)) = *tap {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                *o = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    Tensor::new(vec![c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn conv_oracle(x: &Tensor, wt: &Tensor, b: &Tensor, g: ConvGeom) -> Tensor {
        let (cin, h, w) = x.dims3().unwrap();
        let cout = wt.shape()[0];
        let (oh, ow) = (g.out_size(h).unwrap(), g.out_size(w).unwrap());
        let k = g.kernel;
        Tensor::from_fn(&[cout, oh, ow], |i| {
            let (co, oy, ox) = (i / (oh * ow), (i / ow) % oh, i % ow);
            let mut s = b.data()[co] as f64;
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            s += wt.data()[((co * cin + ci) * k + ky) * k + kx] as f64 * x.data()[(ci * h + iy as usize) * w + ix as usize] as f64;
                        }
                    }
                }
            }
            s as f32
        })
    }

    /// Scatter form: each input pixel spreads its kernel onto the output.
    fn deconv_oracle(x: &Tensor, wt: &Tensor, b: &Tensor, g: ConvGeom, op: usize) -> Tensor {
        let (cin, h, w) = x.dims3().unwrap();
        let cout = wt.shape()[1];
        let (oh, ow) = (g.transposed_out_size(h, op).unwrap(), g.transposed_out_size(w, op).unwrap());
        let k = g.kernel;
        let mut out = vec![0.0f64; cout * oh * ow];
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..w {
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                                let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    out[(co * oh + oy as usize) * ow + ox as usize] +=
                                        wt.data()[((ci * cout + co) * k + ky) * k + kx] as f64 * x.data()[(ci * h + iy) * w + ix] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_fn(&[cout, oh, ow], |i| (out[i] + b.data()[i / (oh * ow)] as f64) as f32)
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (cin, cout, h, w, g) in [
            (3, 4, 9, 7, ConvGeom::new(3, 1, 1)),
            (2, 5, 16, 16, ConvGeom::new(3, 1, 2)),
            (4, 2, 8, 8, ConvGeom::new(5, 2, 1)),
            (3, 3, 2, 2, ConvGeom::new(2, 0, 1)),
        ] {
            let x = rand_tensor(&mut rng, &[cin, h, w]);
            let wt = rand_tensor(&mut rng, &[cout, cin, g.kernel, g.kernel]);
            let b = rand_tensor(&mut rng, &[cout]);
            let got = conv2d(&x, &wt, Some(&b), g).unwrap();
            let want = conv_oracle(&x, &wt, &b, g);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-4, "{}", got.max_abs_diff(&want));
        }
    }

    #[test]
    fn conv_tiling_matches_single_tile() {
        // 64 input channels at 5x5 and 64 columns force several tiles
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[64, 130, 64]);
        let wt = rand_tensor(&mut rng, &[2, 64, 5, 5]);
        let b = Tensor::zeros(&[2]);
        let g = ConvGeom::new(5, 2, 1);
        assert!(64 * 25 * 64 * 130 > IM2COL_TILE);
        let got = conv2d(&x, &wt, Some(&b), g).unwrap();
        assert!(got.max_abs_diff(&conv_oracle(&x, &wt, &b, g)) < 1e-3);
    }

    #[test]
    fn deconv_matches_scatter_oracle_and_doubles_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeom::new(3, 1, 2);
        for (cin, cout, h, w) in [(3, 2, 2, 2), (4, 3, 5, 7)] {
            let x = rand_tensor(&mut rng, &[cin, h, w]);
            let wt = rand_tensor(&mut rng, &[cin, cout, 3, 3]);
            let b = rand_tensor(&mut rng, &[cout]);
            let got = conv_transpose2d(&x, &wt, Some(&b), g, 1).unwrap();
            assert_eq!(got.shape(), &[cout, 2 * h, 2 * w]);
            assert!(got.max_abs_diff(&deconv_oracle(&x, &wt, &b, g, 1)) < 1e-4);
        }
    }

    #[test]
    fn pool_and_upsample_shapes_and_values() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f32);
        let p = avg_pool(&x, 2).unwrap();
        assert_eq!(p.data(), &[2.5, 4.5, 10.5, 12.5]);
        let u = upsample_nearest(&p, 2).unwrap();
        assert_eq!(u.shape(), &[1, 4, 4]);
        assert_eq!(u.data()[5], 2.5);
        assert_eq!(u.data()[15], 12.5);
        assert!(avg_pool(&x, 3).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[5, 16]);
        let y = layer_norm(&x, &Tensor::full(&[16], 1.0), &Tensor::zeros(&[16])).unwrap();
        for r in 0..5 {
            let row = y.row(r);
            let mean: f32 = row.iter().sum::<f32>() / 16.0;
            let var: f32 = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 16.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn token_layout_round_trip() {
        let x = Tensor::from_fn(&[3, 2, 4], |i| i as f32);
        let t = map_to_tokens(&x).unwrap();
        assert_eq!(t.shape(), &[8, 3]);
        assert_eq!(t.row(5), &[5.0, 13.0, 21.0]);
        assert_eq!(tokens_to_map(&t, 2, 4).unwrap(), x);
    }

    #[test]
    fn grid_sample_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[4, 9, 11]);
        let y = grid_sample(&x, &WarpField::identity(9, 11).unwrap()).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        assert!((gelu(-3.0) + 0.003_637).abs() < 1e-5);
    }
}
