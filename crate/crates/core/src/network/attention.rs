//! Multi-head attention: scaled cosine (with per-head temperature and
//! relative-position bias) and plain scaled dot-product.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Lower bound applied to stored temperatures.
pub const TAU_FLOOR: f32 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    /// Temperature per head.
    pub tau: Vec<f32>,
    /// Additive bias per head, `[heads, n_q, n_k]`; `None` means zero.
    pub bias: Option<Tensor>,
}

impl AttentionParams {
    pub fn new(heads: usize, tau: Vec<f32>, bias: Option<Tensor>) -> Result<Self> {
        let p = Self { heads, tau, bias };
        p.validate()?;
        Ok(p)
    }

    /// Unit temperature and zero bias.
    pub fn plain(heads: usize) -> Self {
        Self {
            heads,
            tau: vec![1.0; heads],
            bias: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::invalid("attention needs at least one head"));
        }
        if self.tau.len() != self.heads {
            return Err(Error::dims(format!("{} temperatures", self.heads), format!("{}", self.tau.len())));
        }
        if let Some(t) = self.tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::invalid(format!("temperature must be positive and finite, got {t}")));
        }
        if let Some(b) = &self.bias {
            if b.shape().len() != 3 || b.shape()[0] != self.heads {
                return Err(Error::dims(format!("[{}, n, n] bias", self.heads), format!("{:?}", b.shape())));
            }
            if !b.all_finite() {
                return Err(Error::invalid("attention bias has non-finite entries"));
            }
        }
        Ok(())
    }
}

struct Split {
    n: usize,
    m: usize,
    dh: usize,
    dv: usize,
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Split> {
    let (n, d) = q.dims2()?;
    let (m, dk) = k.dims2()?;
    let (mv, dvt) = v.dims2()?;
    if d != dk || m != mv {
        return Err(Error::dims(format!("k [{m}, {d}] and v [{m}, _]"), format!("k {:?}, v {:?}", k.shape(), v.shape())));
    }
    if m == 0 {
        return Err(Error::invalid("attention needs at least one key"));
    }
    if d % heads != 0 || dvt % heads != 0 {
        return Err(Error::invalid(format!("{heads} heads do not divide dims {d}/{dvt}")));
    }
    Ok(Split { n, m, dh: d / heads, dv: dvt / heads })
}

/// Columns `[h*dh, (h+1)*dh)` of a row-major matrix.
fn head_slice(x: &Tensor, h: usize, dh: usize) -> Vec<f32> {
    let cols = x.shape()[1];
    x.data().chunks_exact(cols).flat_map(|r| r[h * dh..(h + 1) * dh].iter().copied()).collect()
}

/// Rows scaled to unit length; zero rows stay zero.
fn unit_rows(mut rows: Vec<f32>, d: usize) -> Vec<f32> {
    for r in rows.chunks_exact_mut(d) {
        let norm = r.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            r.iter_mut().for_each(|v| *v /= norm);
        }
    }
    rows
}

fn softmax_rows(logits: &mut [f32], m: usize) {
    for row in logits.chunks_exact_mut(m) {
        let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Cosine similarities divided by the head temperature, before the bias:
/// one `[n_q, n_k]` matrix per head.
pub fn cosine_logits(q: &Tensor, k: &Tensor, params: &AttentionParams) -> Result<Vec<Tensor>> {
    params.validate()?;
    let s = check_qkv(q, k, k, params.heads)?;
    (0..params.heads)
        .map(|h| {
            let qn = unit_rows(head_slice(q, h, s.dh), s.dh);
            let kn = unit_rows(head_slice(k, h, s.dh), s.dh);
            let mut out = vec![0.0f32; s.n * s.m];
            gemm(s.n, s.dh, s.m, &qn, false, &kn, true, &mut out, false);
            let inv = 1.0 / params.tau[h];
            out.iter_mut().for_each(|v| *v *= inv);
            Tensor::new(vec![s.n, s.m], out)
        })
        .collect()
}

/// Softmax weights per head, `[n_q, n_k]` each.
pub fn attention_weights(q: &Tensor, k: &Tensor, params: &AttentionParams) -> Result<Vec<Tensor>> {
    let mut logits = cosine_logits(q, k, params)?;
    let (n, m) = logits[0].dims2()?;
    if let Some(b) = &params.bias {
        b.expect_shape(&[params.heads, n, m], "attention bias")?;
    }
    for (h, l) in logits.iter_mut().enumerate() {
        if let Some(b) = &params.bias {
            let bh = &b.data()[h * n * m..][..n * m];
            l.data_mut().iter_mut().zip(bh).for_each(|(v, b)| *v += b);
        }
        softmax_rows(l.data_mut(), m);
    }
    Ok(logits)
}

/// `softmax(cos(q, k) / tau + B) v` per head, heads concatenated.
pub fn scaled_cosine_attention(q: &Tensor, k: &Tensor, v: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let s = check_qkv(q, k, v, params.heads)?;
    let probs = attention_weights(q, k, params)?;
    combine(&probs, v, &s, params.heads)
}

/// Standard `softmax(q k^T / sqrt(d_h)) v` per head.
pub fn dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    if heads == 0 {
        return Err(Error::invalid("attention needs at least one head"));
    }
    let s = check_qkv(q, k, v, heads)?;
    let scale = 1.0 / (s.dh as f32).sqrt();
    let probs: Vec<Tensor> = (0..heads)
        .map(|h| {
            let qh = head_slice(q, h, s.dh);
            let kh = head_slice(k, h, s.dh);
            let mut out = vec![0.0f32; s.n * s.m];
            gemm(s.n, s.dh, s.m, &qh, false, &kh, true, &mut out, false);
            out.iter_mut().for_each(|v| *v *= scale);
            softmax_rows(&mut out, s.m);
            Tensor::new(vec![s.n, s.m], out)
        })
        .collect::<Result<_>>()?;
    combine(&probs, v, &s, heads)
}

fn combine(probs: &[Tensor], v: &Tensor, s: &Split, heads: usize) -> Result<Tensor> {
    let width = s.dv * heads;
    let mut out = vec![0.0f32; s.n * width];
    for (h, p) in probs.iter().enumerate() {
        let vh = head_slice(v, h, s.dv);
        let mut oh = vec![0.0f32; s.n * s.dv];
        gemm(s.n, s.m, s.dv, p.data(), false, &vh, false, &mut oh, false);
        for (dst, src) in out.chunks_exact_mut(width).zip(oh.chunks_exact(s.dv)) {
            dst[h * s.dv..(h + 1) * s.dv].copy_from_slice(src);
        }
    }
    Tensor::new(vec![s.n, width], out)
}
