//! Two-stage transformer/UNet generator.
//!
//! Each stage runs a convolutional encoder/decoder and a token branch side by
//! side, exchanging features at every block whose input and output are at
//! least as large as the token grid. A stage emits three heads that are summed
//! into one sampling field: an affine grid, a dense convolutional field and a
//! per-token field unfolded to pixels. Stage 1 reads the window tensor and
//! yields the field for the window center; stage 2 reads stage 1's initial
//! features warped by that field, continues the token stream, and yields the
//! field for the following frame.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::AffineTransform;
use crate::network::attention::dot_product_attention;
use crate::network::config::{BlockPlan, FusionStrides, StagePlan, TunetConfig};
use crate::network::ops::{
    avg_pool, batch_norm, concat_channels, conv2d, conv_transpose2d, gelu, grid_sample, layer_norm, linear, map_to_tokens,
    relu_inplace, tokens_to_map, upsample_nearest, ConvGeom,
};
use crate::network::weights::{Init, ParamSpec, WeightStore};
use crate::tensor::Tensor;
use crate::warp::{affine_grid_normalized, WarpField};

const DOWN: ConvGeom = ConvGeom::new(3, 1, 2);
const SHORTCUT: ConvGeom = ConvGeom::new(1, 0, 2);
const UP: ConvGeom = ConvGeom::new(3, 1, 2);
const UP_OUTPUT_PADDING: usize = 1;
const HEAD: ConvGeom = ConvGeom::new(3, 1, 1);
const AFFINE_CONV: ConvGeom = ConvGeom::new(2, 0, 1);

/// Patch tokens `[N, e]` from a `[C, H, W]` map; patches are flattened in
/// `(channel, row, column)` order.
pub fn patch_embed(t: &Tensor, patch: usize, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(format!("patch {patch} does not divide {h}x{w}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let dim = c * patch * patch;
    let mut rows = Vec::with_capacity(gh * gw * dim);
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for py in 0..patch {
                    let base = (ch * h + gy * patch + py) * w + gx * patch;
                    rows.extend_from_slice(&t.data()[base..base + patch]);
                }
            }
        }
    }
    linear(&Tensor::new(vec![gh * gw, dim], rows)?, weight, bias)
}

/// Inverse of the patch layout: `[N, C*p*p]` rows to a `[C, gh*p, gw*p]` map.
fn unpatchify(rows: &Tensor, gh: usize, gw: usize, patch: usize, c: usize) -> Result<Tensor> {
    rows.expect_shape(&[gh * gw, c * patch * patch], "unpatchify input")?;
    let (h, w) = (gh * patch, gw * patch);
    let mut out = vec![0.0f32; c * h * w];
    for gy in 0..gh {
        for gx in 0..gw {
            let row = rows.row(gy * gw + gx);
            for ch in 0..c {
                for py in 0..patch {
                    let dst = (ch * h + gy * patch + py) * w + gx * patch;
                    out[dst..dst + patch].copy_from_slice(&row[(ch * patch + py) * patch..][..patch]);
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Projections of one fusion point: pooled features to tokens (`[e, C_in]`)
/// and tokens to features (`[C_out, e]`).
pub struct HafmWeights<'a> {
    pub to_tokens: &'a Tensor,
    pub to_tokens_bias: &'a Tensor,
    pub to_cnn: &'a Tensor,
    pub to_cnn_bias: &'a Tensor,
}

/// Bidirectional additive exchange at one block. The block input is pooled
/// by `strides.down` onto the token grid and added to the tokens; the tokens
/// (before that update) are projected, upsampled by `strides.up` and added to
/// the block output.
pub fn hafm_fuse_stage(
    block_in: &Tensor,
    block_out: &Tensor,
    tokens: &Tensor,
    strides: FusionStrides,
    w: &HafmWeights<'_>,
) -> Result<(Tensor, Tensor)> {
    let (_, ih, iw) = block_in.dims3()?;
    let (_, oh, ow) = block_out.dims3()?;
    let (n, _) = tokens.dims2()?;
    if strides.down == 0 || strides.up == 0 || ih % strides.down != 0 || iw % strides.down != 0 {
        return Err(Error::invalid(format!("pool stride {} does not divide {ih}x{iw}", strides.down)));
    }
    let (gh, gw) = (ih / strides.down, iw / strides.down);
    if gh * gw != n {
        return Err(Error::dims(format!("{gh}x{gw} token grid from {ih}x{iw}/{}", strides.down), format!("{n} tokens")));
    }
    if (gh * strides.up, gw * strides.up) != (oh, ow) {
        return Err(Error::dims(format!("{}x{} after upsampling by {}", gh * strides.up, gw * strides.up, strides.up), format!("{oh}x{ow}")));
    }
    let pooled = map_to_tokens(&avg_pool(block_in, strides.down)?)?;
    let mut new_tokens = linear(&pooled, w.to_tokens, Some(w.to_tokens_bias))?;
    new_tokens.add_assign(tokens)?;
    let projected = tokens_to_map(&linear(tokens, w.to_cnn, Some(w.to_cnn_bias))?, gh, gw)?;
    let mut new_map = upsample_nearest(&projected, strides.up)?;
    new_map.add_assign(block_out)?;
    Ok((new_map, new_tokens))
}

/// Exchange on a single feature map: pooled by `s_down` to the grid and the
/// grid upsampled by `s_up` back to the map.
pub fn hafm_fuse(cnn: &Tensor, tokens: &Tensor, s_down: usize, s_up: usize, w: &HafmWeights<'_>) -> Result<(Tensor, Tensor)> {
    hafm_fuse_stage(cnn, cnn, tokens, FusionStrides { down: s_down, up: s_up }, w)
}

/// Post-norm encoder block: attention and MLP, each with residual and
/// layer norm.
fn encoder_block(x: &Tensor, w: &WeightStore, p: &str, cfg: &TunetConfig) -> Result<Tensor> {
    let e = cfg.embed;
    let qkv = linear(x, w.param(&format!("{p}.attn.qkv.weight"), &[3 * e, e])?, Some(w.get(&format!("{p}.attn.qkv.bias"))?))?;
    let (q, k, v) = split3(&qkv, e)?;
    let a = dot_product_attention(&q, &k, &v, cfg.heads)?;
    let mut h = linear(&a, w.param(&format!("{p}.attn.proj.weight"), &[e, e])?, Some(w.get(&format!("{p}.attn.proj.bias"))?))?;
    h.add_assign(x)?;
    let h = layer_norm(&h, w.get(&format!("{p}.ln1.gamma"))?, w.get(&format!("{p}.ln1.beta"))?)?;
    let hidden = cfg.mlp_ratio * e;
    let f = linear(&h, w.param(&format!("{p}.mlp.fc1.weight"), &[hidden, e])?, Some(w.get(&format!("{p}.mlp.fc1.bias"))?))?.map(gelu);
    let mut f = linear(&f, w.param(&format!("{p}.mlp.fc2.weight"), &[e, hidden])?, Some(w.get(&format!("{p}.mlp.fc2.bias"))?))?;
    f.add_assign(&h)?;
    layer_norm(&f, w.get(&format!("{p}.ln2.gamma"))?, w.get(&format!("{p}.ln2.beta"))?)
}

pub(crate) fn split3(x: &Tensor, e: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c) = x.dims2()?;
    if c != 3 * e {
        return Err(Error::dims(format!("{} columns", 3 * e), format!("{c}")));
    }
    let part = |j: usize| Tensor::new(vec![n, e], x.data().chunks_exact(c).flat_map(|r| r[j * e..(j + 1) * e].iter().copied()).collect());
    Ok((part(0)?, part(1)?, part(2)?))
}

fn bn(w: &WeightStore, p: &str, x: &mut Tensor) -> Result<()> {
    batch_norm(
        x,
        w.get(&format!("{p}.bn.gamma"))?,
        w.get(&format!("{p}.bn.beta"))?,
        w.get(&format!("{p}.bn.mean"))?,
        w.get(&format!("{p}.bn.var"))?,
    )
}

fn hafm_weights<'a>(w: &'a WeightStore, p: &str, b: &BlockPlan, e: usize) -> Result<HafmWeights<'a>> {
    Ok(HafmWeights {
        to_tokens: w.param(&format!("{p}.hafm.to_tokens.weight"), &[e, b.in_channels])?,
        to_tokens_bias: w.param(&format!("{p}.hafm.to_tokens.bias"), &[e])?,
        to_cnn: w.param(&format!("{p}.hafm.to_cnn.weight"), &[b.out_channels, e])?,
        to_cnn_bias: w.param(&format!("{p}.hafm.to_cnn.bias"), &[b.out_channels])?,
    })
}

/// Parameter list in forward order.
pub fn tunet_param_specs(cfg: &TunetConfig) -> Result<Vec<ParamSpec>> {
    let plan = cfg.plan()?;
    let e = cfg.embed;
    let g = cfg.token_grid();
    let mut v = Vec::new();
    let bn = |v: &mut Vec<ParamSpec>, p: &str, c: usize| {
        v.push(ParamSpec::new(format!("{p}.bn.gamma"), &[c], Init::Ones));
        v.push(ParamSpec::new(format!("{p}.bn.beta"), &[c], Init::Zeros));
        v.push(ParamSpec::new(format!("{p}.bn.mean"), &[c], Init::Zeros));
        v.push(ParamSpec::new(format!("{p}.bn.var"), &[c], Init::Ones));
    };
    let cin = cfg.in_channels();
    let pdim = cin * cfg.patch * cfg.patch;
    v.push(ParamSpec::new("s1.embed.weight", &[e, pdim], Init::FanIn(pdim)));
    v.push(ParamSpec::new("s1.embed.bias", &[e], Init::Zeros));
    v.push(ParamSpec::new("s1.pos", &[g * g, e], Init::Uniform(0.02)));
    let k = cfg.init_kernel;
    v.push(ParamSpec::new("s1.init.conv.weight", &[cfg.init_channels, cin, k, k], Init::FanIn(cin * k * k)));
    v.push(ParamSpec::new("s1.init.conv.bias", &[cfg.init_channels], Init::Zeros));
    bn(&mut v, "s1.init", cfg.init_channels);
    let hafm = |v: &mut Vec<ParamSpec>, p: &str, b: &BlockPlan| {
        if b.fusion.is_some() {
            v.push(ParamSpec::new(format!("{p}.hafm.to_tokens.weight"), &[e, b.in_channels], Init::FanIn(b.in_channels)));
            v.push(ParamSpec::new(format!("{p}.hafm.to_tokens.bias"), &[e], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.hafm.to_cnn.weight"), &[b.out_channels, e], Init::FanIn(e)));
            v.push(ParamSpec::new(format!("{p}.hafm.to_cnn.bias"), &[b.out_channels], Init::Zeros));
        }
    };
    for s in 1..=2 {
        for blk in 0..plan.token_blocks {
            let p = format!("s{s}.block{blk}");
            let hidden = cfg.mlp_ratio * e;
            v.push(ParamSpec::new(format!("{p}.attn.qkv.weight"), &[3 * e, e], Init::FanIn(e)));
            v.push(ParamSpec::new(format!("{p}.attn.qkv.bias"), &[3 * e], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.attn.proj.weight"), &[e, e], Init::FanIn(e)));
            v.push(ParamSpec::new(format!("{p}.attn.proj.bias"), &[e], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.ln1.gamma"), &[e], Init::Ones));
            v.push(ParamSpec::new(format!("{p}.ln1.beta"), &[e], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.mlp.fc1.weight"), &[hidden, e], Init::FanIn(e)));
            v.push(ParamSpec::new(format!("{p}.mlp.fc1.bias"), &[hidden], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.mlp.fc2.weight"), &[e, hidden], Init::FanIn(hidden)));
            v.push(ParamSpec::new(format!("{p}.mlp.fc2.bias"), &[e], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.ln2.gamma"), &[e], Init::Ones));
            v.push(ParamSpec::new(format!("{p}.ln2.beta"), &[e], Init::Zeros));
        }
        for b in &plan.downs {
            let p = format!("s{s}.{}", b.name);
            v.push(ParamSpec::new(format!("{p}.conv.weight"), &[b.out_channels, b.in_channels, 3, 3], Init::FanIn(b.in_channels * 9)));
            v.push(ParamSpec::new(format!("{p}.conv.bias"), &[b.out_channels], Init::Zeros));
            v.push(ParamSpec::new(format!("{p}.skip.weight"), &[b.out_channels, b.in_channels, 1, 1], Init::FanIn(b.in_channels)));
            hafm(&mut v, &p, b);
            bn(&mut v, &p, b.out_channels);
        }
        let cb = *cfg.down_channels.last().expect("validated non-empty");
        let a = cfg.affine_channels;
        v.push(ParamSpec::new(format!("s{s}.affine.conv.weight"), &[a, cb, 2, 2], Init::FanIn(cb * 4)));
        v.push(ParamSpec::new(format!("s{s}.affine.conv.bias"), &[a], Init::Zeros));
        v.push(ParamSpec::new(format!("s{s}.affine.fc.weight"), &[6, a], Init::Uniform(1e-3)));
        v.push(ParamSpec::new(format!("s{s}.affine.fc.bias"), &[6], Init::IdentityAffine));
        for b in &plan.ups {
            let p = format!("s{s}.{}", b.name);
            v.push(ParamSpec::new(format!("{p}.deconv.weight"), &[b.in_channels, b.out_channels, 3, 3], Init::FanIn(b.in_channels * 9)));
            v.push(ParamSpec::new(format!("{p}.deconv.bias"), &[b.out_channels], Init::Zeros));
            hafm(&mut v, &p, b);
            bn(&mut v, &p, b.out_channels);
        }
        let hc = plan.head_channels;
        v.push(ParamSpec::new(format!("s{s}.warp_head.weight"), &[2, hc, 3, 3], Init::Uniform(1e-3)));
        v.push(ParamSpec::new(format!("s{s}.warp_head.bias"), &[2], Init::Zeros));
        let pp = 2 * cfg.patch * cfg.patch;
        v.push(ParamSpec::new(format!("s{s}.trans_head.weight"), &[pp, e], Init::Uniform(1e-3)));
        v.push(ParamSpec::new(format!("s{s}.trans_head.bias"), &[pp], Init::Zeros));
    }
    Ok(v)
}

pub fn init_tunet_weights(cfg: &TunetConfig, seed: u64) -> Result<WeightStore> {
    Ok(WeightStore::init(&tunet_param_specs(cfg)?, seed))
}

/// Stack both frame sequences along channels: slots `0..L` then `1..L` with
/// the last slot repeated, RGB planes per frame.
pub fn window_tensor(frames: &[&Frame], cfg: &TunetConfig) -> Result<Tensor> {
    let l = cfg.sequence_len();
    if frames.len() != l {
        return Err(Error::invalid(format!("window of {} frames, network expects {l}", frames.len())));
    }
    let n = cfg.input_size;
    let order = (0..l).chain((1..l).chain(std::iter::once(l - 1)));
    let mut data = Vec::with_capacity(cfg.in_channels() * n * n);
    for slot in order {
        let f = frames[slot];
        if f.dims() != (n, n) {
            return Err(Error::dims(format!("{n}x{n} frames"), format!("{}x{}", f.height(), f.width())));
        }
        for c in 0..3 {
            data.extend(f.data().chunks_exact(3).map(|px| px[c]));
        }
    }
    Tensor::new(vec![cfg.in_channels(), n, n], data)
}

/// Heads and field of one stage.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub affine: AffineTransform,
    /// `[2, H, W]` dense head.
    pub dense: Tensor,
    /// `[2, H, W]` token head.
    pub trans: Tensor,
    pub field: WarpField,
}

#[derive(Clone, Debug)]
pub struct TunetOutput {
    pub stages: Vec<StageOutput>,
    /// `(name, [height, width, channels])`; the affine head is `[2, 3]`.
    pub shapes: Vec<(String, Vec<usize>)>,
}

impl TunetOutput {
    /// Field for the window center and for the frame after it.
    pub fn fields(&self) -> (WarpField, WarpField) {
        (self.stages[0].field.clone(), self.stages[1].field.clone())
    }
}

fn hw_c(t: &Tensor) -> Vec<usize> {
    let s = t.shape();
    vec![s[1], s[2], s[0]]
}

/// Sum of the three heads, accumulated as `(grid + dense) + trans`.
pub fn assemble_field(affine: &AffineTransform, dense: &Tensor, trans: &Tensor) -> Result<WarpField> {
    let (_, h, w) = dense.dims3()?;
    dense.expect_shape(&[2, h, w], "dense head")?;
    trans.expect_shape(&[2, h, w], "token head")?;
    let grid = affine_grid_normalized(affine, h, w)?;
    let plane = h * w;
    let data = grid
        .data()
        .chunks_exact(2)
        .enumerate()
        .flat_map(|(i, uv)| [(uv[0] + dense.data()[i]) + trans.data()[i], (uv[1] + dense.data()[plane + i]) + trans.data()[plane + i]])
        .collect();
    WarpField::new(h, w, data)
}

struct StageCtx<'a> {
    cfg: &'a TunetConfig,
    plan: &'a StagePlan,
    w: &'a WeightStore,
}

impl StageCtx<'_> {
    fn run(&self, s: usize, feat0: &Tensor, mut tokens: Tensor, shapes: &mut Vec<(String, Vec<usize>)>) -> Result<(StageOutput, Tensor)> {
        let (cfg, w) = (self.cfg, self.w);
        let e = cfg.embed;
        let mut skips = vec![feat0.clone()];
        let mut x = feat0.clone();
        for b in &self.plan.downs {
            let p = format!("s{s}.{}", b.name);
            let conv_w = w.param(&format!("{p}.conv.weight"), &[b.out_channels, b.in_channels, 3, 3])?;
            let mut y = conv2d(&x, conv_w, Some(w.get(&format!("{p}.conv.bias"))?), DOWN)?;
            y.add_assign(&conv2d(&x, w.param(&format!("{p}.skip.weight"), &[b.out_channels, b.in_channels, 1, 1])?, None, SHORTCUT)?)?;
            if let (Some(f), Some(blk)) = (b.fusion, b.token_block) {
                tokens = encoder_block(&tokens, w, &format!("s{s}.block{blk}"), cfg)?;
                (y, tokens) = hafm_fuse_stage(&x, &y, &tokens, f, &hafm_weights(w, &p, b, e)?)?;
            }
            bn(w, &p, &mut y)?;
            relu_inplace(&mut y);
            shapes.push((p, hw_c(&y)));
            skips.push(y.clone());
            x = y;
        }

        let a = cfg.affine_channels;
        let cb = x.shape()[0];
        let mut pooled = conv2d(&x, w.param(&format!("s{s}.affine.conv.weight"), &[a, cb, 2, 2])?, Some(w.get(&format!("s{s}.affine.conv.bias"))?), AFFINE_CONV)?;
        relu_inplace(&mut pooled);
        let pooled = pooled.reshape(&[1, a])?;
        let theta = linear(&pooled, w.param(&format!("s{s}.affine.fc.weight"), &[6, a])?, Some(w.param(&format!("s{s}.affine.fc.bias"), &[6])?))?;
        let affine = AffineTransform::new(std::array::from_fn(|i| theta.data()[i] as f64))?;
        shapes.push((format!("s{s}.affine"), vec![2, 3]));

        for b in &self.plan.ups {
            let p = format!("s{s}.{}", b.name);
            let dw = w.param(&format!("{p}.deconv.weight"), &[b.in_channels, b.out_channels, 3, 3])?;
            let mut y = conv_transpose2d(&x, dw, Some(w.get(&format!("{p}.deconv.bias"))?), UP, UP_OUTPUT_PADDING)?;
            if let (Some(f), Some(blk)) = (b.fusion, b.token_block) {
                tokens = encoder_block(&tokens, w, &format!("s{s}.block{blk}"), cfg)?;
                (y, tokens) = hafm_fuse_stage(&x, &y, &tokens, f, &hafm_weights(w, &p, b, e)?)?;
            }
            bn(w, &p, &mut y)?;
            relu_inplace(&mut y);
            shapes.push((p, hw_c(&y)));
            x = concat_channels(&y, &skips[b.level - 1])?;
        }

        let hc = self.plan.head_channels;
        let dense = conv2d(&x, w.param(&format!("s{s}.warp_head.weight"), &[2, hc, 3, 3])?, Some(w.get(&format!("s{s}.warp_head.bias"))?), HEAD)?;
        shapes.push((format!("s{s}.warp"), hw_c(&dense)));
        let pp = 2 * cfg.patch * cfg.patch;
        let rows = linear(&tokens, w.param(&format!("s{s}.trans_head.weight"), &[pp, e])?, Some(w.get(&format!("s{s}.trans_head.bias"))?))?;
        let g = cfg.token_grid();
        let trans = unpatchify(&rows, g, g, cfg.patch, 2)?;
        shapes.push((format!("s{s}.trans"), hw_c(&trans)));
        let field = assemble_field(&affine, &dense, &trans)?;
        Ok((StageOutput { affine, dense, trans, field }, tokens))
    }
}

/// Full forward pass with per-stage heads and the shape trace.
pub fn tunet_forward_traced(input: &Tensor, cfg: &TunetConfig, w: &WeightStore) -> Result<TunetOutput> {
    let plan = cfg.plan()?;
    let n = cfg.input_size;
    input.expect_shape(&[cfg.in_channels(), n, n], "window tensor")?;
    let e = cfg.embed;
    let g = cfg.token_grid();
    let pdim = cfg.in_channels() * cfg.patch * cfg.patch;
    let mut shapes = Vec::new();

    let mut tokens = patch_embed(input, cfg.patch, w.param("s1.embed.weight", &[e, pdim])?, Some(w.param("s1.embed.bias", &[e])?))?;
    tokens.add_assign(w.param("s1.pos", &[g * g, e])?)?;
    let k = cfg.init_kernel;
    let mut init = conv2d(
        input,
        w.param("s1.init.conv.weight", &[cfg.init_channels, cfg.in_channels(), k, k])?,
        Some(w.get("s1.init.conv.bias")?),
        ConvGeom::new(k, cfg.init_padding, 1),
    )?;
    bn(w, "s1.init", &mut init)?;
    relu_inplace(&mut init);
    shapes.push(("s1.init".to_string(), hw_c(&init)));

    let ctx = StageCtx { cfg, plan: &plan, w };
    let (first, tokens) = ctx.run(1, &init, tokens, &mut shapes)?;
    let warped = grid_sample(&init, &first.field)?;
    let (second, _) = ctx.run(2, &warped, tokens, &mut shapes)?;
    Ok(TunetOutput {
        stages: vec![first, second],
        shapes,
    })
}

/// Fields `(W_t, W_t+1)` for a window tensor.
pub fn tunet_forward(input: &Tensor, cfg: &TunetConfig, w: &WeightStore) -> Result<(WarpField, WarpField)> {
    Ok(tunet_forward_traced(input, cfg, w)?.fields())
}
