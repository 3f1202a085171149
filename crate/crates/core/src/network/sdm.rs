//! Windowed-attention discriminator producing a score per patch.

use rayon::prelude::*;

use crate::error::Result;
use crate::frame::Frame;
use crate::network::attention::{scaled_cosine_attention, AttentionParams};
use crate::network::config::SdmConfig;
use crate::network::ops::{gelu, layer_norm, linear};
use crate::network::tunet::{patch_embed, split3};
use crate::network::weights::{Init, ParamSpec, WeightStore};
use crate::tensor::Tensor;

pub fn sdm_param_specs(cfg: &SdmConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let e = cfg.embed;
    let d2 = cfg.window * cfg.window;
    let pdim = 3 * cfg.patch * cfg.patch;
    let hidden = cfg.mlp_ratio * e;
    let mut v = vec![
        ParamSpec::new("embed.weight", &[e, pdim], Init::FanIn(pdim)),
        ParamSpec::new("embed.bias", &[e], Init::Zeros),
    ];
    for b in 0..cfg.blocks {
        let p = format!("block{b}");
        v.extend([
            ParamSpec::new(format!("{p}.attn.qkv.weight"), &[3 * e, e], Init::FanIn(e)),
            ParamSpec::new(format!("{p}.attn.qkv.bias"), &[3 * e], Init::Zeros),
            ParamSpec::new(format!("{p}.attn.tau"), &[cfg.heads], Init::Const(0.1)),
            ParamSpec::new(format!("{p}.attn.bias"), &[cfg.heads, d2, d2], Init::Uniform(0.02)),
            ParamSpec::new(format!("{p}.attn.proj.weight"), &[e, e], Init::FanIn(e)),
            ParamSpec::new(format!("{p}.attn.proj.bias"), &[e], Init::Zeros),
            ParamSpec::new(format!("{p}.norm1.gamma"), &[e], Init::Ones),
            ParamSpec::new(format!("{p}.norm1.beta"), &[e], Init::Zeros),
            ParamSpec::new(format!("{p}.mlp.fc1.weight"), &[hidden, e], Init::FanIn(e)),
            ParamSpec::new(format!("{p}.mlp.fc1.bias"), &[hidden], Init::Zeros),
            ParamSpec::new(format!("{p}.mlp.fc2.weight"), &[e, hidden], Init::FanIn(hidden)),
            ParamSpec::new(format!("{p}.mlp.fc2.bias"), &[e], Init::Zeros),
            ParamSpec::new(format!("{p}.norm2.gamma"), &[e], Init::Ones),
            ParamSpec::new(format!("{p}.norm2.beta"), &[e], Init::Zeros),
        ]);
    }
    v.push(ParamSpec::new("head.weight", &[1, e], Init::FanIn(e)));
    v.push(ParamSpec::new("head.bias", &[1], Init::Zeros));
    Ok(v)
}

pub fn init_sdm_weights(cfg: &SdmConfig, seed: u64) -> Result<WeightStore> {
    Ok(WeightStore::init(&sdm_param_specs(cfg)?, seed))
}

fn frame_tensor(f: &Frame) -> Result<Tensor> {
    let (h, w) = f.dims();
    let data = (0..3).flat_map(|c| f.data().chunks_exact(3).map(move |px| px[c])).collect();
    Tensor::new(vec![3, h, w], data)
}

/// Self-attention inside each non-overlapping `d x d` window of a token grid.
fn window_attention(x: &Tensor, gh: usize, gw: usize, cfg: &SdmConfig, w: &WeightStore, p: &str) -> Result<Tensor> {
    let e = cfg.embed;
    let d = cfg.window;
    let params = AttentionParams::new(
        cfg.heads,
        w.param(&format!("{p}.attn.tau"), &[cfg.heads])?.data().to_vec(),
        Some(w.param(&format!("{p}.attn.bias"), &[cfg.heads, d * d, d * d])?.clone()),
    )?;
    let qkv_w = w.param(&format!("{p}.attn.qkv.weight"), &[3 * e, e])?;
    let qkv_b = w.get(&format!("{p}.attn.qkv.bias"))?;
    let proj_w = w.param(&format!("{p}.attn.proj.weight"), &[e, e])?;
    let proj_b = w.get(&format!("{p}.attn.proj.bias"))?;
    let mut out = vec![0.0f32; gh * gw * e];
    for wy in 0..gh / d {
        for wx in 0..gw / d {
            let idx: Vec<usize> = (0..d * d).map(|t| (wy * d + t / d) * gw + wx * d + t % d).collect();
            let tokens = Tensor::new(vec![d * d, e], idx.iter().flat_map(|&i| x.row(i).to_vec()).collect())?;
            let (q, k, v) = split3(&linear(&tokens, qkv_w, Some(qkv_b))?, e)?;
            let a = linear(&scaled_cosine_attention(&q, &k, &v, &params)?, proj_w, Some(proj_b))?;
            for (r, &i) in idx.iter().enumerate() {
                out[i * e..(i + 1) * e].copy_from_slice(a.row(r));
            }
        }
    }
    Tensor::new(vec![gh * gw, e], out)
}

/// Score map `[H/patch, W/patch]` for one frame.
pub fn sdm_forward(frame: &Frame, cfg: &SdmConfig, w: &WeightStore) -> Result<Tensor> {
    cfg.validate()?;
    let (h, wd) = frame.dims();
    cfg.check_frame(h, wd)?;
    let e = cfg.embed;
    let (gh, gw) = (h / cfg.patch, wd / cfg.patch);
    let pdim = 3 * cfg.patch * cfg.patch;
    let mut x = patch_embed(&frame_tensor(frame)?, cfg.patch, w.param("embed.weight", &[e, pdim])?, Some(w.get("embed.bias")?))?;
    let hidden = cfg.mlp_ratio * e;
    for b in 0..cfg.blocks {
        let p = format!("block{b}");
        let a = window_attention(&x, gh, gw, cfg, w, &p)?;
        x.add_assign(&layer_norm(&a, w.get(&format!("{p}.norm1.gamma"))?, w.get(&format!("{p}.norm1.beta"))?)?)?;
        let m = linear(&x, w.param(&format!("{p}.mlp.fc1.weight"), &[hidden, e])?, Some(w.get(&format!("{p}.mlp.fc1.bias"))?))?.map(gelu);
        let m = linear(&m, w.param(&format!("{p}.mlp.fc2.weight"), &[e, hidden])?, Some(w.get(&format!("{p}.mlp.fc2.bias"))?))?;
        x.add_assign(&layer_norm(&m, w.get(&format!("{p}.norm2.gamma"))?, w.get(&format!("{p}.norm2.beta"))?)?)?;
    }
    linear(&x, w.param("head.weight", &[1, e])?, Some(w.param("head.bias", &[1])?))?.reshape(&[gh, gw])
}

/// Independent score maps for a batch of frames.
pub fn sdm_forward_batch(frames: &[Frame], cfg: &SdmConfig, w: &WeightStore) -> Result<Vec<Tensor>> {
    frames.par_iter().map(|f| sdm_forward(f, cfg, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(64, 64, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn zero_head_gives_zero_map() {
        let cfg = SdmConfig::desk();
        let mut w = init_sdm_weights(&cfg, 0).unwrap();
        w.zero_prefix("head.");
        let s = sdm_forward(&noise(1), &cfg, &w).unwrap();
        assert_eq!(s.shape(), &[16, 16]);
        assert!(s.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gray_and_noise_differ_and_repeat() {
        let cfg = SdmConfig::desk();
        let w = init_sdm_weights(&cfg, 2).unwrap();
        let gray = Frame::filled(64, 64, [0.5; 3]).unwrap();
        let a = sdm_forward(&gray, &cfg, &w).unwrap();
        let b = sdm_forward(&noise(3), &cfg, &w).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-3);
        assert_eq!(sdm_forward(&noise(3), &cfg, &w).unwrap(), b);
        assert!(a.all_finite() && b.all_finite());
    }

    #[test]
    fn batch_permutation_permutes_scores() {
        let cfg = SdmConfig::desk();
        let w = init_sdm_weights(&cfg, 4).unwrap();
        let frames = vec![noise(5), noise(6), Frame::filled(64, 64, [0.2, 0.4, 0.6]).unwrap()];
        let scores = sdm_forward_batch(&frames, &cfg, &w).unwrap();
        let perm = [2, 0, 1];
        let shuffled: Vec<Frame> = perm.iter().map(|&i| frames[i].clone()).collect();
        let again = sdm_forward_batch(&shuffled, &cfg, &w).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(again[k], scores[i]);
        }
    }

    #[test]
    fn indivisible_frame_rejected() {
        let cfg = SdmConfig::desk();
        let w = init_sdm_weights(&cfg, 0).unwrap();
        assert!(sdm_forward(&Frame::filled(48, 64, [0.0; 3]).unwrap(), &cfg, &w).is_err());
    }
}
