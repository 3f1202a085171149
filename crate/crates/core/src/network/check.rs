//! Invariant suite behind the `net-check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::network::attention::{attention_weights, cosine_logits, scaled_cosine_attention, AttentionParams};
use crate::network::config::{NetworkConfig, TunetConfig};
use crate::network::sdm::{init_sdm_weights, sdm_forward};
use crate::network::tunet::{tunet_forward_traced, tunet_param_specs, TunetOutput};
use crate::network::weights::WeightStore;
use crate::tensor::Tensor;

/// Stage outputs of the full-size generator as `[height, width, channels]`
/// (the affine head as `[2, 3]`), written out independently of the planner.
pub const REFERENCE_FULL_SHAPES: &[(&str, &[usize])] = &[
    ("s1.init", &[256, 256, 32]),
    ("s1.down1", &[128, 128, 64]),
    ("s1.down2", &[64, 64, 64]),
    ("s1.down3", &[32, 32, 128]),
    ("s1.down4", &[16, 16, 256]),
    ("s1.down5", &[8, 8, 256]),
    ("s1.down6", &[4, 4, 256]),
    ("s1.down7", &[2, 2, 256]),
    ("s1.affine", &[2, 3]),
    ("s1.up7", &[4, 4, 512]),
    ("s1.up6", &[8, 8, 512]),
    ("s1.up5", &[16, 16, 512]),
    ("s1.up4", &[32, 32, 512]),
    ("s1.up3", &[64, 64, 256]),
    ("s1.up2", &[128, 128, 128]),
    ("s1.up1", &[256, 256, 64]),
    ("s1.warp", &[256, 256, 2]),
    ("s1.trans", &[256, 256, 2]),
    ("s2.down1", &[128, 128, 64]),
    ("s2.down2", &[64, 64, 64]),
    ("s2.down3", &[32, 32, 128]),
    ("s2.down4", &[16, 16, 256]),
    ("s2.down5", &[8, 8, 256]),
    ("s2.down6", &[4, 4, 256]),
    ("s2.down7", &[2, 2, 256]),
    ("s2.affine", &[2, 3]),
    ("s2.up7", &[4, 4, 512]),
    ("s2.up6", &[8, 8, 512]),
    ("s2.up5", &[16, 16, 512]),
    ("s2.up4", &[32, 32, 512]),
    ("s2.up3", &[64, 64, 256]),
    ("s2.up2", &[128, 128, 128]),
    ("s2.up1", &[256, 256, 64]),
    ("s2.warp", &[256, 256, 2]),
    ("s2.trans", &[256, 256, 2]),
];

pub const HEADS: [&str; 3] = ["affine", "warp_head", "trans_head"];

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct NetCheckReport {
    pub input_size: usize,
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Run `f` on a private single-threaded pool.
pub fn serial<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Softmax rows, temperature bound and key/value permutation equivariance on
/// random cases.
pub fn check_attention(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_sum, mut worst_bound, mut worst_perm, mut min_w) = (0.0f64, f32::NEG_INFINITY, 0.0f32, f32::INFINITY);
    for _ in 0..cases {
        let heads = rng.random_range(1..=4);
        let (n, m, dh) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=8));
        let mut mat = |r: usize| Tensor::from_fn(&[r, heads * dh], |_| rng.random_range(-1.0..1.0));
        let (q, k, v) = (mat(n), mat(m), mat(m));
        let tau: Vec<f32> = (0..heads).map(|_| rng.random_range(0.01..2.0)).collect();
        let bias = Tensor::from_fn(&[heads, n, m], |_| rng.random_range(-1.0..1.0));
        let p = AttentionParams::new(heads, tau.clone(), Some(bias))?;
        for w in attention_weights(&q, &k, &p)? {
            for row in w.data().chunks_exact(m) {
                worst_sum = worst_sum.max((row.iter().map(|v| *v as f64).sum::<f64>() - 1.0).abs());
                min_w = row.iter().copied().fold(min_w, f32::min);
            }
        }
        for (h, l) in cosine_logits(&q, &k, &p)?.iter().enumerate() {
            worst_bound = l.data().iter().fold(worst_bound, |acc, v| acc.max(v.abs() * tau[h]));
        }
        let plain = AttentionParams::new(heads, tau, None)?;
        let rev = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.data().chunks_exact(t.shape()[1]).rev().flatten().copied().collect());
        let a = scaled_cosine_attention(&q, &k, &v, &plain)?;
        let b = scaled_cosine_attention(&q, &rev(&k)?, &rev(&v)?, &plain)?;
        worst_perm = worst_perm.max(a.max_abs_diff(&b));
    }
    let passed = worst_sum <= 1e-6 && min_w >= 0.0 && worst_bound <= 1.0 + 1e-5 && worst_perm <= 1e-6;
    Ok(outcome(
        "attention_normalization",
        passed,
        format!("{cases} cases: max |row sum - 1| = {worst_sum:.2e}, min weight = {min_w:.2e}, max |logit|*tau = {worst_bound:.6}, permutation drift = {worst_perm:.2e}"),
    ))
}

fn shape_check(cfg: &TunetConfig, out: &TunetOutput) -> Result<CheckOutcome> {
    let planned = cfg.expected_shapes()?;
    let mut problems = Vec::new();
    if out.shapes != planned {
        problems.push("trace differs from plan".to_string());
    }
    let is_full = *cfg == TunetConfig::full();
    if is_full {
        for ((name, want), (got_name, got)) in REFERENCE_FULL_SHAPES.iter().zip(&out.shapes) {
            if name != got_name || *want != got.as_slice() {
                problems.push(format!("{got_name} {got:?} vs reference {name} {want:?}"));
            }
        }
        if REFERENCE_FULL_SHAPES.len() != out.shapes.len() {
            problems.push(format!("{} stages traced, {} in reference", out.shapes.len(), REFERENCE_FULL_SHAPES.len()));
        }
    }
    let finite = out.stages.iter().all(|s| s.field.data().iter().all(|v| v.is_finite()));
    if !finite {
        problems.push("non-finite field values".into());
    }
    Ok(outcome(
        "shape_table",
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} stage outputs match{}", out.shapes.len(), if is_full { " the reference table" } else { " the plan" })
        } else {
            problems.join("; ")
        },
    ))
}

/// Per stage, rerun with two heads zeroed and compare the field with the
/// elementwise sum of the three single-head fields. Weights are restored.
pub fn check_head_additivity(cfg: &TunetConfig, w: &mut WeightStore, input: &Tensor, full: &TunetOutput) -> Result<CheckOutcome> {
    let mut worst = 0.0f32;
    for stage in 1..=2usize {
        let mut parts = Vec::with_capacity(3);
        for keep in HEADS {
            let zeroed: Vec<String> = HEADS.iter().filter(|h| **h != keep).map(|h| format!("s{stage}.{h}.")).collect();
            let saved: Vec<(String, Tensor)> = w
                .names()
                .iter()
                .filter(|n| zeroed.iter().any(|z| n.starts_with(z.as_str())))
                .map(|n| Ok((n.clone(), w.get(n)?.clone())))
                .collect::<Result<_>>()?;
            for z in &zeroed {
                w.zero_prefix(z);
            }
            let run = serial(|| tunet_forward_traced(input, cfg, w));
            for (n, t) in saved {
                *w.get_mut(&n)? = t;
            }
            parts.push(run??.stages[stage - 1].field.clone());
        }
        for (i, v) in full.stages[stage - 1].field.data().iter().enumerate() {
            let sum = (parts[0].data()[i] + parts[1].data()[i]) + parts[2].data()[i];
            worst = worst.max((v - sum).abs());
        }
    }
    Ok(outcome("head_additivity", worst == 0.0, format!("max |W - (A + W_dense + T)| = {worst:e} over both stages")))
}

fn sdm_checks(cfg: &NetworkConfig, seed: u64) -> Result<CheckOutcome> {
    let s = &cfg.sdm;
    let mut w = init_sdm_weights(s, seed)?;
    let n = s.check_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5d);
    let noise = Frame::from_fn(n, n, |_, _| [rng.random(), rng.random(), rng.random()])?;
    let gray = Frame::filled(n, n, [0.5; 3])?;
    let a = serial(|| sdm_forward(&noise, s, &w))??;
    let b = serial(|| sdm_forward(&noise, s, &w))??;
    let g = sdm_forward(&gray, s, &w)?;
    let sensitive = a.max_abs_diff(&g) > 0.0;
    w.zero_prefix("head.");
    let z = sdm_forward(&noise, s, &w)?;
    let zero = z.data().iter().all(|v| *v == 0.0);
    let passed = a == b && sensitive && zero && a.all_finite();
    Ok(outcome(
        "discriminator",
        passed,
        format!(
            "score map {:?}; deterministic {}; gray/noise differ {}; zero head gives zeros {}",
            a.shape(),
            a == b,
            sensitive,
            zero
        ),
    ))
}

/// Run every check. With `weights`, the generator store is validated against
/// the config first and used instead of a seeded one.
pub fn run_net_check(cfg: &NetworkConfig, seed: u64, weights: Option<WeightStore>) -> Result<NetCheckReport> {
    cfg.validate()?;
    let t = &cfg.tunet;
    let mut w = match weights {
        Some(w) => {
            w.check_specs(&tunet_param_specs(t)?)?;
            w
        }
        None => WeightStore::init(&tunet_param_specs(t)?, seed),
    };
    let mut checks = vec![check_attention(seed, 50)?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let n = t.input_size;
    let input = Tensor::from_fn(&[t.in_channels(), n, n], |_| rng.random());
    let first = serial(|| tunet_forward_traced(&input, t, &w))??;
    checks.push(shape_check(t, &first)?);
    let second = serial(|| tunet_forward_traced(&input, t, &w))??;
    let same = first.stages.iter().zip(&second.stages).all(|(a, b)| a.field == b.field && a.affine == b.affine);
    checks.push(outcome("determinism", same, format!("two serial forward passes bitwise equal: {same}")));
    drop(second);
    checks.push(check_head_additivity(t, &mut w, &input, &first)?);
    checks.push(sdm_checks(cfg, seed)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(NetCheckReport {
        input_size: n,
        seed,
        checks,
        passed,
    })
}
