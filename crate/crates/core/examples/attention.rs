//! Scaled cosine attention on random tokens: logits stay within 1/tau and
//! each row of weights sums to one.
//!
//! `cargo run --example attention`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpstab::network::{attention_weights, cosine_logits, scaled_cosine_attention, AttentionParams};
use warpstab::Tensor;

fn main() -> warpstab::Result<()> {
    let (heads, n, dh) = (2, 6, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tok = || Tensor::from_fn(&[n, heads * dh], |_| rng.random_range(-1.0..1.0));
    let (q, k, v) = (tok(), tok(), tok());
    let p = AttentionParams::new(heads, vec![0.1, 0.5], None)?;

    for (h, l) in cosine_logits(&q, &k, &p)?.iter().enumerate() {
        let max = l.data().iter().fold(0.0f32, |m, x| m.max(x.abs()));
        println!("head {h}: max |logit| {max:.3} (bound {:.1})", 1.0 / p.tau[h]);
    }
    for (h, wts) in attention_weights(&q, &k, &p)?.iter().enumerate() {
        let sums: Vec<String> = wts.data().chunks_exact(n).map(|r| format!("{:.4}", r.iter().sum::<f32>())).collect();
        println!("head {h}: row sums {}", sums.join(" "));
    }
    let out = scaled_cosine_attention(&q, &k, &v, &p)?;
    println!("output shape {:?}, first row {:?}", out.shape(), &out.data()[..heads * dh]);
    Ok(())
}
