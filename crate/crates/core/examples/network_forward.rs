//! Run the generator on a random window and print the stage shape trace.
//!
//! `cargo run --example network_forward [-- --full]`

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpstab::network::{init_tunet_weights, tunet_forward_traced, TunetConfig};
use warpstab::Tensor;

fn main() -> warpstab::Result<()> {
    let cfg = if std::env::args().any(|a| a == "--full") { TunetConfig::full() } else { TunetConfig::desk() };
    let t0 = Instant::now();
    let weights = init_tunet_weights(&cfg, 0)?;
    let params: usize = weights.names().iter().map(|n| weights.get(n).map(|t| t.len()).unwrap_or(0)).sum();
    println!("{} parameters, init {:.2?}", params, t0.elapsed());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = cfg.input_size;
    let input = Tensor::from_fn(&[cfg.in_channels(), n, n], |_| rng.random());
    let t1 = Instant::now();
    let out = tunet_forward_traced(&input, &cfg, &weights)?;
    println!("forward {:.2?}", t1.elapsed());
    for (name, shape) in &out.shapes {
        println!("{name:>10}  {shape:?}");
    }
    for (i, s) in out.stages.iter().enumerate() {
        println!(
            "stage {}: affine {:?}, mean displacement {:.3} px",
            i + 1,
            s.affine.coeffs.map(|c| (c * 1e4).round() / 1e4),
            s.field.mean_displacement_px()
        );
    }
    Ok(())
}
