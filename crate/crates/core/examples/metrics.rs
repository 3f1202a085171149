//! Cropping, distortion and stability on a shaken synthetic clip, before and
//! after stabilization.
//!
//! `cargo run --example metrics`

use warpstab::metrics::{evaluate, EvaluateConfig};
use warpstab::stabilizer::{stabilize_sequence, ClassicalPredictor, StabilizerConfig};
use warpstab::synth::{JitterModel, Scene, SceneConfig};

fn main() -> warpstab::Result<()> {
    let clip = Scene::new(SceneConfig { height: 128, width: 128, frames: 64, seed: 3, ..Default::default() })?.render_shaken(&JitterModel::default())?;
    let cfg = EvaluateConfig::default();
    let raw = evaluate(&clip.shaken, &clip.shaken, &cfg)?;
    let out = stabilize_sequence(&clip.shaken, &ClassicalPredictor::default(), &StabilizerConfig::default())?;
    let stab = evaluate(&clip.shaken, &out, &cfg)?;
    println!("{:<12}{:>10}{:>12}{:>11}", "", "cropping", "distortion", "stability");
    for (name, r) in [("shaken", &raw), ("stabilized", &stab)] {
        println!("{name:<12}{:>10.3}{:>12.3}{:>11.3}", r.cropping, r.distortion, r.stability);
    }
    Ok(())
}
