//! Initialize, save and reload generator weights, then check they validate
//! against the config.
//!
//! `cargo run --example weights_roundtrip`

use warpstab::network::{init_tunet_weights, TunetConfig, WeightStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TunetConfig::desk();
    let w = init_tunet_weights(&cfg, 42)?;
    let dir = std::env::temp_dir().join(format!("warpstab-weights-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("desk.bin");
    w.save(&path)?;
    let back = WeightStore::load(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!("{} tensors, {bytes} bytes, seed {:?}, format version {}", back.len(), back.seed(), back.version());
    println!("identical after reload: {}", back.names() == w.names() && back.names().iter().all(|n| back.get(n).ok() == w.get(n).ok()));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
