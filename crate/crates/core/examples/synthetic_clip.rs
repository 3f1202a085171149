//! Render a shaken clip with ground-truth corrections and write it to disk.
//!
//! `cargo run --example synthetic_clip -- [out_dir]`

use std::path::PathBuf;

use warpstab::io::{write_frame_dir, write_sidecar, FrameFormat};
use warpstab::synth::{CameraPath, JitterModel, Scene, SceneConfig, Texture};

fn main() -> warpstab::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("warpstab-synthetic"));
    let scene = Scene::new(SceneConfig {
        height: 96,
        width: 128,
        frames: 32,
        seed: 12,
        texture: Texture::Checker { cell: 8 },
        path: CameraPath::Sinusoidal { amp_x: 3.0, amp_y: 1.5, period: 32.0 },
        ..Default::default()
    })?;
    let jitter = JitterModel { trans_sigma: 3.0, rot_sigma: 0.02, scale_sigma: 0.005, rho: 0.6, seed: 1 };
    let clip = scene.render_shaken(&jitter)?;
    write_frame_dir(&clip.stable, &out.join("stable"), FrameFormat::Png)?;
    write_frame_dir(&clip.shaken, &out.join("shaken"), FrameFormat::Png)?;
    write_sidecar(&clip.transforms, &out.join("transforms.txt"))?;
    for (t, a) in clip.transforms.iter().enumerate().step_by(8) {
        println!("frame {t:>2}: correction {:?}", a.coeffs.map(|c| (c * 1e3).round() / 1e3));
    }
    println!("wrote {} frames per stream to {}", clip.shaken.len(), out.display());
    Ok(())
}
