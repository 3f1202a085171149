//! Stabilize a shaken synthetic clip with the classical predictor and report
//! per-stage timings and recovered motion.
//!
//! `cargo run --example stabilize_synthetic -- [height] [width]`

use warpstab::frame::psnr;
use warpstab::stabilizer::{stabilize_with_report, ClassicalPredictor, CropMode, SlidingWindowConfig, StabilizerConfig};
use warpstab::synth::{CameraPath, JitterModel, Scene, SceneConfig};

fn main() -> warpstab::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let (h, w) = (args.next().unwrap_or(180), args.next().unwrap_or(320));
    let clip = Scene::new(SceneConfig {
        height: h,
        width: w,
        frames: 64,
        seed: 7,
        path: CameraPath::Linear { vx: 1.0, vy: 0.0 },
        ..Default::default()
    })?
    .render_shaken(&JitterModel::default())?;
    let cfg = StabilizerConfig { window: SlidingWindowConfig::default(), crop: CropMode::Global };
    let rep = stabilize_with_report(&clip.shaken, &ClassicalPredictor::default(), &cfg)?;
    let t = &rep.timings;
    println!("{} frames at {h}x{w}: {:.1} fps", clip.shaken.len(), t.fps(clip.shaken.len()));
    println!("resize {:.3} s, predict {:.3} s, render {:.3} s", t.resize_s, t.predict_s, t.render_s);
    println!("crop keeps {:.1}% of the frame", 100.0 * rep.regions[0].area_fraction());
    for d in rep.diagnostics.iter().step_by(16) {
        println!("frame {:>2}: mean correction {:.2} px", d.index, d.mean_displacement_px);
    }
    let mid = clip.shaken.len() / 2;
    println!("PSNR vs stable at frame {mid}: shaken {:.1} dB", psnr(&clip.shaken.frames()[mid], &clip.stable.frames()[mid])?);
    Ok(())
}
