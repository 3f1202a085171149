//! Build a field from a similarity transform, warp a synthetic frame with it,
//! then undo the warp with the inverse field.
//!
//! `cargo run --example warp_fields`

use warpstab::frame::{psnr, Frame};
use warpstab::geometry::AffineTransform;
use warpstab::synth::{Scene, SceneConfig};
use warpstab::warp::{affine_to_warp_field, apply_warp};

fn main() -> warpstab::Result<()> {
    let (h, w) = (96, 128);
    let frame = Scene::new(SceneConfig { height: h, width: w, frames: 1, seed: 2, ..Default::default() })?.render().frames()[0].clone();
    let a = AffineTransform::similarity_about(((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0), 0.05, 0.95, 3.0, -2.0);
    let field = affine_to_warp_field(&a, h, w)?;
    let warped = apply_warp(&frame, &field)?;
    let back = apply_warp(&warped, &affine_to_warp_field(&a.inverse()?, h, w)?)?;

    let covered = field.valid_mask().iter().filter(|v| **v).count() as f64 / (h * w) as f64;
    println!("mean displacement {:.2} px, max {:.2} px", field.mean_displacement_px(), field.max_displacement_px());
    println!("{:.1}% of output pixels sample inside the source", 100.0 * covered);
    println!("PSNR original vs warped:       {:.1} dB", psnr(&frame, &warped)?);
    println!("PSNR original vs round trip:   {:.1} dB (whole frame, black borders included)", psnr(&frame, &back)?);
    println!("PSNR original vs round trip:   {:.1} dB (12 px inset)", inset_psnr(&frame, &back, 12));
    Ok(())
}

fn inset_psnr(a: &Frame, b: &Frame, m: usize) -> f64 {
    let (h, w) = a.dims();
    let mut se = 0.0;
    let mut n = 0;
    for y in m..h - m {
        for x in m..w - m {
            for c in 0..3 {
                se += ((a.get(x, y, c) - b.get(x, y, c)) as f64).powi(2);
                n += 1;
            }
        }
    }
    10.0 * (n as f64 / se).log10()
}
