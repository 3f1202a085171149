//! Largest rectangle valid under a set of rotated fields, and the crop it
//! produces on a frame.
//!
//! `cargo run --example crop_region`

use warpstab::geometry::AffineTransform;
use warpstab::stabilizer::{common_valid_mask, compute_crop_region, crop_resize, maximal_rectangle};
use warpstab::synth::{Scene, SceneConfig};
use warpstab::warp::affine_to_warp_field;

fn main() -> warpstab::Result<()> {
    let (h, w) = (90, 160);
    let c = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let fields = [-0.04, 0.0, 0.03, 0.06]
        .iter()
        .map(|&t| affine_to_warp_field(&AffineTransform::similarity_about(c, t, 1.0, 4.0 * t / 0.06, 0.0), h, w))
        .collect::<warpstab::Result<Vec<_>>>()?;
    let refs: Vec<_> = fields.iter().collect();
    let mask = common_valid_mask(&refs)?;
    let rect = maximal_rectangle(&mask, h, w).expect("non-empty mask");
    let region = compute_crop_region(&refs)?;
    println!("valid pixels {} of {}", mask.iter().filter(|v| **v).count(), h * w);
    println!("pixel rectangle {rect:?}, area {}", rect.area());
    println!("normalized region {region:?}, keeps {:.1}% of the frame", 100.0 * region.area_fraction());

    let frame = Scene::new(SceneConfig { height: h, width: w, frames: 1, ..Default::default() })?.render().frames()[0].clone();
    let cropped = crop_resize(&frame, &region, h, w)?;
    println!("cropped frame resized back to {:?}", cropped.dims());
    Ok(())
}
