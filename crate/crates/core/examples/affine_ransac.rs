//! Robust affine fitting: first on synthetic correspondences with outliers,
//! then on two rendered frames through the feature pipeline.
//!
//! `cargo run --example affine_ransac`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpstab::geometry::AffineTransform;
use warpstab::motion::{fit_affine, ransac_affine, Correspondence, CorrespondenceSet, MotionEstimator, RansacConfig};
use warpstab::synth::{Scene, SceneConfig};

fn main() -> warpstab::Result<()> {
    let truth = AffineTransform::new([1.02, -0.05, 6.0, 0.04, 0.98, -3.5])?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let items: Vec<Correspondence> = (0..40)
        .map(|i| {
            let s = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            let (x, y) = truth.apply(s.0, s.1);
            let off = if i % 4 == 0 { rng.random_range(15.0..40.0) } else { 0.0 };
            Correspondence::new(s, (x + off, y - off))
        })
        .collect();
    let set = CorrespondenceSet::new(items);
    let naive = fit_affine(&set)?;
    let robust = ransac_affine(&set, &RansacConfig::default())?;
    println!("truth      {:?}", truth.coeffs);
    println!("plain LSQ  {:?}", naive.coeffs.map(|c| (c * 1e4).round() / 1e4));
    println!("RANSAC     {:?}  ({} of {} inliers, {} iterations)", robust.model.coeffs.map(|c| (c * 1e6).round() / 1e6), robust.inlier_count(), set.len(), robust.iterations_run);

    let scene = Scene::new(SceneConfig { height: 128, width: 160, frames: 1, seed: 4, ..Default::default() })?;
    let shift = AffineTransform::translation(4.0, -2.5);
    let a = scene.render_frame(0, &AffineTransform::IDENTITY);
    let b = scene.render_frame(0, &shift);
    let est = MotionEstimator::default().estimate(&a, &b)?;
    println!(
        "frame pair: {} matches, {} inliers, estimate {:?}",
        est.matches,
        est.inliers,
        est.affine.coeffs.map(|c| (c * 1e3).round() / 1e3)
    );
    Ok(())
}
