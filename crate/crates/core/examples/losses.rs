//! Evaluate each training loss on small hand-built inputs.
//!
//! `cargo run --example losses`

use warpstab::geometry::AffineTransform;
use warpstab::losses::{
    adjacent_grid_loss, content_loss, discrimination_loss, generator_loss, points_loss, relative_grid_loss, temporal_loss, GridMesh,
    LossParts, LossWeights,
};
use warpstab::synth::{JitterModel, Scene, SceneConfig};
use warpstab::warp::{affine_to_warp_field, WarpField};
use warpstab::Tensor;

fn main() -> warpstab::Result<()> {
    let (h, w) = (64, 64);
    let seq = Scene::new(SceneConfig { height: h, width: w, frames: 2, seed: 9, ..Default::default() })?.render_shaken(&JitterModel::default())?.shaken;
    let (a, b) = (&seq.frames()[0], &seq.frames()[1]);
    let shift = affine_to_warp_field(&AffineTransform::translation(2.0, 0.0), h, w)?;
    let id = WarpField::identity(h, w)?;

    let pts = [(10.0, 10.0), (30.0, 40.0), (50.0, 20.0)];
    let moved = pts.map(|(x, y)| (x + 2.0, y));
    let parts = LossParts {
        content: content_loss(a, b, None)?,
        points: points_loss(&shift, &pts, &moved)?,
        relative: relative_grid_loss(&GridMesh::regular(5, 5, 8.0)?),
        adjacent: adjacent_grid_loss(&GridMesh::regular(5, 5, 8.0)?.map(&AffineTransform::new([1.0, 0.3, 0.0, 0.0, 1.0, 0.0])?)),
        temporal: temporal_loss(a, a, &id)?,
    };
    println!("{:<38}{:.6}", "content  (consecutive shaken frames)", parts.content);
    println!("{:<38}{:.6}", "points   (field matches targets)", parts.points);
    println!("{:<38}{:.6}", "relative (regular lattice)", parts.relative);
    println!("{:<38}{:.6}", "adjacent (sheared lattice)", parts.adjacent);
    println!("{:<38}{:.6}", "temporal (identity phi, same frame)", parts.temporal);
    println!("{:<38}{:.6}", "generator, default weights", generator_loss(&parts, &LossWeights::default()));
    let d = discrimination_loss(&Tensor::full(&[4, 4], -0.5), &Tensor::full(&[4, 4], 0.5))?;
    println!("{:<38}{d:.6}", "discriminator at +-0.5");
    Ok(())
}
