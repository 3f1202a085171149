//! Feature correspondences and robust inter-frame affine estimation.

pub mod features;
pub mod fit;
pub mod ransac;

pub use features::{
    describe, detect_features, match_descriptors, match_features, match_features_with, Descriptor, FeatureDetector,
    Keypoint, MatchConfig, ShiTomasi,
};
pub use fit::{build_affine_system, fit_affine, residual, solve_affine_lsq, AffineFitSystem, Correspondence, CorrespondenceSet};
pub use ransac::{ransac_affine, RansacConfig, RansacResult};

use std::sync::Arc;

use crate::error::Result;
use crate::frame::Frame;
use crate::geometry::AffineTransform;

/// Cumulative trajectory: `out[k] = per_pair[k] ∘ … ∘ per_pair[0]`.
pub fn chain_transforms(per_pair: &[AffineTransform]) -> Vec<AffineTransform> {
    let mut out = Vec::with_capacity(per_pair.len());
    let mut acc = AffineTransform::IDENTITY;
    for p in per_pair {
        acc = p.compose(&acc);
        out.push(acc);
    }
    out
}

/// Keypoints and descriptors of one frame, reusable across several pairings.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

#[derive(Clone, Debug)]
pub struct MotionEstimate {
    /// Maps pixel coordinates of the first frame onto the second.
    pub affine: AffineTransform,
    pub matches: usize,
    pub inliers: usize,
}

/// Detector, matcher and RANSAC bundled into a pairwise estimator.
#[derive(Clone)]
pub struct MotionEstimator {
    pub detector: Arc<dyn FeatureDetector>,
    pub max_points: usize,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
}

impl Default for MotionEstimator {
    fn default() -> Self {
        Self {
            detector: Arc::new(ShiTomasi::default()),
            max_points: 300,
            matching: MatchConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

impl std::fmt::Debug for MotionEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MotionEstimator")
            .field("max_points", &self.max_points)
            .field("matching", &self.matching)
            .field("ransac", &self.ransac)
            .finish()
    }
}

impl MotionEstimator {
    pub fn features(&self, frame: &Frame) -> FrameFeatures {
        let gray = frame.to_gray();
        let keypoints = self.detector.detect(&gray, self.max_points);
        let descriptors = describe(&gray, &keypoints, self.matching.patch_radius);
        FrameFeatures { keypoints, descriptors }
    }

    pub fn estimate_features(&self, a: &FrameFeatures, b: &FrameFeatures) -> Result<MotionEstimate> {
        let set = match_descriptors(&a.descriptors, &b.descriptors, &self.matching);
        let r = ransac_affine(&set, &self.ransac)?;
        Ok(MotionEstimate {
            affine: r.model,
            matches: set.len(),
            inliers: r.inlier_count(),
        })
    }

    /// Affine mapping pixels of `a` onto the corresponding pixels of `b`.
    pub fn estimate(&self, a: &Frame, b: &Frame) -> Result<MotionEstimate> {
        self.estimate_features(&self.features(a), &self.features(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_of_identities_and_translations() {
        let ids = chain_transforms(&[AffineTransform::IDENTITY; 3]);
        assert!(ids.iter().all(|a| *a == AffineTransform::IDENTITY));
        let c = chain_transforms(&[AffineTransform::translation(1.0, 0.0), AffineTransform::translation(0.0, 1.0)]);
        assert_eq!(c.len(), 2);
        assert!(c[0].max_abs_diff(&AffineTransform::translation(1.0, 0.0)) < 1e-12);
        assert!(c[1].max_abs_diff(&AffineTransform::translation(1.0, 1.0)) < 1e-12);
    }

    #[test]
    fn chain_equals_left_fold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ts: Vec<_> = (0..12)
            .map(|_| AffineTransform::new(std::array::from_fn(|_| rng.random_range(-1.0..1.0))).unwrap())
            .collect();
        let chained = chain_transforms(&ts);
        for k in 0..ts.len() {
            let fold = ts[..=k].iter().fold(AffineTransform::IDENTITY, |acc, t| t.compose(&acc));
            assert!(chained[k].max_abs_diff(&fold) < 1e-9);
        }
    }

    #[test]
    fn estimator_recovers_translation_on_texture() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise: Vec<f32> = (0..100 * 100).map(|_| rng.random()).collect();
        let base = Frame::from_fn(96, 96, |x, y| {
            let g = noise[y * 100 + x];
            [g, g, g]
        })
        .unwrap();
        let moved = Frame::from_fn(96, 96, |x, y| {
            let g = noise[(y + 2) * 100 + (x + 3)];
            [g, g, g]
        })
        .unwrap();
        let est = MotionEstimator::default().estimate(&base, &moved).unwrap();
        // moved(x,y) = base(x+3, y+2): base pixels map to (x-3, y-2)
        assert!(est.affine.max_abs_diff(&AffineTransform::translation(-3.0, -2.0)) < 0.05, "{:?}", est.affine);
    }
}
