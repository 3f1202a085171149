//! Seeded RANSAC over minimal three-point affine samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::AffineTransform;
use crate::motion::fit::{fit_affine, residual, Correspondence, CorrespondenceSet};

#[derive(Clone, Debug, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance in pixels.
    pub threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
    /// Early-exit confidence for the adaptive iteration bound; 1.0 disables it.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            threshold: 2.0,
            min_inliers: 8,
            seed: 0,
            confidence: 0.999,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("ransac iterations must be >= 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("ransac threshold must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::Config("ransac confidence must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub model: AffineTransform,
    pub inliers: Vec<bool>,
    pub iterations_run: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn minimal_affine(c: [&Correspondence; 3]) -> Option<AffineTransform> {
    let [p, q, r] = c;
    let (x1, y1) = p.source;
    let (x2, y2) = q.source;
    let (x3, y3) = r.source;
    let det = x1 * (y2 - y3) - y1 * (x2 - x3) + (x2 * y3 - x3 * y2);
    let span = ((x2 - x1).abs() + (y2 - y1).abs()).max((x3 - x1).abs() + (y3 - y1).abs());
    if det.abs() <= 1e-6 * span * span.max(1.0) {
        return None;
    }
    // Cramer's rule on [x y 1] rows for each output coordinate
    let solve = |b1: f64, b2: f64, b3: f64| {
        let a = (b1 * (y2 - y3) - y1 * (b2 - b3) + (b2 * y3 - b3 * y2)) / det;
        let b = (x1 * (b2 - b3) - b1 * (x2 - x3) + (x2 * b3 - x3 * b2)) / det;
        let c = (x1 * (y2 * b3 - y3 * b2) - y1 * (x2 * b3 - x3 * b2) + b1 * (x2 * y3 - x3 * y2)) / det;
        (a, b, c)
    };
    let (a1, a2, a3) = solve(p.target.0, q.target.0, r.target.0);
    let (a4, a5, a6) = solve(p.target.1, q.target.1, r.target.1);
    AffineTransform::new([a1, a2, a3, a4, a5, a6]).ok()
}

fn score(model: &AffineTransform, pts: &[Correspondence], thr: f64) -> (usize, f64, Vec<bool>) {
    let mut count = 0;
    let mut err = 0.0;
    let mask = pts
        .iter()
        .map(|c| {
            let r = residual(model, c);
            let inl = r <= thr;
            if inl {
                count += 1;
                err += r;
            }
            inl
        })
        .collect();
    (count, err, mask)
}

fn adaptive_bound(inlier_ratio: f64, confidence: f64) -> usize {
    if confidence >= 1.0 {
        return usize::MAX;
    }
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 - 1e-12 {
        return 1;
    }
    if w3 <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - w3).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Robust affine fit mapping sources to targets.
///
/// The best minimal-sample consensus is refit by least squares until the
/// inlier set is stable; points whose residual under the final fit exceeds the
/// threshold are then dropped one at a time (worst first) with a refit after
/// each removal, so every returned inlier satisfies the threshold.
pub fn ransac_affine(set: &CorrespondenceSet, cfg: &RansacConfig) -> Result<RansacResult> {
    cfg.validate()?;
    let pts = set.as_slice();
    let n = pts.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: n });
    }
    let required = cfg.min_inliers.max(3);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut bound = cfg.iterations;
    let mut iter = 0;
    while iter < bound {
        iter += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 3);
        let Some(model) = minimal_affine([&pts[idx.index(0)], &pts[idx.index(1)], &pts[idx.index(2)]]) else {
            continue;
        };
        let (count, err, mask) = score(&model, pts, cfg.threshold);
        let better = match &best {
            None => count > 0,
            Some((bc, be, _)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            bound = bound.min(adaptive_bound(count as f64 / n as f64, cfg.confidence).max(iter));
            best = Some((count, err, mask));
        }
    }
    let Some((count, _, mut mask)) = best else {
        return Err(Error::NoModel { inliers: 0, required });
    };
    if count < required {
        return Err(Error::NoModel { inliers: count, required });
    }

    for _ in 0..20 {
        let Ok(model) = fit_affine(&set.select(&mask)) else { break };
        let (c, _, next) = score(&model, pts, cfg.threshold);
        if next == mask || c < required {
            break;
        }
        mask = next;
    }

    loop {
        let kept = mask.iter().filter(|&&m| m).count();
        if kept < required {
            return Err(Error::NoModel { inliers: kept, required });
        }
        let model = fit_affine(&set.select(&mask))?;
        let worst = pts
            .iter()
            .enumerate()
            .filter(|(i, _)| mask[*i])
            .map(|(i, c)| (i, residual(&model, c)))
            .fold((usize::MAX, -1.0), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
        if worst.1 <= cfg.threshold {
            return Ok(RansacResult {
                model,
                inliers: mask,
                iterations_run: iter,
            });
        }
        mask[worst.0] = false;
    }
}
