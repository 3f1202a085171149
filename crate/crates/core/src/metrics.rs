//! Cropping ratio, distortion and stability scores.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameSequence;
use crate::geometry::{AffineTransform, Homography};
use crate::motion::{chain_transforms, FrameFeatures, MotionEstimator};

/// Singular values `(max, min)` of a 2x2 matrix, closed form.
pub fn singular_values_2x2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let e = 0.5 * (m[0][0] + m[1][1]);
    let f = 0.5 * (m[0][0] - m[1][1]);
    let g = 0.5 * (m[1][0] + m[0][1]);
    let h = 0.5 * (m[1][0] - m[0][1]);
    let q = e.hypot(h);
    let r = f.hypot(g);
    (q + r, (q - r).abs())
}

/// Eigenvalue magnitudes `(max, min)` of a 2x2 matrix. A complex pair has
/// equal magnitudes `sqrt(det)`.
pub fn eigen_magnitudes_2x2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let (a, b) = ((0.5 * tr + s).abs(), (0.5 * tr - s).abs());
        (a.max(b), a.min(b))
    } else {
        let r = det.abs().sqrt();
        (r, r)
    }
}

fn check_invertible(h: &Homography, i: usize) -> Result<()> {
    if h.det().abs() <= crate::geometry::SINGULAR_DET || !h.m.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::SingularMatrix { det: h.det() }.at_frame(i));
    }
    Ok(())
}

/// Per-frame `1 / sigma_1^2` of the linear block.
pub fn cropping_series(hs: &[Homography]) -> Result<Vec<f64>> {
    hs.iter()
        .enumerate()
        .map(|(i, h)| {
            check_invertible(h, i)?;
            let (s1, _) = singular_values_2x2(h.normalized().linear_part());
            Ok(1.0 / (s1 * s1))
        })
        .collect()
}

/// Mean over frames of `1 / sigma_1^2`.
pub fn cropping_ratio(hs: &[Homography]) -> Result<f64> {
    if hs.is_empty() {
        return Err(Error::invalid("no homographies"));
    }
    let s = cropping_series(hs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Per-frame small/large eigenvalue-magnitude ratio of the affine part.
pub fn distortion_series(hs: &[Homography]) -> Result<Vec<f64>> {
    hs.iter()
        .enumerate()
        .map(|(i, h)| {
            check_invertible(h, i)?;
            let a = h.normalized().affine_part();
            let c = a.coeffs;
            let (big, small) = eigen_magnitudes_2x2([[c[0], c[1]], [c[3], c[4]]]);
            if small <= 0.0 || !small.is_finite() {
                return Err(Error::SingularMatrix { det: a.det() }.at_frame(i));
            }
            Ok(small / big)
        })
        .collect()
}

/// Minimum over frames of the per-frame distortion ratio.
pub fn distortion_score(hs: &[Homography]) -> Result<f64> {
    if hs.is_empty() {
        return Err(Error::invalid("no homographies"));
    }
    Ok(distortion_series(hs)?.into_iter().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Inclusive FFT bin range counted as low frequency; bin 0 is never used.
    pub band_lo: usize,
    pub band_hi: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            grid_rows: 4,
            grid_cols: 4,
            band_lo: 1,
            band_hi: 5,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Config("stability grid must be nonempty".into()));
        }
        if self.band_lo == 0 || self.band_hi < self.band_lo {
            return Err(Error::Config(format!("invalid band [{}, {}]", self.band_lo, self.band_hi)));
        }
        Ok(())
    }

    /// Vertex positions: centers of the grid cells over a `w x h` frame.
    pub fn vertices(&self, h: usize, w: usize) -> Vec<(f64, f64)> {
        let mut v = Vec::with_capacity(self.grid_rows * self.grid_cols);
        for r in 0..self.grid_rows {
            for c in 0..self.grid_cols {
                v.push((
                    (c as f64 + 0.5) * w as f64 / self.grid_cols as f64,
                    (r as f64 + 0.5) * h as f64 / self.grid_rows as f64,
                ));
            }
        }
        v
    }
}

/// Per-vertex positions over time: `paths[i][t]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectories {
    pub paths: Vec<Vec<(f64, f64)>>,
    /// Frame pairs `(t, t+1)` whose motion fell back to identity, by `t`.
    pub fallbacks: Vec<usize>,
}

impl Trajectories {
    pub fn len(&self) -> usize {
        self.paths.first().map_or(0, |p| p.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trajectories of fixed points carried by per-step transforms, where
    /// `steps[t]` maps frame `t` positions to frame `t+1`.
    pub fn from_steps(vertices: &[(f64, f64)], steps: &[AffineTransform]) -> Self {
        let cum = chain_transforms(steps);
        let paths = vertices
            .iter()
            .map(|&v| {
                std::iter::once(v)
                    .chain(cum.iter().map(|a| a.apply(v.0, v.1)))
                    .collect()
            })
            .collect();
        Self {
            paths,
            fallbacks: Vec::new(),
        }
    }
}

fn frame_features(seq: &FrameSequence, est: &MotionEstimator) -> Vec<FrameFeatures> {
    seq.frames().par_iter().map(|f| est.features(f)).collect()
}

/// Track the grid vertices through chained inter-frame affines.
pub fn vertex_trajectories(seq: &FrameSequence, cfg: &StabilityConfig, est: &MotionEstimator) -> Result<Trajectories> {
    cfg.validate()?;
    let feats = frame_features(seq, est);
    let results: Vec<Option<AffineTransform>> = (0..seq.len().saturating_sub(1))
        .into_par_iter()
        .map(|t| est.estimate_features(&feats[t], &feats[t + 1]).ok().map(|e| e.affine))
        .collect();
    let mut fallbacks = Vec::new();
    let steps: Vec<AffineTransform> = results
        .into_iter()
        .enumerate()
        .map(|(t, r)| {
            r.unwrap_or_else(|| {
                fallbacks.push(t);
                AffineTransform::IDENTITY
            })
        })
        .collect();
    let (h, w) = seq.dims();
    let mut tr = Trajectories::from_steps(&cfg.vertices(h, w), &steps);
    tr.fallbacks = fallbacks;
    Ok(tr)
}

/// Power split of a mean-removed signal: `(band, out_of_band, total_ac)`,
/// counting both the positive and mirrored bins.
pub fn spectrum_split(signal: &[f64], band_lo: usize, band_hi: usize) -> (f64, f64, f64) {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut band = 0.0;
    let mut out = 0.0;
    for (k, c) in buf.iter().enumerate().skip(1) {
        let folded = k.min(n - k);
        let p = c.norm_sqr();
        if (band_lo..=band_hi).contains(&folded) {
            band += p;
        } else {
            out += p;
        }
    }
    (band, out, band + out)
}

/// Fraction of AC power in the band; a motionless signal scores 1.
pub fn band_fraction(signal: &[f64], band_lo: usize, band_hi: usize) -> f64 {
    let (band, _, total) = spectrum_split(signal, band_lo, band_hi);
    let scale: f64 = signal.iter().map(|v| v * v).sum::<f64>().max(1.0) * signal.len() as f64;
    if total <= 1e-20 * scale {
        1.0
    } else {
        (band / total).clamp(0.0, 1.0)
    }
}

/// Per-vertex scores, each the mean of its x and y band fractions.
pub fn stability_series(tr: &Trajectories, cfg: &StabilityConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if tr.paths.is_empty() {
        return Err(Error::invalid("no trajectories"));
    }
    let n = tr.len();
    if n < 2 * cfg.band_hi || n < 2 {
        return Err(Error::invalid(format!(
            "trajectories of length {n} are too short for band [{}, {}]",
            cfg.band_lo, cfg.band_hi
        )));
    }
    tr.paths
        .iter()
        .map(|p| {
            if p.len() != n {
                return Err(Error::dims(format!("length {n}"), format!("length {}", p.len())));
            }
            let xs: Vec<f64> = p.iter().map(|q| q.0).collect();
            let ys: Vec<f64> = p.iter().map(|q| q.1).collect();
            Ok(0.5 * (band_fraction(&xs, cfg.band_lo, cfg.band_hi) + band_fraction(&ys, cfg.band_lo, cfg.band_hi)))
        })
        .collect()
}

pub fn stability_score(tr: &Trajectories, cfg: &StabilityConfig) -> Result<f64> {
    let s = stability_series(tr, cfg)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Which frame pairs feed the cropping and distortion homographies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Each input frame against its stabilized counterpart.
    #[default]
    InputOutput,
    /// Consecutive stabilized frames.
    Consecutive,
}

#[derive(Clone, Debug, Default)]
pub struct EvaluateConfig {
    pub pairing: Pairing,
    pub stability: StabilityConfig,
    pub estimator: MotionEstimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cropping: f64,
    pub distortion: f64,
    pub stability: f64,
    pub cropping_series: Vec<f64>,
    pub distortion_series: Vec<f64>,
    pub stability_series: Vec<f64>,
    pub pairing: Pairing,
    pub trajectory_fallbacks: Vec<usize>,
}

/// Metrics from precomputed homographies and stabilized trajectories.
pub fn evaluate_with_homographies(
    hs: &[Homography],
    trajectories: &Trajectories,
    cfg: &StabilityConfig,
    pairing: Pairing,
) -> Result<MetricsReport> {
    if hs.is_empty() {
        return Err(Error::invalid("no homographies"));
    }
    let cs = cropping_series(hs)?;
    let ds = distortion_series(hs)?;
    let ss = stability_series(trajectories, cfg)?;
    Ok(MetricsReport {
        cropping: cs.iter().sum::<f64>() / cs.len() as f64,
        distortion: ds.iter().cloned().fold(f64::INFINITY, f64::min),
        stability: ss.iter().sum::<f64>() / ss.len() as f64,
        cropping_series: cs,
        distortion_series: ds,
        stability_series: ss,
        pairing,
        trajectory_fallbacks: trajectories.fallbacks.clone(),
    })
}

/// Estimate homographies and trajectories from pixels, then score.
pub fn evaluate(original: &FrameSequence, stabilized: &FrameSequence, cfg: &EvaluateConfig) -> Result<MetricsReport> {
    if original.len() != stabilized.len() {
        return Err(Error::dims(
            format!("{} stabilized frames", original.len()),
            format!("{} stabilized frames", stabilized.len()),
        ));
    }
    let est = &cfg.estimator;
    let stab_feats = frame_features(stabilized, est);
    let hs: Vec<Homography> = match cfg.pairing {
        Pairing::InputOutput => {
            let orig_feats = frame_features(original, est);
            (0..original.len())
                .into_par_iter()
                .map(|t| {
                    est.estimate_features(&orig_feats[t], &stab_feats[t])
                        .map(|e| e.affine.to_homography())
                        .map_err(|e| e.at_frame(t))
                })
                .collect::<Result<_>>()?
        }
        Pairing::Consecutive => {
            if stabilized.len() < 2 {
                return Err(Error::invalid("consecutive pairing needs at least two frames"));
            }
            (0..stabilized.len() - 1)
                .into_par_iter()
                .map(|t| {
                    est.estimate_features(&stab_feats[t], &stab_feats[t + 1])
                        .map(|e| e.affine.to_homography())
                        .map_err(|e| e.at_frame(t))
                })
                .collect::<Result<_>>()?
        }
    };
    let steps: Vec<Option<AffineTransform>> = (0..stabilized.len().saturating_sub(1))
        .into_par_iter()
        .map(|t| est.estimate_features(&stab_feats[t], &stab_feats[t + 1]).ok().map(|e| e.affine))
        .collect();
    let mut fallbacks = Vec::new();
    let steps: Vec<AffineTransform> = steps
        .into_iter()
        .enumerate()
        .map(|(t, s)| {
            s.unwrap_or_else(|| {
                fallbacks.push(t);
                AffineTransform::IDENTITY
            })
        })
        .collect();
    let (h, w) = stabilized.dims();
    let mut tr = Trajectories::from_steps(&cfg.stability.vertices(h, w), &steps);
    tr.fallbacks = fallbacks;
    evaluate_with_homographies(&hs, &tr, &cfg.stability, cfg.pairing)
}
