//! Warp predictors: identity, classical trajectory smoothing, network.

use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::AffineTransform;
use crate::motion::{FrameFeatures, MotionEstimator};
use crate::network::{tunet_forward, tunet_param_specs, window_tensor, TunetConfig, WeightStore};
use crate::warp::{affine_to_warp_field, WarpField};

/// What a predictor sees at one step.
pub struct WindowView<'a> {
    /// Window frames at processing size, in window order.
    pub frames: &'a [&'a Frame],
    /// Source frame index of each slot.
    pub indices: &'a [usize],
    /// Slot of the frame being stabilized.
    pub center: usize,
    /// Precomputed [`frame_fingerprint`] per slot, if the caller has them.
    pub fingerprints: Option<&'a [u64]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionDiagnostics {
    /// Window slot pairs `(k, k+1)` whose motion fell back to identity, by `k`.
    pub fallback_pairs: Vec<usize>,
    pub note: Option<String>,
}

#[derive(Clone, Debug)]
pub struct WarpPrediction {
    /// Sampling field for the center frame, at processing size.
    pub field: WarpField,
    /// Optional field for the following frame, blended in at the next step.
    pub next_field: Option<WarpField>,
    pub diagnostics: PredictionDiagnostics,
}

/// Maps a window of frames to a sampling field for its center frame.
/// Implementations must be deterministic and callable from several threads.
pub trait WarpPredictor: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, view: &WindowView<'_>) -> Result<WarpPrediction>;
}

fn check_view(view: &WindowView<'_>) -> Result<(usize, usize)> {
    let first = view.frames.first().ok_or_else(|| Error::invalid("empty window"))?;
    if view.indices.len() != view.frames.len() || view.center >= view.frames.len() {
        return Err(Error::invalid("window indices inconsistent with frames"));
    }
    Ok(first.dims())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPredictor;

impl WarpPredictor for IdentityPredictor {
    fn name(&self) -> &str {
        "identity"
    }

    fn predict(&self, view: &WindowView<'_>) -> Result<WarpPrediction> {
        let (h, w) = check_view(view)?;
        Ok(WarpPrediction {
            field: WarpField::identity(h, w)?,
            next_field: None,
            diagnostics: PredictionDiagnostics::default(),
        })
    }
}

/// Content hash of a frame, used as a memo key.
pub fn frame_fingerprint(f: &Frame) -> u64 {
    let mut acc = 0u64;
    for pair in f.data().chunks(2) {
        let x = pair.iter().fold(0u64, |a, v| (a << 32) | v.to_bits() as u64);
        acc = (acc.rotate_left(5) ^ x).wrapping_mul(0x517c_c1b7_2722_0a95);
    }
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (f.dims(), acc).hash(&mut h);
    h.finish()
}

/// Bounded memo table with first-in-first-out eviction.
struct Memo<K, V> {
    cap: usize,
    map: HashMap<K, V>,
    order: VecDeque<K>,
}

impl<K: Hash + Eq + Clone, V: Clone> Memo<K, V> {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            map: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn get(&self, k: &K) -> Option<V> {
        self.map.get(k).cloned()
    }

    fn put(&mut self, k: K, v: V) {
        if self.map.insert(k.clone(), v).is_none() {
            self.order.push_back(k);
            while self.order.len() > self.cap {
                if let Some(old) = self.order.pop_front() {
                    self.map.remove(&old);
                }
            }
        }
    }
}

/// Trajectory smoothing over the window.
///
/// Adjacent window frames are related by estimated affines `M_k` (frame `k`
/// pixels to frame `k+1`). Chaining gives poses `P_k` relative to the first
/// slot; each pose coefficient is Gaussian-averaged around the center slot
/// to get `S_c`, and the center frame is resampled through `P_c ∘ S_c⁻¹`.
///
/// Only the chronological prefix of the window is used, so tail slots that
/// repeat earlier frames do not enter the trajectory.
pub struct ClassicalPredictor {
    pub sigma: f64,
    pub estimator: MotionEstimator,
    features: Mutex<Memo<u64, Arc<FrameFeatures>>>,
    pairs: Mutex<Memo<(u64, u64), Option<AffineTransform>>>,
}

impl std::fmt::Debug for ClassicalPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassicalPredictor").field("sigma", &self.sigma).finish()
    }
}

impl Default for ClassicalPredictor {
    fn default() -> Self {
        Self::new(8.0, MotionEstimator::default())
    }
}

impl ClassicalPredictor {
    pub fn new(sigma: f64, estimator: MotionEstimator) -> Self {
        Self {
            sigma,
            estimator,
            features: Mutex::new(Memo::new(96)),
            pairs: Mutex::new(Memo::new(256)),
        }
    }

    fn features(&self, key: u64, f: &Frame) -> Arc<FrameFeatures> {
        if let Some(v) = self.features.lock().expect("feature cache poisoned").get(&key) {
            return v;
        }
        let v = Arc::new(self.estimator.features(f));
        self.features.lock().expect("feature cache poisoned").put(key, v.clone());
        v
    }

    /// Affine from frame `a` to frame `b`, or `None` when estimation fails.
    fn pair(&self, ka: u64, a: &Frame, kb: u64, b: &Frame) -> Option<AffineTransform> {
        if ka == kb {
            return Some(AffineTransform::IDENTITY);
        }
        if let Some(v) = self.pairs.lock().expect("pair cache poisoned").get(&(ka, kb)) {
            return v;
        }
        let fa = self.features(ka, a);
        let fb = self.features(kb, b);
        let v = self.estimator.estimate_features(&fa, &fb).ok().map(|e| e.affine);
        self.pairs.lock().expect("pair cache poisoned").put((ka, kb), v);
        v
    }

    /// Smoothed and raw center poses for a run of frames.
    pub fn smooth_poses(&self, frames: &[&Frame], center: usize) -> (AffineTransform, AffineTransform, Vec<usize>) {
        let keys: Vec<u64> = frames.iter().map(|f| frame_fingerprint(f)).collect();
        self.smooth_poses_keyed(frames, &keys, center)
    }

    fn smooth_poses_keyed(&self, frames: &[&Frame], keys: &[u64], center: usize) -> (AffineTransform, AffineTransform, Vec<usize>) {
        let mut fallbacks = Vec::new();
        let mut poses = Vec::with_capacity(frames.len());
        let mut acc = AffineTransform::IDENTITY;
        poses.push(acc);
        for k in 0..frames.len() - 1 {
            let m = self.pair(keys[k], frames[k], keys[k + 1], frames[k + 1]).unwrap_or_else(|| {
                fallbacks.push(k);
                AffineTransform::IDENTITY
            });
            acc = m.compose(&acc);
            poses.push(acc);
        }
        let smoothed = gaussian_pose(&poses, center, self.sigma);
        (smoothed, poses[center], fallbacks)
    }
}

/// Gaussian-weighted average of pose coefficients around `center`.
pub fn gaussian_pose(poses: &[AffineTransform], center: usize, sigma: f64) -> AffineTransform {
    let mut acc = [0.0; 6];
    let mut total = 0.0;
    for (k, p) in poses.iter().enumerate() {
        let d = k as f64 - center as f64;
        let wgt = if sigma > 0.0 { (-0.5 * d * d / (sigma * sigma)).exp() } else { (k == center) as u8 as f64 };
        total += wgt;
        for j in 0..6 {
            acc[j] += wgt * p.coeffs[j];
        }
    }
    AffineTransform {
        coeffs: acc.map(|v| v / total),
    }
}

impl WarpPredictor for ClassicalPredictor {
    fn name(&self) -> &str {
        "classical"
    }

    fn predict(&self, view: &WindowView<'_>) -> Result<WarpPrediction> {
        let (h, w) = check_view(view)?;
        let mut end = view.center + 1;
        while end < view.indices.len() && view.indices[end] >= view.indices[end - 1] {
            end += 1;
        }
        let keys: Vec<u64> = match view.fingerprints {
            Some(k) if k.len() == view.frames.len() => k[..end].to_vec(),
            _ => view.frames[..end].iter().map(|f| frame_fingerprint(f)).collect(),
        };
        let (smoothed, raw, fallbacks) = self.smooth_poses_keyed(&view.frames[..end], &keys, view.center);
        let sampling = match smoothed.inverse() {
            Ok(inv) => raw.compose(&inv),
            Err(_) => AffineTransform::IDENTITY,
        };
        Ok(WarpPrediction {
            field: affine_to_warp_field(&sampling, h, w)?,
            next_field: None,
            diagnostics: PredictionDiagnostics {
                fallback_pairs: fallbacks,
                note: None,
            },
        })
    }
}

/// Runs the generator on each window. Needs a window of `2Δt+1` frames
/// centered at slot `Δt`; frames are resized to the network input and the two
/// fields are resized back to processing size.
pub struct TunetPredictor {
    cfg: TunetConfig,
    weights: Arc<WeightStore>,
}

impl std::fmt::Debug for TunetPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TunetPredictor").field("input_size", &self.cfg.input_size).field("delta_t", &self.cfg.delta_t).finish()
    }
}

impl TunetPredictor {
    /// Fails when the store does not match the parameters `cfg` implies.
    pub fn new(cfg: TunetConfig, weights: Arc<WeightStore>) -> Result<Self> {
        cfg.validate()?;
        weights.check_specs(&tunet_param_specs(&cfg)?)?;
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> &TunetConfig {
        &self.cfg
    }
}

impl WarpPredictor for TunetPredictor {
    fn name(&self) -> &str {
        "tunet"
    }

    fn predict(&self, view: &WindowView<'_>) -> Result<WarpPrediction> {
        let (h, w) = check_view(view)?;
        let l = self.cfg.sequence_len();
        if view.frames.len() != l || view.center != self.cfg.delta_t {
            return Err(Error::Config(format!(
                "network expects a window of {l} frames centered at slot {}, got {} frames centered at {}; set theta to {}",
                self.cfg.delta_t,
                view.frames.len(),
                view.center,
                self.cfg.delta_t
            )));
        }
        let n = self.cfg.input_size;
        let resized: Vec<Frame>;
        let frames: Vec<&Frame> = if (h, w) == (n, n) {
            view.frames.to_vec()
        } else {
            resized = view.frames.iter().map(|f| f.resize(n, n)).collect::<Result<_>>()?;
            resized.iter().collect()
        };
        let input = window_tensor(&frames, &self.cfg)?;
        let (wt, wt1) = tunet_forward(&input, &self.cfg, &self.weights)?;
        let fit = |f: WarpField| if f.dims() == (h, w) { Ok(f) } else { f.resize(h, w) };
        Ok(WarpPrediction {
            field: fit(wt)?,
            next_field: Some(fit(wt1)?),
            diagnostics: PredictionDiagnostics::default(),
        })
    }
}
