//! The online stabilization loop.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::stabilizer::crop::{compute_crop_region, CropRegion};
use crate::stabilizer::predictor::{frame_fingerprint, WarpPredictor, WindowView};
use crate::stabilizer::window::{SlidingWindow, SlidingWindowConfig};
use crate::warp::{warp_crop_resize, WarpField};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// One region valid for every output field.
    #[default]
    Global,
    /// Per frame, the region valid for the trailing window of fields.
    Online,
    /// No cropping; uncovered pixels stay black.
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilizerConfig {
    pub window: SlidingWindowConfig,
    pub crop: CropMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub index: usize,
    pub window: Vec<usize>,
    pub max_displacement_px: f64,
    pub mean_displacement_px: f64,
    pub fallback_pairs: Vec<usize>,
    pub blended_next_field: bool,
    pub predict_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub resize_s: f64,
    pub predict_s: f64,
    pub render_s: f64,
    pub total_s: f64,
}

impl Timings {
    pub fn fps(&self, frames: usize) -> f64 {
        if self.total_s > 0.0 {
            frames as f64 / self.total_s
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug)]
pub struct StabilizeReport {
    pub frames: FrameSequence,
    /// Fields at processing size, one per output frame.
    pub fields: Vec<WarpField>,
    pub regions: Vec<CropRegion>,
    pub diagnostics: Vec<FrameDiagnostics>,
    pub timings: Timings,
}

/// Resized copies of the frames currently referenced by the window.
struct ResizeCache {
    size: (usize, usize),
    map: HashMap<usize, (Arc<Frame>, u64)>,
}

impl ResizeCache {
    fn sync(&mut self, seq: &FrameSequence, indices: &[usize]) -> Result<()> {
        self.map.retain(|k, _| indices.contains(k));
        let mut missing: Vec<usize> = indices.iter().copied().filter(|k| !self.map.contains_key(k)).collect();
        missing.sort_unstable();
        missing.dedup();
        let (h, w) = self.size;
        let fresh: Vec<(usize, (Arc<Frame>, u64))> = missing
            .par_iter()
            .map(|&k| {
                let f = &seq.frames()[k];
                let r = if f.dims() == (h, w) { f.clone() } else { f.resize(h, w)? };
                let key = frame_fingerprint(&r);
                Ok((k, (Arc::new(r), key)))
            })
            .collect::<Result<_>>()?;
        self.map.extend(fresh);
        Ok(())
    }
}

/// Run the sliding-window loop and return frames plus per-step records.
pub fn stabilize_with_report(seq: &FrameSequence, predictor: &dyn WarpPredictor, cfg: &StabilizerConfig) -> Result<StabilizeReport> {
    cfg.window.validate()?;
    let n = seq.len();
    if n == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    let start = Instant::now();
    let mut timings = Timings::default();
    let theta = cfg.window.theta;
    let mut window = SlidingWindow::new(n, theta)?;
    let mut cache = ResizeCache {
        size: (cfg.window.proc_height, cfg.window.proc_width),
        map: HashMap::new(),
    };
    let mut fields: Vec<WarpField> = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    let mut carried: Option<WarpField> = None;

    while let Some(step) = window.advance() {
        let i = step - 1;
        let indices = window.indices();
        let t0 = Instant::now();
        cache.sync(seq, &indices).map_err(|e| e.at_frame(i))?;
        timings.resize_s += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let frames: Vec<&Frame> = indices.iter().map(|k| cache.map[k].0.as_ref()).collect();
        let keys: Vec<u64> = indices.iter().map(|k| cache.map[k].1).collect();
        let view = WindowView {
            frames: &frames,
            indices: &indices,
            center: theta,
            fingerprints: Some(&keys),
        };
        let pred = predictor.predict(&view).map_err(|e| e.at_frame(i))?;
        if pred.field.dims() != cache.size {
            return Err(Error::dims(
                format!("{}x{} field", cache.size.0, cache.size.1),
                format!("{}x{} field", pred.field.height(), pred.field.width()),
            )
            .at_frame(i));
        }
        let blended = carried.is_some();
        let field = match carried.take() {
            Some(prev) => pred.field.average(&prev)?,
            None => pred.field,
        };
        carried = pred.next_field;
        let elapsed = t1.elapsed().as_secs_f64();
        timings.predict_s += elapsed;

        diagnostics.push(FrameDiagnostics {
            index: i,
            window: indices,
            max_displacement_px: field.max_displacement_px(),
            mean_displacement_px: field.mean_displacement_px(),
            fallback_pairs: pred.diagnostics.fallback_pairs,
            blended_next_field: blended,
            predict_ms: elapsed * 1e3,
        });
        fields.push(field);
    }

    let t2 = Instant::now();
    let regions: Vec<CropRegion> = match cfg.crop {
        CropMode::Off => vec![CropRegion::FULL; n],
        CropMode::Global => {
            let refs: Vec<&WarpField> = fields.iter().collect();
            vec![compute_crop_region(&refs)?; n]
        }
        CropMode::Online => {
            let len = cfg.window.window_len();
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let refs: Vec<&WarpField> = fields[i.saturating_sub(len - 1)..=i].iter().collect();
                    compute_crop_region(&refs).map_err(|e| e.at_frame(i))
                })
                .collect::<Result<_>>()?
        }
    };
    let (h, w) = seq.dims();
    let out: Vec<Frame> = (0..n)
        .into_par_iter()
        .map(|i| warp_crop_resize(&seq.frames()[i], &fields[i], regions[i].as_f32(), h, w).map_err(|e| e.at_frame(i)))
        .collect::<Result<_>>()?;
    timings.render_s = t2.elapsed().as_secs_f64();
    timings.total_s = start.elapsed().as_secs_f64();

    Ok(StabilizeReport {
        frames: FrameSequence::new(out)?,
        fields,
        regions,
        diagnostics,
        timings,
    })
}

pub fn stabilize_sequence(seq: &FrameSequence, predictor: &dyn WarpPredictor, cfg: &StabilizerConfig) -> Result<FrameSequence> {
    Ok(stabilize_with_report(seq, predictor, cfg)?.frames)
}
