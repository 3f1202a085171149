//! Sliding-window bookkeeping for online stabilization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlidingWindowConfig {
    /// Look-ahead and look-behind in frames; the window holds `2θ+1` frames.
    pub theta: usize,
    pub proc_height: usize,
    pub proc_width: usize,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        Self {
            theta: 15,
            proc_height: 256,
            proc_width: 256,
        }
    }
}

impl SlidingWindowConfig {
    pub fn window_len(&self) -> usize {
        2 * self.theta + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta < 1 {
            return Err(Error::Config("theta must be >= 1".into()));
        }
        if self.proc_height < 2 || self.proc_width < 2 {
            return Err(Error::Config("processing size must be at least 2x2".into()));
        }
        Ok(())
    }
}

/// Window of 0-based frame indices.
///
/// Starts as `θ` copies of frame 0 followed by frames `0..=θ` (clamped to the
/// last frame). Step 1 uses that state unchanged; each later step `i` (1-based)
/// drops the front and appends frame `i+θ` while `i <= n-θ`, otherwise frame
/// `i` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlidingWindow {
    theta: usize,
    n: usize,
    step: usize,
    slots: VecDeque<usize>,
}

impl SlidingWindow {
    pub fn new(n: usize, theta: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        if theta == 0 {
            return Err(Error::Config("theta must be >= 1".into()));
        }
        let slots = std::iter::repeat_n(0, theta)
            .chain((0..=theta).map(|k| k.min(n - 1)))
            .collect();
        Ok(Self { theta, n, step: 0, slots })
    }

    /// Move to the next step and return its 1-based number.
    pub fn advance(&mut self) -> Option<usize> {
        if self.step >= self.n {
            return None;
        }
        self.step += 1;
        let i = self.step;
        if i != 1 {
            self.slots.pop_front();
            if i + self.theta <= self.n {
                self.slots.push_back(i + self.theta - 1);
            } else {
                self.slots.push_back(i - 1);
            }
        }
        Some(i)
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn indices(&self) -> Vec<usize> {
        self.slots.iter().copied().collect()
    }

    pub fn center(&self) -> usize {
        self.slots[self.theta]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Full index trace: entry `i-1` is the window used at step `i`.
pub fn window_trace(n: usize, theta: usize) -> Result<Vec<Vec<usize>>> {
    let mut w = SlidingWindow::new(n, theta)?;
    let mut out = Vec::with_capacity(n);
    while w.advance().is_some() {
        out.push(w.indices());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription with 1-based frame numbers and a Vec as the list.
    fn pseudocode(n: usize, theta: usize) -> Vec<Vec<usize>> {
        let mut window: Vec<usize> = vec![1; theta];
        for k in 1..=theta + 1 {
            window.push(k.min(n));
        }
        let mut trace = Vec::new();
        for i in 1..=n {
            if i != 1 && (i as isize) <= n as isize - theta as isize {
                window.remove(0);
                window.push(i + theta);
            } else if i != 1 {
                window.remove(0);
                window.push(i);
            }
            trace.push(window.iter().map(|v| v - 1).collect());
        }
        trace
    }

    #[test]
    fn trace_matches_pseudocode() {
        for n in [1, 2, 15, 16, 17, 31, 40, 100] {
            assert_eq!(window_trace(n, 15).unwrap(), pseudocode(n, 15), "n={n}");
        }
        for theta in [1, 2, 5] {
            assert_eq!(window_trace(23, theta).unwrap(), pseudocode(23, theta));
        }
    }

    #[test]
    fn single_frame_window_is_all_copies() {
        let t = window_trace(1, 15).unwrap();
        assert_eq!(t, vec![vec![0; 31]]);
    }

    #[test]
    fn hand_trace_for_forty_frames() {
        let t = window_trace(40, 15).unwrap();
        // step 1: fifteen copies then frames 1..16
        let mut s1 = vec![0; 15];
        s1.extend(0..16);
        assert_eq!(t[0], s1);
        // step 20: frames 5..35 (1-based), centered on 20
        assert_eq!(t[19], (4..35).collect::<Vec<_>>());
        assert_eq!(t[19][15], 19);
        // step 40: after step 25 the tail repeats the current frame
        let t40 = &t[39];
        assert_eq!(t40.len(), 31);
        assert_eq!(t40[15], 39);
        assert_eq!(&t40[..16], &(24..40).collect::<Vec<_>>()[..]);
        assert_eq!(&t40[16..], &(25..40).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn center_tracks_current_frame() {
        for n in [1, 16, 31, 40, 100] {
            for (i, w) in window_trace(n, 15).unwrap().iter().enumerate() {
                assert_eq!(w[15], i);
                assert!(w.iter().all(|&k| k <= (i + 15).min(n - 1)));
            }
        }
    }
}
