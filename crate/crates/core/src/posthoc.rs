//! Post-hoc grounding from a temporal attention trace.
//!
//! The trace is smoothed, min-max normalized, and a window is grown around
//! the highest-scoring frame. A neighbor joins while it scores at least the
//! mean normalized score and its center lies within the distance cap of the
//! pivot's center. Window ends are frame-bin edges.

use crate::error::{Error, Result};
use crate::gaussian::{frame_times, FrameGrid};
use crate::scalar::Scalar;
use crate::temporal::TemporalSegment;

pub const DEFAULT_SMOOTH: usize = 3;
pub const DEFAULT_DIST_CAP_S: f64 = 10.0;

/// Pooling distribution over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    scores: Vec<T>,
    grid: FrameGrid<T>,
}

impl<T: Scalar> AttentionTrace<T> {
    pub fn new(scores: Vec<T>, grid: FrameGrid<T>) -> Result<Self> {
        if scores.len() != grid.n_frames() {
            return Err(Error::ShapeMismatch(format!("trace has {} scores for {} frames", scores.len(), grid.n_frames())));
        }
        if scores.iter().any(|s| !(*s >= T::zero()) || !s.is_finite()) {
            return Err(Error::Config("attention scores must be finite and non-negative".into()));
        }
        let sum: T = scores.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-6).max(T::epsilon() * T::lit(scores.len() as f64 * 4.0)) {
            return Err(Error::Config(format!("attention scores sum to {sum}, expected 1")));
        }
        Ok(Self { scores, grid })
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn grid(&self) -> &FrameGrid<T> {
        &self.grid
    }
}

/// Result of one extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction<T> {
    pub window: TemporalSegment<T>,
    pub pivot: usize,
    /// Set when the smoothed trace is flat: no peak exists and the window is
    /// the first frame's bin.
    pub degenerate: bool,
}

/// Centered moving average; windows are truncated at the sequence ends.
pub fn smooth<T: Scalar>(scores: &[T], width: usize) -> Vec<T> {
    let half = width / 2;
    let n = scores.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            scores[lo..hi].iter().copied().sum::<T>() / T::lit((hi - lo) as f64)
        })
        .collect()
}

/// Min-max normalization; `None` for a flat input. Spreads at rounding level
/// (as left by smoothing a rescaled flat trace) count as flat.
fn min_max<T: Scalar>(xs: &[T]) -> Option<Vec<T>> {
    let lo = xs.iter().copied().fold(T::infinity(), T::min);
    let hi = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    let floor = T::epsilon() * T::lit(64.0) * hi.abs().max(lo.abs());
    (span > floor).then(|| xs.iter().map(|&x| (x - lo) / span).collect())
}

fn check_width(width: usize) -> Result<()> {
    if width == 0 || width % 2 == 0 {
        return Err(Error::Config(format!("smoothing window must be odd and positive, got {width}")));
    }
    Ok(())
}

/// Mean of the smoothed, min-max normalized trace. Zero for a flat trace.
pub fn dynamic_threshold<T: Scalar>(scores: &[T], smooth_w: usize) -> Result<T> {
    check_width(smooth_w)?;
    Ok(match min_max(&smooth(scores, smooth_w)) {
        Some(norm) => norm.iter().copied().sum::<T>() / T::lit(norm.len() as f64),
        None => T::zero(),
    })
}

pub fn extract_window<T: Scalar>(trace: &AttentionTrace<T>, smooth_w: usize, dist_cap_s: T) -> Result<Extraction<T>> {
    extract_from_scores(&trace.scores, &trace.grid, smooth_w, dist_cap_s)
}

/// Same as [`extract_window`] for raw, not necessarily normalized scores.
pub fn extract_from_scores<T: Scalar>(scores: &[T], grid: &FrameGrid<T>, smooth_w: usize, dist_cap_s: T) -> Result<Extraction<T>> {
    check_width(smooth_w)?;
    if scores.len() != grid.n_frames() {
        return Err(Error::ShapeMismatch(format!("trace has {} scores for {} frames", scores.len(), grid.n_frames())));
    }
    if !(dist_cap_s >= T::zero()) {
        return Err(Error::Config(format!("distance cap must be non-negative, got {dist_cap_s}")));
    }
    let Some(norm) = min_max(&smooth(scores, smooth_w)) else {
        return Ok(Extraction { window: grid.bin(0), pivot: 0, degenerate: true });
    };
    let n = norm.len();
    let threshold = norm.iter().copied().sum::<T>() / T::lit(n as f64);
    // Rounding slack so that affine rescaling of the raw trace cannot flip a
    // borderline comparison or a tie for the maximum.
    let slack = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
    // First maximal index; the normalized maximum is 1.
    let pivot = (0..n).find(|&i| norm[i] >= T::one() - slack).unwrap_or(0);
    let times = frame_times(grid);
    let admit = |j: usize| norm[j] >= threshold - slack && (times[j] - times[pivot]).abs() <= dist_cap_s;

    let mut lo = pivot;
    while lo > 0 && admit(lo - 1) {
        lo -= 1;
    }
    let mut hi = pivot;
    while hi + 1 < n && admit(hi + 1) {
        hi += 1;
    }
    let window = TemporalSegment::new(grid.bin(lo).start(), grid.bin(hi).end())?;
    Ok(Extraction { window, pivot, degenerate: false })
}
