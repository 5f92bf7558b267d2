//! Differentiable Gaussian temporal masks.
//!
//! A mask is a `(mu, sigma)` pair on normalized time `[0, 1]`. Its weight
//! over frame `i` is the peak-1 Gaussian `exp(-0.5 * ((x_i - mu) / sigma)^2)`
//! evaluated at the frame's normalized center `x_i = (i + 0.5) / n`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::temporal::{clamp_to_video, TemporalSegment, VideoExtent};

/// Lower bound on the normalized spread. Keeps `sigma^-3` gradient terms bounded.
pub const SIGMA_MIN: f64 = 0.01;

/// Default number of uniformly sampled frames per video.
pub const DEFAULT_FRAMES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMask<T> {
    mu: T,
    sigma: T,
}

impl<T: Scalar> GaussianMask<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self> {
        if !(mu >= T::zero() && mu <= T::one()) {
            return Err(Error::Config(format!("mask center {mu} outside [0, 1]")));
        }
        if !(sigma >= T::lit(SIGMA_MIN) && sigma <= T::one()) {
            return Err(Error::Config(format!("mask spread {sigma} outside [{SIGMA_MIN}, 1]")));
        }
        Ok(Self { mu, sigma })
    }

    /// Squashes unconstrained head outputs into the parameter box:
    /// `mu = logistic(z_mu)`, `sigma = SIGMA_MIN + (1 - SIGMA_MIN) * logistic(z_sigma)`.
    pub fn from_logits(z_mu: T, z_sigma: T) -> Self {
        let smin = T::lit(SIGMA_MIN);
        let mu = z_mu.logistic();
        let sigma = smin + (T::one() - smin) * z_sigma.logistic();
        // Rounding can land a hair outside the box in f32.
        Self { mu: mu.max(T::zero()).min(T::one()), sigma: sigma.max(smin).min(T::one()) }
    }

    #[inline]
    pub fn mu(&self) -> T {
        self.mu
    }

    #[inline]
    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Weight at a single normalized position.
    #[inline]
    pub fn weight_at(&self, x: T) -> T {
        let z = (x - self.mu) / self.sigma;
        (T::lit(-0.5) * z * z).exp().max(T::min_positive_value())
    }
}

/// Uniform frame sampling of one video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid<T> {
    n_frames: usize,
    extent: VideoExtent<T>,
}

impl<T: Scalar> FrameGrid<T> {
    pub fn new(n_frames: usize, extent: VideoExtent<T>) -> Result<Self> {
        if n_frames < 2 {
            return Err(Error::Config(format!("frame grid needs at least 2 frames, got {n_frames}")));
        }
        Ok(Self { n_frames, extent })
    }

    #[inline]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[inline]
    pub fn extent(&self) -> VideoExtent<T> {
        self.extent
    }

    /// Width of one frame bin in seconds.
    pub fn bin_width(&self) -> T {
        self.extent.duration() / T::lit(self.n_frames as f64)
    }

    /// Normalized bin centers `(i + 0.5) / n`.
    pub fn positions(&self) -> Array1<T> {
        let n = T::lit(self.n_frames as f64);
        Array1::from_iter((0..self.n_frames).map(|i| (T::lit(i as f64) + T::lit(0.5)) / n))
    }

    /// The `[i * d / n, (i + 1) * d / n]` bin of frame `i`.
    pub fn bin(&self, i: usize) -> TemporalSegment<T> {
        let w = self.bin_width();
        let start = T::lit(i as f64) * w;
        let end = if i + 1 == self.n_frames { self.extent.duration() } else { T::lit((i + 1) as f64) * w };
        TemporalSegment::new(start, end).expect("frame bins have positive width")
    }
}

/// Frame center times in seconds: `(i + 0.5) * d / n`.
pub fn frame_times<T: Scalar>(grid: &FrameGrid<T>) -> Array1<T> {
    let d = grid.extent.duration();
    grid.positions().mapv(|x| x * d)
}

/// Per-frame mask weights in `(0, 1]`.
pub fn mask_weights<T: Scalar>(mask: &GaussianMask<T>, grid: &FrameGrid<T>) -> Array1<T> {
    grid.positions().mapv(|x| mask.weight_at(x))
}

/// Chain rule from per-frame weight gradients to `(dL/dmu, dL/dsigma)`.
///
/// `dG_i/dmu = G_i (x_i - mu) / sigma^2`, `dG_i/dsigma = G_i (x_i - mu)^2 / sigma^3`.
pub fn mask_gradients<T: Scalar>(
    mask: &GaussianMask<T>,
    grid: &FrameGrid<T>,
    upstream: ArrayView1<'_, T>,
) -> Result<(T, T)> {
    if upstream.len() != grid.n_frames() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient has {} entries for {} frames",
            upstream.len(),
            grid.n_frames()
        )));
    }
    Ok(weight_grads(mask, grid.positions().view(), upstream))
}

pub(crate) fn weight_grads<T: Scalar>(mask: &GaussianMask<T>, positions: ArrayView1<'_, T>, upstream: ArrayView1<'_, T>) -> (T, T) {
    let (mu, s) = (mask.mu, mask.sigma);
    let (mut d_mu, mut d_sigma) = (T::zero(), T::zero());
    for (&x, &g_up) in positions.iter().zip(upstream.iter()) {
        let z = (x - mu) / s;
        let raw = (T::lit(-0.5) * z * z).exp();
        if raw < T::min_positive_value() {
            // Clamped region is flat.
            continue;
        }
        d_mu += g_up * raw * z / s;
        d_sigma += g_up * raw * z * z / s;
    }
    (d_mu, d_sigma)
}

/// The confidence window `((mu - gamma sigma) d, (mu + gamma sigma) d)` clipped to the video.
pub fn confidence_interval<T: Scalar>(mask: &GaussianMask<T>, extent: &VideoExtent<T>, gamma: T) -> Result<TemporalSegment<T>> {
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let d = extent.duration();
    let half = gamma * mask.sigma;
    clamp_to_video((mask.mu - half) * d, (mask.mu + half) * d, extent)
}

fn softmax_rows<T: Scalar>(scores: &mut Array2<T>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Row-stochastic attention `softmax(q k^T / sqrt(d_k))`.
pub(crate) fn attention_probs<T: Scalar>(q: ArrayView2<'_, T>, k: ArrayView2<'_, T>) -> Array2<T> {
    let scale = T::one() / T::lit(q.ncols() as f64).sqrt();
    let mut s = q.dot(&k.t()) * scale;
    softmax_rows(&mut s);
    s
}

/// `(G . softmax(q k^T / sqrt(d_k))) v`: each attention column `j` is scaled by
/// `G_j` before the values are aggregated. Rows are not renormalized.
pub fn gaussian_weighted_attention<T: Scalar>(
    q: ArrayView2<'_, T>,
    k: ArrayView2<'_, T>,
    v: ArrayView2<'_, T>,
    weights: ArrayView1<'_, T>,
) -> Result<Array2<T>> {
    let n = q.nrows();
    if k.nrows() != n || v.nrows() != n || weights.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "sequence lengths q={} k={} v={} weights={}",
            n,
            k.nrows(),
            v.nrows(),
            weights.len()
        )));
    }
    if q.ncols() != k.ncols() {
        return Err(Error::ShapeMismatch(format!("query dim {} != key dim {}", q.ncols(), k.ncols())));
    }
    let mut a = attention_probs(q, k);
    a *= &weights.insert_axis(Axis(0));
    Ok(a.dot(&v))
}

/// Combination of several masks.
#[derive(Debug, Clone)]
pub struct MultiMaskWeights<T> {
    /// Elementwise maximum over the per-mask weights.
    pub weights: Array1<T>,
    /// Index of the mask with the largest weight sum; its interval is the grounding.
    pub dominant: usize,
}

pub fn multi_mask_weights<T: Scalar>(masks: &[GaussianMask<T>], grid: &FrameGrid<T>) -> Result<MultiMaskWeights<T>> {
    let (first, rest) = masks.split_first().ok_or(Error::EmptyMaskList)?;
    let mut weights = mask_weights(first, grid);
    let mut dominant = 0;
    let mut best_mass: T = weights.sum();
    for (k, m) in rest.iter().enumerate() {
        let w = mask_weights(m, grid);
        let mass: T = w.sum();
        if mass > best_mass {
            best_mass = mass;
            dominant = k + 1;
        }
        weights.zip_mut_with(&w, |a, &b| *a = a.max(b));
    }
    Ok(MultiMaskWeights { weights, dominant })
}
