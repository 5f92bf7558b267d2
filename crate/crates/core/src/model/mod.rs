//! Dual-style grounded QA model over precomputed features.
//!
//! Video and text are encoded separately and fused late:
//!
//! 1. frames are projected to width `D`;
//! 2. the grounding head attends from the projected question to the frame
//!    tokens and reads out a Gaussian mask `(mu, sigma)`;
//! 3. one temporal self-attention layer runs with every attention column
//!    scaled by the mask weight of its key frame;
//! 4. attention pooling with a learned query summarizes the frames into the
//!    masked video vector `v_t` (the pooling distribution is the attention
//!    trace used for post-hoc grounding);
//! 5. answers are scored by `cos(v_t + q_t, a_t) / tau`.
//!
//! The NG objective is answer cross-entropy with the predicted mask applied.
//! NG+ adds `alpha` times a question-grounding cross-entropy that scores the
//! positive question against hard negatives using `v_t` alone.

mod net;
pub mod params;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use params::{Checkpoint, Params};

use crate::error::{Error, Result};
use crate::gaussian::{confidence_interval, FrameGrid, GaussianMask};
use crate::metrics::GroundingLabel;
use crate::posthoc::{self, DEFAULT_DIST_CAP_S, DEFAULT_SMOOTH};
use crate::scalar::Scalar;
use crate::temporal::{TemporalSegment, VideoExtent};
pub(crate) use net::softmax;
use net::{MaskSource, Objective};

/// One sample: features for a video, its question and candidate answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + serde::de::DeserializeOwned"))]
pub struct Episode<T> {
    pub id: String,
    pub video_id: String,
    /// `n x d_v`
    pub frames: Array2<T>,
    /// `d_t`
    pub question: Array1<T>,
    /// `A x d_t`
    pub answers: Array2<T>,
    pub correct: usize,
    /// Default hard negatives, `A - 1` rows of `d_t`.
    pub neg_questions: Array2<T>,
    /// Rephrasings of the question that refer to the same moment.
    #[serde(default)]
    pub pos_variants: Vec<Array1<T>>,
    pub gt_moment: Option<TemporalSegment<T>>,
    pub extent: VideoExtent<T>,
    /// Descriptive questions are never used as negatives.
    #[serde(default)]
    pub descriptive: bool,
}

impl<T: Scalar> Episode<T> {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_answers(&self) -> usize {
        self.answers.nrows()
    }

    pub fn grid(&self) -> Result<FrameGrid<T>> {
        FrameGrid::new(self.n_frames(), self.extent)
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::ShapeMismatch(format!("episode `{}`: {m}", self.id)));
        if self.n_answers() < 2 {
            return bad(format!("needs at least 2 candidate answers, has {}", self.n_answers()));
        }
        if self.correct >= self.n_answers() {
            return bad(format!("correct index {} out of range", self.correct));
        }
        if self.n_frames() < 2 {
            return bad("needs at least 2 frames".into());
        }
        if self.frames.ncols() != cfg.d_v {
            return bad(format!("frame dim {} != {}", self.frames.ncols(), cfg.d_v));
        }
        if self.question.len() != cfg.d_t || self.answers.ncols() != cfg.d_t {
            return bad(format!("text dim != {}", cfg.d_t));
        }
        if self.neg_questions.nrows() > 0 && self.neg_questions.ncols() != cfg.d_t {
            return bad("negative question dim mismatch".into());
        }
        if self.pos_variants.iter().any(|v| v.len() != cfg.d_t) {
            return bad("positive variant dim mismatch".into());
        }
        Ok(())
    }

    /// The ground-truth label, when the episode carries a moment.
    pub fn label(&self) -> Option<GroundingLabel<T>> {
        let gt = self.gt_moment?;
        GroundingLabel::new(self.id.clone(), self.video_id.clone(), self.extent, vec![gt], self.correct).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_t: usize,
    pub width: usize,
    pub n_masks: usize,
    pub temperature: f64,
    /// Spread of every mask at initialization.
    pub sigma_init: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_v: 32, d_t: 32, width: 64, n_masks: 1, temperature: 0.07, sigma_init: 0.25, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_v == 0 || self.d_t == 0 || self.width == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.n_masks == 0 {
            return Err(Error::EmptyMaskList);
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.sigma_init > crate::gaussian::SIGMA_MIN && self.sigma_init < 1.0) {
            return Err(Error::Config(format!("sigma_init {} outside (0.01, 1)", self.sigma_init)));
        }
        Ok(())
    }
}

/// Which window a prediction reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowSource {
    Gaussian,
    Attention,
    Fused,
}

impl std::str::FromStr for WindowSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "attention" => Ok(Self::Attention),
            "fused" => Ok(Self::Fused),
            _ => Err(Error::Config(format!("unknown window source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceOptions<T> {
    pub gamma: T,
    pub window: WindowSource,
    pub smooth: usize,
    pub dist_cap_s: T,
}

impl<T: Scalar> Default for InferenceOptions<T> {
    fn default() -> Self {
        Self { gamma: T::one(), window: WindowSource::Gaussian, smooth: DEFAULT_SMOOTH, dist_cap_s: T::lit(DEFAULT_DIST_CAP_S) }
    }
}

/// Everything the model says about one episode.
#[derive(Debug, Clone)]
pub struct EpisodePrediction<T> {
    pub answer: usize,
    pub scores: Array1<T>,
    pub masks: Vec<GaussianMask<T>>,
    /// Mask whose interval is reported (largest weight mass).
    pub mask: GaussianMask<T>,
    pub mask_weights: Array1<T>,
    pub trace: Vec<T>,
    pub gaussian_window: TemporalSegment<T>,
    pub attention_window: TemporalSegment<T>,
    pub window: TemporalSegment<T>,
}

/// Intersection of the two windows, or the attention window when they are disjoint.
pub fn fuse_windows<T: Scalar>(gauss_win: &TemporalSegment<T>, attn_win: &TemporalSegment<T>) -> TemporalSegment<T> {
    gauss_win.intersection(attn_win).unwrap_or(*attn_win)
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(xs: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaModel<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

/// Inputs of one gradient evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a, T> {
    /// Weight of the answer term (0 disables it).
    pub qa_weight: T,
    /// Weight of the question-grounding term (`alpha`; 0 disables it).
    pub grounding_weight: T,
    /// Replaces the episode question everywhere (positive rephrasing).
    pub question: Option<ArrayView1<'a, T>>,
    /// Negative questions; defaults to the episode's own.
    pub negatives: Option<ndarray::ArrayView2<'a, T>>,
}

impl<T: Scalar> LossSpec<'_, T> {
    pub fn ng() -> Self {
        Self { qa_weight: T::one(), grounding_weight: T::zero(), question: None, negatives: None }
    }

    pub fn ngplus(alpha: T) -> Self {
        Self { qa_weight: T::one(), grounding_weight: alpha, question: None, negatives: None }
    }

    pub fn grounding_only() -> Self {
        Self { qa_weight: T::zero(), grounding_weight: T::one(), question: None, negatives: None }
    }
}

impl<T: Scalar> QaModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        Ok(Self { config: ckpt.config.clone(), params: ckpt.to_params()? })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.config, &self.params)
    }

    fn temperature(&self) -> T {
        T::lit(self.config.temperature)
    }

    /// All masks the head predicts for this episode.
    pub fn predict_masks(&self, ep: &Episode<T>) -> Result<Vec<GaussianMask<T>>> {
        ep.validate(&self.config)?;
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), MaskSource::Predicted);
        Ok(fwd.heads.iter().map(|h| h.mask).collect())
    }

    /// The grounding mask: with several masks, the one with the largest weight mass.
    pub fn predict_gaussian(&self, ep: &Episode<T>) -> Result<GaussianMask<T>> {
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), MaskSource::Predicted);
        ep.validate(&self.config)?;
        Ok(dominant_mask(&fwd))
    }

    /// Pooled video vector and the attention-pooling trace. Without a mask the
    /// self-attention is unweighted.
    pub fn encode_video(&self, ep: &Episode<T>, mask: Option<&GaussianMask<T>>) -> Result<(Array1<T>, Vec<T>)> {
        ep.validate(&self.config)?;
        let src = mask.map_or(MaskSource::Off, |m| MaskSource::Fixed(*m));
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), src);
        Ok((fwd.v, fwd.pool.to_vec()))
    }

    /// Answer scores with the given mask (or none).
    pub fn score_answers(&self, ep: &Episode<T>, mask: Option<&GaussianMask<T>>) -> Result<Array1<T>> {
        ep.validate(&self.config)?;
        let src = mask.map_or(MaskSource::Off, |m| MaskSource::Fixed(*m));
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), src);
        Ok(net::answer_scores(&self.params, &fwd, ep.answers.view(), self.temperature()))
    }

    /// Answer cross-entropy with the predicted mask applied.
    pub fn ng_loss(&self, ep: &Episode<T>) -> Result<T> {
        ep.validate(&self.config)?;
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), MaskSource::Predicted);
        let scores = net::answer_scores(&self.params, &fwd, ep.answers.view(), self.temperature());
        Ok(net::cross_entropy(scores.view(), ep.correct))
    }

    /// Question-grounding cross-entropy of the positive question against the
    /// episode's negatives.
    pub fn grounding_loss(&self, ep: &Episode<T>) -> Result<T> {
        ep.validate(&self.config)?;
        self.check_negatives(ep, ep.neg_questions.nrows())?;
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), MaskSource::Predicted);
        let cands = candidates(ep.question.view(), ep.neg_questions.view());
        let scores = net::question_scores(&self.params, &fwd, cands.view(), self.temperature());
        Ok(net::cross_entropy(scores.view(), 0))
    }

    /// `ng_loss + alpha * grounding_loss`.
    pub fn ngplus_loss(&self, ep: &Episode<T>, alpha: T) -> Result<T> {
        let ng = self.ng_loss(ep)?;
        if alpha == T::zero() {
            self.check_negatives(ep, ep.neg_questions.nrows())?;
            return Ok(ng);
        }
        Ok(ng + alpha * self.grounding_loss(ep)?)
    }

    fn check_negatives(&self, ep: &Episode<T>, got: usize) -> Result<()> {
        let expected = ep.n_answers() - 1;
        if got != expected {
            return Err(Error::NegativeCountMismatch { expected, got });
        }
        Ok(())
    }

    /// Loss and gradients of every parameter for one episode.
    pub fn loss_and_grad(&self, ep: &Episode<T>, spec: &LossSpec<'_, T>) -> Result<(T, Params<T>)> {
        ep.validate(&self.config)?;
        let question = spec.question.unwrap_or(ep.question.view());
        let negs = spec.negatives.unwrap_or(ep.neg_questions.view());
        let cands = if spec.grounding_weight != T::zero() {
            self.check_negatives(ep, negs.nrows())?;
            Some(candidates(question, negs))
        } else {
            None
        };
        let obj = Objective {
            answers: ep.answers.view(),
            correct: ep.correct,
            qa_weight: spec.qa_weight,
            candidates: cands.as_ref().map(|c| c.view()),
            grounding_weight: spec.grounding_weight,
            temperature: self.temperature(),
        };
        Ok(net::loss_and_grad(&self.params, ep.frames.view(), question, MaskSource::Predicted, &obj))
    }

    /// Answer, masks, trace and windows for one episode.
    pub fn predict(&self, ep: &Episode<T>, opts: &InferenceOptions<T>) -> Result<EpisodePrediction<T>> {
        ep.validate(&self.config)?;
        let fwd = net::forward(&self.params, ep.frames.view(), ep.question.view(), MaskSource::Predicted);
        let scores = net::answer_scores(&self.params, &fwd, ep.answers.view(), self.temperature());
        let answer = argmax(scores.view());
        let mask = dominant_mask(&fwd);
        let grid = ep.grid()?;
        let gaussian_window = confidence_interval(&mask, &ep.extent, opts.gamma)?;
        let trace = fwd.pool.to_vec();
        let attention_window = posthoc::extract_from_scores(&trace, &grid, opts.smooth, opts.dist_cap_s)?.window;
        let window = match opts.window {
            WindowSource::Gaussian => gaussian_window,
            WindowSource::Attention => attention_window,
            WindowSource::Fused => fuse_windows(&gaussian_window, &attention_window),
        };
        Ok(EpisodePrediction {
            answer,
            scores,
            masks: fwd.heads.iter().map(|h| h.mask).collect(),
            mask,
            mask_weights: fwd.g.clone(),
            trace,
            gaussian_window,
            attention_window,
            window,
        })
    }
}

fn dominant_mask<T: Scalar>(fwd: &net::Forward<T>) -> GaussianMask<T> {
    let mut best = 0;
    for (k, h) in fwd.heads.iter().enumerate() {
        if h.weights.sum() > fwd.heads[best].weights.sum() {
            best = k;
        }
    }
    fwd.heads[best].mask
}

fn candidates<T: Scalar>(positive: ArrayView1<'_, T>, negatives: ndarray::ArrayView2<'_, T>) -> Array2<T> {
    ndarray::concatenate(Axis(0), &[positive.insert_axis(Axis(0)), negatives]).expect("candidate rows share the text dim")
}

#[cfg(test)]
mod tests;
