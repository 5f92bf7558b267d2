//! Weakly-supervised temporally grounded video question answering.
//!
//! The crate covers the whole loop at desk scale:
//!
//! - [`temporal`]: interval arithmetic and overlap measures (IoP, IoU)
//! - [`metrics`]: the grounded-QA protocol (Acc@QA, Acc@GQA, mIoP, mIoU)
//! - [`annotations`]: label ingestion, validation and dataset statistics
//! - [`gaussian`]: differentiable Gaussian temporal masks
//! - [`model`]: a dual-style QA model with a Gaussian grounding head (NG / NG+)
//! - [`posthoc`]: attention-trace to interval extraction
//! - [`synth`]: planted-moment episode generator and diagnostic splits
//! - [`trainer`]: Adam training with the one- and two-stage schedules
//!
//! Numeric code is generic over [`Scalar`] (`f32` / `f64`); the aliases below
//! fix it to `f64`, which is what the CLI and the reports use.

pub mod annotations;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod metrics;
pub mod model;
pub mod posthoc;
pub mod scalar;
pub mod svg;
pub mod synth;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Segment = temporal::TemporalSegment<f64>;
pub type Extent = temporal::VideoExtent<f64>;
pub type Mask = gaussian::GaussianMask<f64>;
pub type Grid = gaussian::FrameGrid<f64>;
pub type Label = metrics::GroundingLabel<f64>;
pub type LabelSet = metrics::LabelSet<f64>;
pub type Prediction = metrics::Prediction<f64>;
pub type Episode = model::Episode<f64>;
pub type Model = model::QaModel<f64>;
pub type Trace = posthoc::AttentionTrace<f64>;
