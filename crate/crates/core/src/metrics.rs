//! Grounded-QA evaluation protocol.
//!
//! A question counts toward Acc@GQA when its answer is correct and its
//! predicted window has IoP >= 0.5 against the best-matching ground-truth
//! segment. Overlap means and threshold rates are reported for both IoP
//! and IoU at the fixed thresholds 0.3 and 0.5.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::temporal::{iop, iou, TemporalSegment, VideoExtent};

/// Protocol thresholds.
pub const THRESHOLDS: [f64; 2] = [0.3, 0.5];
/// IoP level at which an answer counts as visually grounded.
pub const GQA_IOP: f64 = 0.5;

/// Ground truth for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingLabel<T> {
    pub question_id: String,
    pub video_id: String,
    pub extent: VideoExtent<T>,
    pub segments: Vec<TemporalSegment<T>>,
    pub answer_index: usize,
}

impl<T: Scalar> GroundingLabel<T> {
    pub fn new(
        question_id: impl Into<String>,
        video_id: impl Into<String>,
        extent: VideoExtent<T>,
        segments: Vec<TemporalSegment<T>>,
        answer_index: usize,
    ) -> Result<Self> {
        let question_id = question_id.into();
        if segments.is_empty() {
            return Err(Error::Config(format!("label `{question_id}` has no segments")));
        }
        if let Some(s) = segments.iter().find(|s| !extent.contains(s)) {
            return Err(Error::Config(format!(
                "label `{question_id}`: segment [{}, {}] exceeds duration {}",
                s.start(),
                s.end(),
                extent.duration()
            )));
        }
        Ok(Self { question_id, video_id: video_id.into(), extent, segments, answer_index })
    }
}

/// Labels keyed by question id, in id order.
pub type LabelSet<T> = BTreeMap<String, GroundingLabel<T>>;

/// A model output `(a*, t*)` for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub question_id: String,
    pub answer_index: usize,
    pub window: TemporalSegment<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapKind {
    IoP,
    IoU,
}

/// Max overlap of `pred` over the label's segments.
pub fn best_overlap<T: Scalar>(pred: &TemporalSegment<T>, label: &GroundingLabel<T>, kind: OverlapKind) -> T {
    label
        .segments
        .iter()
        .map(|gt| match kind {
            OverlapKind::IoP => iop(pred, gt),
            OverlapKind::IoU => iou(pred, gt),
        })
        .fold(T::zero(), T::max)
}

/// Aggregate scores, all in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc_qa: f64,
    pub acc_gqa: f64,
    pub m_iop: f64,
    pub iop_at: BTreeMap<String, f64>,
    pub m_iou: f64,
    pub iou_at: BTreeMap<String, f64>,
    pub n_questions: usize,
    pub n_missing: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// One decimal, half-up.
pub fn round_pct(x: f64) -> f64 {
    ((x * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

impl MetricReport {
    pub fn iop_at(&self, t: f64) -> Option<f64> {
        self.iop_at.get(&threshold_key(t)).copied()
    }

    pub fn iou_at(&self, t: f64) -> Option<f64> {
        self.iou_at.get(&threshold_key(t)).copied()
    }

    /// Copy with every percentage rounded for presentation.
    pub fn rounded(&self) -> Self {
        let r = |m: &BTreeMap<String, f64>| m.iter().map(|(k, v)| (k.clone(), round_pct(*v))).collect();
        Self {
            acc_qa: round_pct(self.acc_qa),
            acc_gqa: round_pct(self.acc_gqa),
            m_iop: round_pct(self.m_iop),
            iop_at: r(&self.iop_at),
            m_iou: round_pct(self.m_iou),
            iou_at: r(&self.iou_at),
            n_questions: self.n_questions,
            n_missing: self.n_missing,
            warnings: self.warnings.clone(),
        }
    }

    /// Checks `acc_gqa <= min(acc_qa, IoP@0.5)` and threshold monotonicity.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let tol = 1e-9;
        let iop5 = self.iop_at(GQA_IOP).ok_or("missing IoP@0.5")?;
        if self.acc_gqa > self.acc_qa.min(iop5) + tol {
            return Err(format!("Acc@GQA {} exceeds min(Acc@QA {}, IoP@0.5 {})", self.acc_gqa, self.acc_qa, iop5));
        }
        for m in [&self.iop_at, &self.iou_at] {
            let mut rates: Vec<(f64, f64)> = m.iter().map(|(k, v)| (k.parse().unwrap_or(0.0), *v)).collect();
            rates.sort_by(|a, b| a.0.total_cmp(&b.0));
            if rates.windows(2).any(|w| w[1].1 > w[0].1 + tol) {
                return Err(format!("threshold rates not monotone: {rates:?}"));
            }
        }
        Ok(())
    }

    /// Header and row in the usual results-table column order.
    pub fn to_csv(&self) -> String {
        let r = self.rounded();
        let mut header = vec!["Acc@QA".to_string(), "Acc@GQA".into(), "mIoP".into()];
        let mut row = vec![r.acc_qa, r.acc_gqa, r.m_iop];
        let push_rates = |name: &str, m: &BTreeMap<String, f64>, header: &mut Vec<String>, row: &mut Vec<f64>| {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
            for k in keys {
                header.push(format!("{name}@{k}"));
                row.push(m[k]);
            }
        };
        push_rates("IoP", &r.iop_at, &mut header, &mut row);
        header.push("mIoU".into());
        row.push(r.m_iou);
        push_rates("IoU", &r.iou_at, &mut header, &mut row);
        let row: Vec<String> = row.iter().map(|v| format!("{v:.1}")).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("report serializes") + "\n"
    }
}

/// Evaluation knobs. The protocol thresholds are always reported; extra
/// thresholds are added only when explicitly requested.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub extended_thresholds: Vec<f64>,
}

#[derive(Clone, Copy)]
struct QuestionScore {
    correct: bool,
    iop: f64,
    iou: f64,
}

/// Scores predictions against labels with the protocol thresholds.
pub fn evaluate<T: Scalar>(preds: &[Prediction<T>], labels: &LabelSet<T>) -> Result<MetricReport> {
    evaluate_with(preds, labels, &EvalOptions::default())
}

pub fn evaluate_with<T: Scalar>(preds: &[Prediction<T>], labels: &LabelSet<T>, opts: &EvalOptions) -> Result<MetricReport> {
    let mut by_id: BTreeMap<&str, &Prediction<T>> = BTreeMap::new();
    for p in preds {
        if !labels.contains_key(&p.question_id) {
            return Err(Error::UnknownQuestionId(p.question_id.clone()));
        }
        if by_id.insert(p.question_id.as_str(), p).is_some() {
            return Err(Error::DuplicatePrediction(p.question_id.clone()));
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let label_list: Vec<&GroundingLabel<T>> = labels.values().collect();
    // Per-question scores in parallel; the reduction below is sequential so
    // floating point sums are identical from run to run.
    let scores: Vec<Option<QuestionScore>> = label_list
        .par_iter()
        .map(|label| {
            by_id.get(label.question_id.as_str()).map(|p| QuestionScore {
                correct: p.answer_index == label.answer_index,
                iop: best_overlap(&p.window, label, OverlapKind::IoP).as_f64(),
                iou: best_overlap(&p.window, label, OverlapKind::IoU).as_f64(),
            })
        })
        .collect();

    let mut thresholds: Vec<f64> = THRESHOLDS.to_vec();
    for t in &opts.extended_thresholds {
        if !(0.0..=1.0).contains(t) {
            return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
        }
        if !thresholds.contains(t) {
            thresholds.push(*t);
        }
    }

    let n = scores.len();
    let missing: Vec<&str> = label_list
        .iter()
        .zip(&scores)
        .filter(|(_, s)| s.is_none())
        .map(|(l, _)| l.question_id.as_str())
        .collect();
    let present = || scores.iter().flatten();
    let pct = |count: usize| 100.0 * count as f64 / n as f64;

    let acc_qa = pct(present().filter(|s| s.correct).count());
    let acc_gqa = pct(present().filter(|s| s.correct && s.iop >= GQA_IOP).count());
    let m_iop = 100.0 * present().map(|s| s.iop).sum::<f64>() / n as f64;
    let m_iou = 100.0 * present().map(|s| s.iou).sum::<f64>() / n as f64;
    let mut iop_at = BTreeMap::new();
    let mut iou_at = BTreeMap::new();
    for &t in &thresholds {
        iop_at.insert(threshold_key(t), pct(present().filter(|s| s.iop >= t).count()));
        iou_at.insert(threshold_key(t), pct(present().filter(|s| s.iou >= t).count()));
    }

    let mut warnings = Vec::new();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        warnings.push(format!(
            "{} labeled question(s) have no prediction and were scored as wrong with zero overlap (first: {})",
            missing.len(),
            shown.join(", ")
        ));
    }

    Ok(MetricReport { acc_qa, acc_gqa, m_iop, iop_at, m_iou, iou_at, n_questions: n, n_missing: missing.len(), warnings })
}

/// Fixed-answer, whole-video predictor.
pub fn random_baseline<T: Scalar>(labels: &LabelSet<T>, answer_id: usize) -> Vec<Prediction<T>> {
    labels
        .values()
        .map(|l| Prediction { question_id: l.question_id.clone(), answer_index: answer_id, window: l.extent.whole() })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PredictionEntry {
    answer: usize,
    start: f64,
    end: f64,
}

/// Ordered `(id, entry)` pairs; keeps duplicate keys instead of collapsing them.
struct RawPredictionFile(Vec<(String, PredictionEntry)>);

impl<'de> Deserialize<'de> for RawPredictionFile {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawPredictionFile;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from question id to {answer, start, end}")
            }
            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> std::result::Result<Self::Value, M::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, PredictionEntry>()? {
                    out.push((k, v));
                }
                Ok(RawPredictionFile(out))
            }
        }
        de.deserialize_map(V)
    }
}

/// Renders a serde_json error with the absolute byte offset into `text`.
pub(crate) fn json_error_message(text: &str, err: &serde_json::Error) -> String {
    let (line, col) = (err.line(), err.column());
    let offset: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum::<usize>() + col.saturating_sub(1);
    format!("{err} (byte offset {offset})")
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<Prediction<f64>>> {
    let raw: RawPredictionFile =
        serde_json::from_str(text).map_err(|e| Error::Parse { path: path.into(), message: json_error_message(text, &e) })?;
    let mut seen = HashSet::new();
    raw.0
        .into_iter()
        .enumerate()
        .map(|(i, (id, e))| {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicatePrediction(id));
            }
            let window = TemporalSegment::new(e.start, e.end).map_err(|err| Error::Validation {
                path: path.into(),
                line: i + 1,
                message: format!("prediction `{id}`: {err}"),
            })?;
            Ok(Prediction { question_id: id, answer_index: e.answer, window })
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}

/// Serializes predictions as `{question_id: {answer, start, end}}`, ids in order.
pub fn predictions_to_json<T: Scalar>(preds: &[Prediction<T>]) -> String {
    let map: BTreeMap<&str, PredictionEntry> = preds
        .iter()
        .map(|p| {
            (
                p.question_id.as_str(),
                PredictionEntry { answer: p.answer_index, start: p.window.start().as_f64(), end: p.window.end().as_f64() },
            )
        })
        .collect();
    serde_json::to_string_pretty(&map).expect("predictions serialize") + "\n"
}
