//! Mini-batch Adam training for the NG and NG+ objectives.
//!
//! NG+ runs in two stages: the first optimizes only the question-grounding
//! term, the second the full joint loss. Validation after every epoch picks
//! the parameters that are returned.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, Prediction};
use crate::model::{Episode, InferenceOptions, LossSpec, ModelConfig, Params, QaModel, WindowSource};
use crate::scalar::Scalar;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "ng", alias = "NG")]
    Ng,
    #[serde(rename = "ng+", alias = "NG+")]
    NgPlus,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ng" => Ok(Self::Ng),
            "ng+" | "ngplus" => Ok(Self::NgPlus),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected ng or ng+)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub objective: Objective,
    /// Grounding-term-only epochs before the joint stage (NG+ only).
    pub stage1_epochs: usize,
    /// Epochs of the main stage.
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub alpha: f64,
    pub p_same_video: f64,
    pub p_pos_swap: f64,
    pub patience: usize,
    pub seed: u64,
    /// Window used when scoring validation grounding.
    pub gamma: f64,
    pub window: WindowSource,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            objective: Objective::Ng,
            stage1_epochs: 3,
            epochs: 20,
            lr: 1e-3,
            batch: 64,
            alpha: 1.0,
            p_same_video: 0.3,
            p_pos_swap: 0.3,
            patience: 5,
            seed: 0,
            gamma: 1.0,
            window: WindowSource::Gaussian,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch == 0 {
            return fail("batch must be positive".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return fail(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        for (name, p) in [("p_same_video", self.p_same_video), ("p_pos_swap", self.p_pos_swap)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.gamma > 0.0) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Params<T>,
    v: Params<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(like: &Params<T>) -> Self {
        Self { beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: T) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((_, p), (_, m)), (_, v)), (_, _, g)) in params.tensors_mut().into_iter().zip(ms).zip(vs).zip(grads) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Training questions indexed by video, for negative sampling.
#[derive(Debug, Clone)]
pub struct QuestionPool<T> {
    questions: Vec<Array1<T>>,
    video_of: Vec<usize>,
    by_video: BTreeMap<String, Vec<usize>>,
    videos: Vec<String>,
}

impl<T: Scalar> QuestionPool<T> {
    /// Descriptive questions are left out.
    pub fn new(episodes: &[Episode<T>]) -> Self {
        let mut pool = Self { questions: Vec::new(), video_of: Vec::new(), by_video: BTreeMap::new(), videos: Vec::new() };
        let mut video_index: BTreeMap<String, usize> = BTreeMap::new();
        for ep in episodes.iter().filter(|e| !e.descriptive) {
            let next = video_index.len();
            let vi = *video_index.entry(ep.video_id.clone()).or_insert_with(|| {
                pool.videos.push(ep.video_id.clone());
                next
            });
            pool.by_video.entry(ep.video_id.clone()).or_default().push(pool.questions.len());
            pool.video_of.push(vi);
            pool.questions.push(ep.question.clone());
        }
        pool
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// One draw of negatives.
#[derive(Debug, Clone)]
pub struct NegativeDraw<T> {
    pub questions: Array2<T>,
    pub n_same_video: usize,
    /// Same-video draws that had to fall back to other videos.
    pub n_fallback: usize,
}

/// Draws `count` distinct negatives for `ep`. Each slot comes from the same
/// video with probability `p_same_video`, otherwise from another video; an
/// exhausted same-video pool falls back to other videos.
pub fn sample_negatives<T: Scalar, R: Rng + ?Sized>(
    pool: &QuestionPool<T>,
    ep: &Episode<T>,
    count: usize,
    p_same_video: f64,
    rng: &mut R,
) -> Result<NegativeDraw<T>> {
    let same: Vec<usize> = pool
        .by_video
        .get(&ep.video_id)
        .map(|v| v.iter().copied().filter(|&i| pool.questions[i] != ep.question).collect())
        .unwrap_or_default();
    let cross_total = pool.len() - pool.by_video.get(&ep.video_id).map_or(0, Vec::len);
    if cross_total + same.len() < count {
        return Err(Error::InsufficientPool { needed: count, available: cross_total + same.len() });
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let (mut n_same, mut n_fallback) = (0, 0);
    let mut same_left = same.clone();
    same_left.shuffle(rng);
    for _ in 0..count {
        let want_same = rng.random_bool(p_same_video);
        if want_same {
            if let Some(i) = same_left.pop() {
                chosen.push(i);
                n_same += 1;
                continue;
            }
            n_fallback += 1;
        }
        // rejection sampling over other videos; the pool check above
        // guarantees a free question exists somewhere
        let cross_free = cross_total - chosen.iter().filter(|&&i| pool.videos[pool.video_of[i]] != ep.video_id).count();
        if cross_free == 0 {
            let i = same_left.pop().expect("pool size checked");
            chosen.push(i);
            n_same += 1;
            continue;
        }
        loop {
            let i = rng.random_range(0..pool.len());
            if pool.videos[pool.video_of[i]] != ep.video_id && !chosen.contains(&i) {
                chosen.push(i);
                break;
            }
        }
    }
    let views: Vec<ArrayView1<'_, T>> = chosen.iter().map(|&i| pool.questions[i].view()).collect();
    let questions = if views.is_empty() { Array2::zeros((0, ep.question.len())) } else { ndarray::stack(Axis(0), &views).expect("equal widths") };
    Ok(NegativeDraw { questions, n_same_video: n_same, n_fallback })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    pub loss: f64,
    pub acc_qa: f64,
    pub acc_gqa: f64,
    pub m_iop: f64,
    pub m_iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,acc_qa,m_iop,m_iou,acc_gqa,stage\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.6},{:.2},{:.2},{:.2},{:.2},{}", r.epoch, r.loss, r.acc_qa, r.m_iop, r.m_iou, r.acc_gqa, r.stage);
        }
        out
    }
}

/// Model predictions in the evaluation format.
pub fn predict_episodes<T: Scalar>(model: &QaModel<T>, episodes: &[Episode<T>], opts: &InferenceOptions<T>) -> Result<Vec<Prediction<T>>> {
    episodes
        .par_iter()
        .map(|ep| {
            let p = model.predict(ep, opts)?;
            Ok(Prediction { question_id: ep.id.clone(), answer_index: p.answer, window: p.window })
        })
        .collect()
}

/// Scores the model on episodes that carry ground-truth moments.
pub fn evaluate_model<T: Scalar>(model: &QaModel<T>, episodes: &[Episode<T>], opts: &InferenceOptions<T>) -> Result<MetricReport> {
    let labels = episodes.iter().filter_map(|e| e.label().map(|l| (l.question_id.clone(), l))).collect();
    let preds = predict_episodes(model, episodes, opts)?;
    evaluate(&preds, &labels)
}

fn check_finite<T: Scalar>(loss: T, grads: &Params<T>, epoch: usize, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, step, detail: format!("loss = {loss}") });
    }
    if !grads.all_finite() {
        return Err(Error::NonFiniteLoss { epoch, step, detail: "non-finite gradient".into() });
    }
    Ok(())
}

/// Per-episode inputs decided before the parallel gradient pass.
struct Draw<T> {
    index: usize,
    question: Option<Array1<T>>,
    negatives: Option<Array2<T>>,
}

/// Trains `model` and returns the best-validation parameters with the history.
/// Without validation episodes the final parameters are returned.
pub fn train<T: Scalar>(mut model: QaModel<T>, train_set: &[Episode<T>], val_set: &[Episode<T>], schedule: &Schedule) -> Result<(QaModel<T>, History)> {
    schedule.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ep in train_set.iter().chain(val_set) {
        ep.validate(&model.config)?;
    }
    let plus = schedule.objective == Objective::NgPlus;
    let pool = QuestionPool::new(train_set);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = Adam::new(&model.params);
    let lr = T::lit(schedule.lr);
    let opts = InferenceOptions { gamma: T::lit(schedule.gamma), window: schedule.window, ..InferenceOptions::default() };
    let mut history = History::default();
    let mut best: Option<(f64, usize, Params<T>)> = None;
    let mut fallbacks = 0usize;

    let stages: Vec<(usize, usize)> = if plus { vec![(1, schedule.stage1_epochs), (2, schedule.epochs)] } else { vec![(2, schedule.epochs)] };
    let mut epoch = 0;
    'outer: for (stage, n_epochs) in stages {
        let spec_base = match (plus, stage) {
            (true, 1) => LossSpec::grounding_only(),
            (true, _) => LossSpec::ngplus(T::lit(schedule.alpha)),
            (false, _) => LossSpec::ng(),
        };
        let grounding = spec_base.grounding_weight != T::zero();
        for _ in 0..n_epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (step, chunk) in order.chunks(schedule.batch).enumerate() {
                let mut draws = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let ep = &train_set[i];
                    let mut d = Draw { index: i, question: None, negatives: None };
                    if grounding {
                        if !ep.pos_variants.is_empty() && rng.random_bool(schedule.p_pos_swap) {
                            d.question = Some(ep.pos_variants[rng.random_range(0..ep.pos_variants.len())].clone());
                        }
                        let draw = sample_negatives(&pool, ep, ep.n_answers() - 1, schedule.p_same_video, &mut rng)?;
                        fallbacks += draw.n_fallback;
                        d.negatives = Some(draw.questions);
                    }
                    draws.push(d);
                }
                let results: Vec<Result<(T, Params<T>)>> = draws
                    .par_iter()
                    .map(|d| {
                        let spec = LossSpec { question: d.question.as_ref().map(|q| q.view()), negatives: d.negatives.as_ref().map(|n| n.view()), ..spec_base };
                        model.loss_and_grad(&train_set[d.index], &spec)
                    })
                    .collect();
                // summed in batch order so the result does not depend on threading
                let mut grads = model.params.zeros_like();
                let mut batch_loss = T::zero();
                for r in results {
                    let (l, g) = r?;
                    check_finite(l, &g, epoch, step)?;
                    batch_loss += l;
                    grads.add_scaled(&g, T::one());
                }
                let scale = T::one() / T::lit(chunk.len() as f64);
                grads.scale(scale);
                adam.step(&mut model.params, &grads, lr);
                total += batch_loss.as_f64();
            }
            let loss = total / train_set.len() as f64;
            let report = if val_set.is_empty() { None } else { Some(evaluate_model(&model, val_set, &opts)?) };
            let rec = EpochRecord {
                epoch,
                stage,
                loss,
                acc_qa: report.as_ref().map_or(f64::NAN, |r| r.acc_qa),
                acc_gqa: report.as_ref().map_or(f64::NAN, |r| r.acc_gqa),
                m_iop: report.as_ref().map_or(f64::NAN, |r| r.m_iop),
                m_iou: report.as_ref().map_or(f64::NAN, |r| r.m_iou),
            };
            history.epochs.push(rec);
            // stage 1 never answers, so only joint-stage epochs compete
            if stage == 2 && report.is_some() {
                let score = history.epochs.last().map(|r| r.acc_gqa).unwrap_or(f64::NAN);
                let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
                if improved {
                    best = Some((score, epoch, model.params.clone()));
                } else if let Some((_, best_epoch, _)) = best {
                    if epoch - best_epoch >= schedule.patience {
                        history.stopped_early = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    if fallbacks > 0 {
        history.warnings.push(format!("{fallbacks} same-video negative draws fell back to other videos"));
    }
    if let Some((_, e, params)) = best {
        history.best_epoch = Some(e);
        model.params = params;
    } else {
        history.best_epoch = history.epochs.last().map(|r| r.epoch);
    }
    Ok((model, history))
}

/// Interval widths the Gaussian window is tuned over.
pub const GAMMA_CHOICES: [f64; 2] = [1.0, 0.8];

/// Picks the `gamma` with the best validation Acc@GQA (then mIoU; then the
/// earlier choice).
pub fn select_gamma<T: Scalar>(model: &QaModel<T>, val_set: &[Episode<T>], choices: &[f64], window: WindowSource) -> Result<(f64, MetricReport)> {
    let mut best: Option<(f64, MetricReport)> = None;
    for &g in choices {
        let opts = InferenceOptions { gamma: T::lit(g), window, ..InferenceOptions::default() };
        let r = evaluate_model(model, val_set, &opts)?;
        let better = best.as_ref().is_none_or(|(_, b)| r.acc_gqa > b.acc_gqa || (r.acc_gqa == b.acc_gqa && r.m_iou > b.m_iou));
        if better {
            best = Some((g, r));
        }
    }
    best.ok_or_else(|| Error::Config("no gamma choices given".into()))
}

/// Everything `train-synth` reads from its config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub schedule: Schedule,
    /// Fractions of the episodes used for training and validation; the rest is the test split.
    pub train_frac: f64,
    pub val_frac: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.train_frac == 0.0 && cfg.val_frac == 0.0 {
            cfg.train_frac = 0.7;
            cfg.val_frac = 0.1;
        }
        if !(cfg.train_frac > 0.0 && cfg.val_frac >= 0.0 && cfg.train_frac + cfg.val_frac < 1.0) {
            return Err(Error::Config(format!("bad split fractions train {} val {}", cfg.train_frac, cfg.val_frac)));
        }
        cfg.fill_dims();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// The configuration `train-synth` runs without a config file.
    pub fn standard() -> Self {
        let schedule = Schedule { lr: 3e-3, epochs: 40, ..Schedule::default() };
        let mut cfg = Self { schedule, train_frac: 0.7, val_frac: 0.1, ..Self::default() };
        cfg.fill_dims();
        cfg
    }

    /// The model reads whatever feature widths the generator produces.
    pub fn fill_dims(&mut self) {
        self.model.d_v = self.synth.d_v;
        self.model.d_t = self.synth.d_t;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn tiny_data(n: usize, seed: u64) -> Vec<Episode<f64>> {
        generate(&SynthConfig { n_episodes: n, d_v: 8, d_t: 8, n_frames: 8, seed, pos_variant_rate: 0.5, ..SynthConfig::default() }).unwrap().episodes
    }

    fn tiny_model(seed: u64) -> QaModel<f64> {
        QaModel::new(ModelConfig { d_v: 8, d_t: 8, width: 8, seed, ..ModelConfig::default() }).unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = tiny_data(24, 1);
        let model = tiny_model(1);
        for objective in [Objective::Ng, Objective::NgPlus] {
            let sched = Schedule { objective, lr: 0.0, epochs: 3, stage1_epochs: 2, batch: 5, ..Schedule::default() };
            let (out, hist) = train(model.clone(), &data[..16], &data[16..], &sched).unwrap();
            assert_eq!(out.params, model.params);
            assert_eq!(hist.epochs.len(), if objective == Objective::Ng { 3 } else { 5 });
        }
    }

    #[test]
    fn single_noiseless_episode_overfits() {
        let cfg = SynthConfig { n_episodes: 4, d_v: 8, d_t: 8, n_frames: 8, noise_std: 0.0, seed: 2, ..SynthConfig::default() };
        let ep = generate(&cfg).unwrap().episodes[0].clone();
        let model = tiny_model(2);
        let sched = Schedule { epochs: 200, batch: 1, lr: 1e-2, patience: usize::MAX, ..Schedule::default() };
        let (out, hist) = train(model, std::slice::from_ref(&ep), &[], &sched).unwrap();
        assert_eq!(hist.epochs.len(), 200);
        let last = hist.epochs.last().unwrap().loss;
        assert!(last < 0.01, "{last}");
        assert!(out.ng_loss(&ep).unwrap() < 0.01);
    }

    #[test]
    fn patience_stops_after_flat_validation() {
        let data = tiny_data(24, 3);
        // lr 0 keeps validation flat: the first epoch stays best
        let sched = Schedule { lr: 0.0, epochs: 50, patience: 5, batch: 8, ..Schedule::default() };
        let (_, hist) = train(tiny_model(3), &data[..16], &data[16..], &sched).unwrap();
        assert!(hist.stopped_early);
        assert_eq!(hist.best_epoch, Some(1));
        assert_eq!(hist.epochs.len(), 6);
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_data(32, 4);
        let sched = Schedule { objective: Objective::NgPlus, epochs: 2, stage1_epochs: 1, batch: 8, ..Schedule::default() };
        let (a, ha) = train(tiny_model(4), &data[..24], &data[24..], &sched).unwrap();
        let (b, hb) = train(tiny_model(4), &data[..24], &data[24..], &sched).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ha, hb);
        // the thread count does not change the result
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (c, hc) = single.install(|| train(tiny_model(4), &data[..24], &data[24..], &sched)).unwrap();
        assert_eq!(a.params, c.params);
        assert_eq!(ha, hc);
    }

    fn pool_data() -> Vec<Episode<f64>> {
        generate(&SynthConfig { n_episodes: 400, d_v: 4, d_t: 4, n_frames: 4, group_size: 8, vocab_size: 64, seed: 5, ..SynthConfig::default() }).unwrap().episodes
    }

    #[test]
    fn same_video_fraction_matches_probability() {
        let data = pool_data();
        let pool = QuestionPool::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut same, mut total) = (0, 0);
        for i in 0..10_000 {
            let ep = &data[i % data.len()];
            let d = sample_negatives(&pool, ep, 4, 0.3, &mut rng).unwrap();
            assert_eq!(d.n_fallback, 0);
            same += d.n_same_video;
            total += 4;
        }
        let frac = same as f64 / total as f64;
        assert!((frac - 0.30).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn extreme_probabilities_and_no_duplicates() {
        let data = pool_data();
        let pool = QuestionPool::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ep = &data[0];
        let siblings: Vec<&Episode<f64>> = data.iter().filter(|e| e.video_id == ep.video_id && e.id != ep.id).collect();
        let all_same = sample_negatives(&pool, ep, 4, 1.0, &mut rng).unwrap();
        assert_eq!(all_same.n_same_video, 4);
        for row in all_same.questions.rows() {
            assert!(siblings.iter().any(|s| s.question.view() == row));
        }
        let all_cross = sample_negatives(&pool, ep, 4, 0.0, &mut rng).unwrap();
        assert_eq!(all_cross.n_same_video, 0);
        for row in all_cross.questions.rows() {
            assert!(data.iter().filter(|e| e.video_id == ep.video_id).all(|s| s.question.view() != row));
        }
        for _ in 0..200 {
            let d = sample_negatives(&pool, ep, 4, 0.5, &mut rng).unwrap();
            let rows: Vec<_> = d.questions.rows().into_iter().collect();
            for i in 0..rows.len() {
                for j in 0..i {
                    assert_ne!(rows[i], rows[j]);
                }
                assert_ne!(rows[i], ep.question.view());
            }
        }
    }

    #[test]
    fn exhausted_same_video_pool_falls_back() {
        let data = tiny_data(40, 6);
        let pool = QuestionPool::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // only 3 siblings per video
        let d = sample_negatives(&pool, &data[0], 4, 1.0, &mut rng).unwrap();
        assert_eq!(d.n_same_video, 3);
        assert_eq!(d.n_fallback, 1);
        let lone = QuestionPool::new(&data[..2]);
        assert!(matches!(sample_negatives(&lone, &data[0], 4, 0.3, &mut rng), Err(Error::InsufficientPool { .. })));
    }

    #[test]
    fn descriptive_questions_are_not_negatives() {
        let mut data = tiny_data(40, 7);
        data[1].descriptive = true;
        let pool = QuestionPool::new(&data);
        assert_eq!(pool.len(), 39);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let d = sample_negatives(&pool, &data[0], 4, 1.0, &mut rng).unwrap();
            assert!(d.questions.rows().into_iter().all(|r| r != data[1].question.view()));
        }
    }

    #[test]
    fn stage_one_gradients_skip_answer_projection() {
        let data = tiny_data(8, 8);
        let model = tiny_model(8);
        let (_, g) = model.loss_and_grad(&data[0], &LossSpec::grounding_only()).unwrap();
        assert!(g.w_ans.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = tiny_data(8, 9);
        let mut model = tiny_model(9);
        model.params.w_pool.fill(f64::NAN);
        let sched = Schedule { epochs: 1, batch: 4, ..Schedule::default() };
        assert!(matches!(train(model, &data, &[], &sched), Err(Error::NonFiniteLoss { epoch: 1, step: 0, .. })));
    }

    #[test]
    fn history_csv_and_config_round_trip() {
        let h = History {
            epochs: vec![EpochRecord { epoch: 1, stage: 2, loss: 1.5, acc_qa: 50.0, acc_gqa: 10.0, m_iop: 30.0, m_iou: 20.0 }],
            ..History::default()
        };
        assert_eq!(h.to_csv(), "epoch,loss,acc_qa,m_iop,m_iou,acc_gqa,stage\n1,1.500000,50.00,30.00,20.00,10.00,2\n");
        let cfg = RunConfig::standard();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("[schedule]\nobjective = \"ng+\"\nlr = 0.01\n[synth]\nd_v = 16\n").unwrap();
        assert_eq!(partial.schedule.objective, Objective::NgPlus);
        assert_eq!(partial.model.d_v, 16);
        assert!(RunConfig::from_toml("[schedule]\nobjective = \"nope\"").is_err());
    }

    #[test]
    fn adam_matches_hand_computation() {
        let model = tiny_model(10);
        let mut p = model.params.clone();
        let mut g = p.zeros_like();
        g.b_v[0] = 2.0;
        let mut adam = Adam::new(&p);
        let before = p.b_v[0];
        adam.step(&mut p, &g, 0.1);
        // first step moves by lr * sign(g) up to eps
        assert!((p.b_v[0] - (before - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(p.b_v[1], model.params.b_v[1]);
    }
}
