//! Planted-moment episodes with known ground truth, and the confound splits.
//!
//! A synthetic video is a matrix of background frame features shared by a
//! group of sibling questions. Every question gets its own moment; the frames
//! the moment covers carry `P_a a* + P_q q` (answer and question evidence),
//! the rest of the video carries `P_a a_d` for one distractor answer `a_d`.
//! Frame bins that straddle a moment edge mix both in proportion to overlap.
//!
//! With probability `shortcut_rate` the question vector is pulled towards
//! `S a*`, which lets a frames-blind scorer answer it.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::FrameGrid;
use crate::metrics::LabelSet;
use crate::model::Episode;
use crate::temporal::{intersect_len, TemporalSegment, VideoExtent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_episodes: usize,
    pub n_frames: usize,
    pub d_v: usize,
    pub d_t: usize,
    /// Candidate answers per question.
    pub n_answers: usize,
    /// Moment length as a fraction of the video.
    pub moment_ratio: f64,
    /// Norm of the per-frame Gaussian noise.
    pub noise_std: f64,
    pub shortcut_rate: f64,
    pub seed: u64,
    /// Questions per video.
    pub group_size: usize,
    /// Strength of the moment evidence.
    pub signal: f64,
    /// Strength of the distractor evidence outside the moment, relative to `signal`.
    pub distractor: f64,
    /// How far a shortcut question is pulled towards its answer.
    pub shortcut_strength: f64,
    pub vocab_size: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub pos_variant_rate: f64,
    pub max_pos_variants: usize,
    pub descriptive_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_episodes: 2000,
            n_frames: 32,
            d_v: 32,
            d_t: 32,
            n_answers: 5,
            moment_ratio: 0.2,
            noise_std: 0.3,
            shortcut_rate: 0.2,
            seed: 7,
            group_size: 4,
            signal: 1.5,
            distractor: 0.5,
            shortcut_strength: 3.0,
            vocab_size: 256,
            min_duration: 20.0,
            max_duration: 60.0,
            pos_variant_rate: 0.1,
            max_pos_variants: 5,
            descriptive_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_episodes == 0 {
            return fail("n_episodes must be positive".into());
        }
        if self.n_frames < 2 || self.d_v == 0 || self.d_t == 0 {
            return fail("need n_frames >= 2 and positive feature dims".into());
        }
        if self.n_answers < 2 {
            return fail(format!("need at least 2 answers, got {}", self.n_answers));
        }
        if !(self.moment_ratio > 0.0 && self.moment_ratio < 1.0) {
            return fail(format!("moment_ratio {} outside (0, 1)", self.moment_ratio));
        }
        for (name, p) in [("shortcut_rate", self.shortcut_rate), ("pos_variant_rate", self.pos_variant_rate), ("descriptive_rate", self.descriptive_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.noise_std >= 0.0) || !(self.signal >= 0.0) || !(self.distractor >= 0.0) || !(self.shortcut_strength >= 0.0) {
            return fail("noise, signal, distractor and shortcut strengths must be non-negative".into());
        }
        if self.group_size == 0 {
            return fail("group_size must be positive".into());
        }
        if self.vocab_size < self.n_answers + self.group_size {
            return fail(format!("vocab_size must be at least n_answers + group_size = {}", self.n_answers + self.group_size));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) || !self.max_duration.is_finite() {
            return fail(format!("bad duration range [{}, {}]", self.min_duration, self.max_duration));
        }
        Ok(())
    }
}

/// The fixed projections that define a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    /// Answer embedding to frame space, `d_t x d_v`.
    pub p_answer: Array2<f64>,
    /// Question embedding to frame space, `d_t x d_v`.
    pub p_question: Array2<f64>,
    /// Answer embedding to the question shortcut direction, `d_t x d_t`.
    pub shortcut: Array2<f64>,
    /// Answer vocabulary, unit rows of width `d_t`.
    pub vocab: Array2<f64>,
}

impl World {
    fn sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let gauss = |rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64| Array2::from_shape_simple_fn((r, c), || scale * rng.sample::<f64, _>(StandardNormal));
        let p_answer = gauss(rng, cfg.d_t, cfg.d_v, 1.0 / (cfg.d_t as f64).sqrt());
        let p_question = gauss(rng, cfg.d_t, cfg.d_v, 1.0 / (cfg.d_t as f64).sqrt());
        let shortcut = gauss(rng, cfg.d_t, cfg.d_t, 1.0 / (cfg.d_t as f64).sqrt());
        let mut vocab = gauss(rng, cfg.vocab_size, cfg.d_t, 1.0);
        for mut row in vocab.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        Self { p_answer, p_question, shortcut, vocab }
    }

    /// Unit frame-space direction of an answer.
    pub fn answer_direction(&self, answer: ArrayView1<'_, f64>) -> Array1<f64> {
        unit(answer.dot(&self.p_answer))
    }
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    unit(Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal)))
}

pub const ARCHIVE_FORMAT: &str = "gvqa-episodes";
pub const ARCHIVE_VERSION: u32 = 1;

/// Generated episodes plus everything needed to audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub format: String,
    pub version: u32,
    pub config: SynthConfig,
    pub world: World,
    pub episodes: Vec<Episode<f64>>,
    /// The moment planted for every episode id.
    pub planted: BTreeMap<String, TemporalSegment<f64>>,
}

impl SynthDataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("dataset serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Self = serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: crate::metrics::json_error_message(&text, &e) })?;
        if ds.format != ARCHIVE_FORMAT || ds.version != ARCHIVE_VERSION {
            return Err(Error::Parse { path: path.into(), message: format!("unsupported archive {} v{}", ds.format, ds.version) });
        }
        Ok(ds)
    }

    /// Labels for a subset of the episodes.
    pub fn labels(episodes: &[Episode<f64>]) -> LabelSet<f64> {
        episodes.iter().filter_map(|e| e.label().map(|l| (l.question_id.clone(), l))).collect()
    }

    /// First `frac` of the episodes for training, the rest held out. Splits
    /// on video boundaries so siblings never straddle the split.
    pub fn split(&self, frac: f64) -> (Vec<Episode<f64>>, Vec<Episode<f64>>) {
        let mut cut = ((self.episodes.len() as f64) * frac).round() as usize;
        cut = cut.min(self.episodes.len());
        while cut > 0 && cut < self.episodes.len() && self.episodes[cut].video_id == self.episodes[cut - 1].video_id {
            cut += 1;
        }
        (self.episodes[..cut].to_vec(), self.episodes[cut..].to_vec())
    }
}

/// One question before negatives are attached.
struct Draft {
    episode: Episode<f64>,
    moment: TemporalSegment<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut world_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::sample(cfg, &mut world_rng);
    let n_groups = cfg.n_episodes.div_ceil(cfg.group_size);

    let groups: Vec<Vec<Draft>> = (0..n_groups)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(g as u64 + 1);
            let size = cfg.group_size.min(cfg.n_episodes - g * cfg.group_size);
            generate_group(cfg, &world, g, size, &mut rng)
        })
        .collect();

    // Negatives need the whole question pool, so they are drawn in one
    // sequential pass on a separate stream.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let pool: Vec<(usize, Array1<f64>)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, drafts)| drafts.iter().filter(|d| !d.episode.descriptive).map(move |d| (g, d.episode.question.clone())))
        .collect();
    let n_neg = cfg.n_answers - 1;
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let mut planted = BTreeMap::new();
    for (g, drafts) in groups.iter().enumerate() {
        for (k, d) in drafts.iter().enumerate() {
            let mut negs: Vec<Array1<f64>> = drafts
                .iter()
                .enumerate()
                .filter(|&(j, s)| j != k && !s.episode.descriptive)
                .map(|(_, s)| s.episode.question.clone())
                .take(n_neg)
                .collect();
            while negs.len() < n_neg {
                let other: Vec<&Array1<f64>> = pool.iter().filter(|(pg, _)| *pg != g).map(|(_, q)| q).collect();
                if other.is_empty() {
                    negs.push(gaussian_unit(&mut rng, cfg.d_t));
                } else {
                    negs.push(other[rng.random_range(0..other.len())].clone());
                }
            }
            let mut ep = d.episode.clone();
            let views: Vec<ArrayView1<'_, f64>> = negs.iter().map(|v| v.view()).collect();
            ep.neg_questions = ndarray::stack(Axis(0), &views).expect("equal widths");
            planted.insert(ep.id.clone(), d.moment);
            episodes.push(ep);
        }
    }
    Ok(SynthDataset { format: ARCHIVE_FORMAT.into(), version: ARCHIVE_VERSION, config: cfg.clone(), world, episodes, planted })
}

fn generate_group(cfg: &SynthConfig, world: &World, g: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Draft> {
    let duration = if cfg.max_duration > cfg.min_duration { rng.random_range(cfg.min_duration..cfg.max_duration) } else { cfg.min_duration };
    let extent = VideoExtent::new(duration).expect("validated duration");
    let grid = FrameGrid::new(cfg.n_frames, extent).expect("validated frame count");
    let background = {
        let mut b = Array2::from_shape_simple_fn((cfg.n_frames, cfg.d_v), || rng.sample::<f64, _>(StandardNormal));
        for mut row in b.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        b
    };
    // distinct correct answers within a video
    let mut ids: Vec<usize> = (0..cfg.vocab_size).collect();
    ids.shuffle(rng);
    let corrects: Vec<usize> = ids[..size].to_vec();
    let others: Vec<usize> = ids[size..].to_vec();

    (0..size)
        .map(|k| {
            let answer = world.vocab.row(corrects[k]);
            let mut question = gaussian_unit(rng, cfg.d_t);
            if rng.random_bool(cfg.shortcut_rate) {
                let pull = unit(answer.dot(&world.shortcut));
                question = unit(question + pull * cfg.shortcut_strength);
            }
            let descriptive = rng.random_bool(cfg.descriptive_rate);

            // sibling answers first, then unrelated vocabulary
            let mut options: Vec<usize> = corrects.iter().copied().filter(|&c| c != corrects[k]).collect();
            options.truncate(cfg.n_answers - 1);
            let mut fill = others.clone();
            fill.shuffle(rng);
            options.extend(fill.into_iter().take(cfg.n_answers - 1 - options.len()));
            options.push(corrects[k]);
            options.shuffle(rng);
            let correct = options.iter().position(|&o| o == corrects[k]).expect("correct answer present");
            let answers = ndarray::stack(Axis(0), &options.iter().map(|&o| world.vocab.row(o)).collect::<Vec<_>>()).expect("equal widths");
            let wrong: Vec<usize> = (0..options.len()).filter(|&i| i != correct).collect();
            let distractor = options[wrong[rng.random_range(0..wrong.len())]];

            let length = cfg.moment_ratio * duration;
            let start = rng.random_range(0.0..=(duration - length));
            let moment = TemporalSegment::new(start, (start + length).min(duration)).expect("moment inside video");

            let pos = unit(answer.dot(&world.p_answer) + question.dot(&world.p_question));
            let neg = world.answer_direction(world.vocab.row(distractor));
            let noise_scale = cfg.noise_std / (cfg.d_v as f64).sqrt();
            let mut frames = background.clone();
            for (j, mut row) in frames.rows_mut().into_iter().enumerate() {
                let w = intersect_len(&grid.bin(j), &moment) / grid.bin_width();
                row.scaled_add(cfg.signal * w, &pos);
                row.scaled_add(cfg.signal * cfg.distractor * (1.0 - w), &neg);
                row.iter_mut().for_each(|x| *x += noise_scale * rng.sample::<f64, _>(StandardNormal));
            }

            let mut pos_variants = Vec::new();
            if rng.random_bool(cfg.pos_variant_rate) && cfg.max_pos_variants > 0 {
                let count = rng.random_range(1..=cfg.max_pos_variants);
                for _ in 0..count {
                    let jitter = gaussian_unit(rng, cfg.d_t) * 0.3;
                    pos_variants.push(unit(&question + &jitter));
                }
            }

            let episode = Episode {
                id: format!("v{g:05}_q{k}"),
                video_id: format!("v{g:05}"),
                frames,
                question,
                answers,
                correct,
                neg_questions: Array2::zeros((0, cfg.d_t)),
                pos_variants,
                gt_moment: Some(moment),
                extent,
                descriptive,
            };
            Draft { episode, moment }
        })
        .collect()
}

/// The planted moment of a generated episode.
pub fn oracle_grounding(ds: &SynthDataset, ep: &Episode<f64>) -> Result<TemporalSegment<f64>> {
    match (ds.planted.get(&ep.id), ep.gt_moment) {
        (Some(&m), Some(gt)) if m == gt => Ok(m),
        _ => Err(Error::NotSynthetic(ep.id.clone())),
    }
}

/// Indices of frames whose bin overlaps the moment by at least `min_cover`
/// of its width (`inside`), or not at all (`!inside`).
pub fn moment_frames(ep: &Episode<f64>, moment: &TemporalSegment<f64>, inside: bool) -> Result<Vec<usize>> {
    let grid = ep.grid()?;
    Ok((0..grid.n_frames())
        .filter(|&j| {
            let cover = intersect_len(&grid.bin(j), moment) / grid.bin_width();
            if inside {
                cover >= 0.5
            } else {
                cover == 0.0
            }
        })
        .collect())
}

/// Same episode with its frames replaced by `keep`, resampled to the
/// original frame count by nearest index.
pub fn resample_frames(ep: &Episode<f64>, keep: &[usize]) -> Episode<f64> {
    let n = ep.n_frames();
    let mut out = ep.clone();
    if keep.is_empty() {
        return out;
    }
    for j in 0..n {
        let src = keep[(j * keep.len()) / n];
        out.frames.row_mut(j).assign(&ep.frames.row(src));
    }
    out
}

/// Frames-blind answer scorer: `score_a = q^T W a`, softmax regression.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindScorer {
    pub weights: Array2<f64>,
}

impl BlindScorer {
    pub fn train(episodes: &[Episode<f64>], epochs: usize, lr: f64, l2: f64) -> Result<Self> {
        let first = episodes.first().ok_or(Error::EmptyDataset)?;
        let d = first.question.len();
        let mut w = Array2::<f64>::zeros((d, d));
        for _ in 0..epochs {
            let mut grad = Array2::<f64>::zeros((d, d));
            for ep in episodes {
                let qa = ep.answers.dot(&w.t().dot(&ep.question));
                let probs = crate::model::softmax(qa.view());
                for (a, row) in ep.answers.rows().into_iter().enumerate() {
                    let coef = probs[a] - if a == ep.correct { 1.0 } else { 0.0 };
                    for (i, &qi) in ep.question.iter().enumerate() {
                        grad.row_mut(i).scaled_add(coef * qi, &row);
                    }
                }
            }
            grad /= episodes.len() as f64;
            grad.scaled_add(l2, &w);
            w.scaled_add(-lr, &grad);
        }
        Ok(Self { weights: w })
    }

    pub fn scores(&self, ep: &Episode<f64>) -> Array1<f64> {
        ep.answers.dot(&self.weights.t().dot(&ep.question))
    }

    pub fn predict(&self, ep: &Episode<f64>) -> usize {
        crate::model::argmax(self.scores(ep).view())
    }

    pub fn accuracy(&self, episodes: &[Episode<f64>]) -> f64 {
        let hits = episodes.iter().filter(|e| self.predict(e) == e.correct).count();
        hits as f64 / episodes.len().max(1) as f64
    }
}

/// Frames-plus-question scorer that knows the world projections: mean frame
/// feature against each answer's frame-space direction, plus a small share of
/// the blind scores.
pub fn oracle_answer(world: &World, blind: &BlindScorer, ep: &Episode<f64>) -> usize {
    let pooled = ep.frames.mean_axis(Axis(0)).expect("frames non-empty");
    let blind = blind.scores(ep);
    let scores = Array1::from_iter(ep.answers.rows().into_iter().enumerate().map(|(a, row)| pooled.dot(&world.answer_direction(row)) + 0.01 * blind[a]));
    crate::model::argmax(scores.view())
}

/// Question ids in each diagnostic subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticSplit {
    /// Blind scorer answers wrongly.
    pub vqa: Vec<String>,
    /// Additionally wrong on moment-excluded frames and right on moment-only frames.
    pub gdqa: Vec<String>,
}

pub fn split_diagnostic(ds: &SynthDataset, episodes: &[Episode<f64>], blind: &BlindScorer) -> Result<DiagnosticSplit> {
    let mut out = DiagnosticSplit::default();
    for ep in episodes {
        if blind.predict(ep) == ep.correct {
            continue;
        }
        out.vqa.push(ep.id.clone());
        let moment = oracle_grounding(ds, ep)?;
        let inside = moment_frames(ep, &moment, true)?;
        let outside = moment_frames(ep, &moment, false)?;
        let pos_ok = !inside.is_empty() && oracle_answer(&ds.world, blind, &resample_frames(ep, &inside)) == ep.correct;
        let neg_ok = !outside.is_empty() && oracle_answer(&ds.world, blind, &resample_frames(ep, &outside)) == ep.correct;
        if pos_ok && !neg_ok {
            out.gdqa.push(ep.id.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate, random_baseline};

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig { n_episodes: n, seed, ..SynthConfig::default() }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = generate(&small(40, 3)).unwrap();
        let b = generate(&small(40, 3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate(&small(40, 4)).unwrap();
        assert_ne!(a.episodes[0].frames, c.episodes[0].frames);
    }

    #[test]
    fn episodes_are_well_formed() {
        let cfg = SynthConfig { pos_variant_rate: 0.5, descriptive_rate: 0.2, ..small(103, 1) };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.episodes.len(), 103);
        let mcfg = crate::model::ModelConfig { d_v: cfg.d_v, d_t: cfg.d_t, ..Default::default() };
        for ep in &ds.episodes {
            ep.validate(&mcfg).unwrap();
            assert_eq!(ep.neg_questions.nrows(), cfg.n_answers - 1);
            let m = ep.gt_moment.unwrap();
            assert!(m.start() >= 0.0 && m.end() <= ep.extent.duration());
            assert!((m.length() - 0.2 * ep.extent.duration()).abs() < 1e-9);
            assert!(ep.pos_variants.len() <= 5);
            // negatives are never the question itself
            for row in ep.neg_questions.rows() {
                assert_ne!(row, ep.question);
            }
        }
        // descriptive questions never show up as negatives
        let descriptive: Vec<_> = ds.episodes.iter().filter(|e| e.descriptive).map(|e| e.question.clone()).collect();
        assert!(!descriptive.is_empty());
        for ep in &ds.episodes {
            for row in ep.neg_questions.rows() {
                assert!(descriptive.iter().all(|d| d.view() != row));
            }
        }
    }

    #[test]
    fn moment_covers_about_a_fifth_of_the_frames() {
        let ds = generate(&small(400, 2)).unwrap();
        let mut total = 0.0;
        for ep in &ds.episodes {
            let grid = ep.grid().unwrap();
            let m = ep.gt_moment.unwrap();
            total += (0..32).map(|j| intersect_len(&grid.bin(j), &m) / grid.bin_width()).sum::<f64>();
        }
        let mean = total / ds.episodes.len() as f64;
        assert!((mean - 6.4).abs() < 1e-9, "{mean}");
    }

    #[test]
    fn oracle_returns_planted_moment() {
        let ds = generate(&small(20, 5)).unwrap();
        let ep = &ds.episodes[3];
        let m = oracle_grounding(&ds, ep).unwrap();
        assert_eq!(Some(m), ep.gt_moment);
        assert_eq!(crate::temporal::iou(&m, &m), 1.0);
        let mut foreign = ep.clone();
        foreign.id = "elsewhere".into();
        assert!(matches!(oracle_grounding(&ds, &foreign), Err(Error::NotSynthetic(_))));
        let mut moved = ep.clone();
        moved.gt_moment = Some(TemporalSegment::new(0.0, 1.0).unwrap());
        assert!(oracle_grounding(&ds, &moved).is_err());
    }

    #[test]
    fn whole_video_baseline_scores_the_moment_ratio() {
        let ds = generate(&small(1000, 6)).unwrap();
        let labels = SynthDataset::labels(&ds.episodes);
        let report = evaluate(&random_baseline(&labels, 0), &labels).unwrap();
        assert!((report.m_iop - 20.0).abs() <= 2.0, "{}", report.m_iop);
        assert!((report.m_iou - 20.0).abs() <= 2.0, "{}", report.m_iou);
    }

    #[test]
    fn blind_scorer_is_at_chance_without_shortcuts() {
        let ds = generate(&SynthConfig { shortcut_rate: 0.0, ..small(1200, 8) }).unwrap();
        let (train, test) = ds.split(0.5);
        let blind = BlindScorer::train(&train, 60, 0.5, 1e-3).unwrap();
        let acc = blind.accuracy(&test);
        assert!((acc - 0.2).abs() < 0.05, "{acc}");
    }

    #[test]
    fn shortcut_questions_are_blind_answerable() {
        let ds = generate(&SynthConfig { shortcut_rate: 1.0, ..small(800, 9) }).unwrap();
        let (train, test) = ds.split(0.5);
        let blind = BlindScorer::train(&train, 100, 1.0, 0.0).unwrap();
        let split = split_diagnostic(&ds, &test, &blind).unwrap();
        assert!(split.vqa.is_empty(), "{} of {}", split.vqa.len(), test.len());
    }

    #[test]
    fn diagnostic_subsets_nest() {
        let cfg = SynthConfig { shortcut_rate: 0.0, noise_std: 0.0, ..small(400, 10) };
        let ds = generate(&cfg).unwrap();
        let (train, test) = ds.split(0.5);
        let blind = BlindScorer::train(&train, 60, 0.5, 1e-3).unwrap();
        let split = split_diagnostic(&ds, &test, &blind).unwrap();
        assert!(split.gdqa.iter().all(|id| split.vqa.contains(id)));
        // without shortcuts the blind scorer misses about (A - 1) / A
        let frac = split.vqa.len() as f64 / test.len() as f64;
        assert!((frac - 0.8).abs() < 0.06, "{frac}");
        // noiseless moments answer the question, the rest of the video does not
        assert!(split.gdqa.len() as f64 >= 0.9 * split.vqa.len() as f64, "{} / {}", split.gdqa.len(), split.vqa.len());
    }

    #[test]
    fn resampling_keeps_frame_count() {
        let ds = generate(&small(4, 11)).unwrap();
        let ep = &ds.episodes[0];
        let out = resample_frames(ep, &[2, 5]);
        assert_eq!(out.frames.nrows(), 32);
        assert_eq!(out.frames.row(0), ep.frames.row(2));
        assert_eq!(out.frames.row(31), ep.frames.row(5));
    }

    #[test]
    fn archive_round_trip_and_split() {
        let ds = generate(&small(30, 12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.json");
        ds.save(&path).unwrap();
        assert_eq!(SynthDataset::load(&path).unwrap(), ds);
        let (a, b) = ds.split(0.5);
        assert_eq!(a.len() + b.len(), 30);
        assert_ne!(a.last().unwrap().video_id, b[0].video_id);
    }

    #[test]
    fn bad_configs_are_rejected() {
        for cfg in [
            SynthConfig { moment_ratio: 0.0, ..SynthConfig::default() },
            SynthConfig { moment_ratio: 1.0, ..SynthConfig::default() },
            SynthConfig { n_answers: 1, ..SynthConfig::default() },
            SynthConfig { shortcut_rate: 1.5, ..SynthConfig::default() },
            SynthConfig { n_episodes: 0, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        }
    }
}
