//! Command-line entry points.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::annotations::{compute_stats, labels_to_csv, load_labels};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_with, predictions_to_json, random_baseline, read_predictions, EvalOptions, MetricReport};
use crate::model::{InferenceOptions, QaModel, WindowSource};
use crate::svg;
use crate::synth::{generate, SynthDataset};
use crate::trainer::{predict_episodes, select_gamma, train, Objective, RunConfig, GAMMA_CHOICES};

/// Default output directory when `--out` is not given.
pub const DATA_DIR_ENV: &str = "GVQA_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "gvqa", version, about = "Grounded video QA: metrics, statistics and Gaussian-mask grounding on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a prediction file against labels; writes report.json and report.csv.
    Eval {
        /// Predictions: JSON map from question id to {answer, start, end}.
        #[arg(long)]
        pred: PathBuf,
        /// Labels in CSV or JSON form.
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        out: OutDir,
        /// Also report IoU/IoP at 0.1 .. 0.9.
        #[arg(long)]
        extended: bool,
    },
    /// Dataset statistics; writes stats.json and stats.svg.
    Stats {
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Whole-video, fixed-answer predictions for every labelled question.
    Baseline {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0)]
        answer: usize,
        /// Output prediction file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic episode archive and its labels.
    GenSynth {
        /// TOML run config; only the [synth] table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Generate synthetic data, train, and write checkpoint, history,
    /// test predictions, labels, report and timeline SVGs.
    TrainSynth(TrainArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory (defaults to $GVQA_DATA_DIR, then the current directory).
    #[arg(long = "out")]
    pub dir: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self) -> Result<PathBuf> {
        let dir = self.dir.clone().or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run config with optional [synth], [model] and [schedule] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ng or ng+
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Confidence-interval width; chosen from {1.0, 0.8} on validation when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long = "k-masks")]
    pub k_masks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// gaussian, attention or fused
    #[arg(long)]
    pub window: Option<WindowSource>,
    /// Number of test questions to draw timelines for.
    #[arg(long, default_value_t = 8)]
    pub timelines: usize,
    #[command(flatten)]
    pub out: OutDir,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_eval(pred: &Path, labels: &Path, out: &Path, extended: bool) -> Result<MetricReport> {
    let labels = load_labels(labels)?;
    let preds = read_predictions(pred)?;
    let report = evaluate_with(&preds, &labels, &EvalOptions { extended_thresholds: if extended { (1..10).map(|k| k as f64 / 10.0).collect() } else { Vec::new() } })?;
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

fn cmd_stats(labels: &Path, out: &Path) -> Result<()> {
    let labels = load_labels(labels)?;
    let stats = compute_stats(&labels)?;
    write(&out.join("stats.json"), &stats.to_json())?;
    write(&out.join("stats.svg"), &svg::stats_figure(&stats))?;
    println!(
        "videos {}  questions {}  segments {}  seg dur {:.1}s  video dur {:.1}s  ratio {:.2}",
        stats.n_videos, stats.n_questions, stats.n_segments, stats.mean_seg_dur, stats.mean_vid_dur, stats.mean_ratio
    );
    Ok(())
}

fn cmd_train_synth(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::standard(),
    };
    if let Some(o) = args.objective {
        cfg.schedule.objective = o;
    }
    if let Some(a) = args.alpha {
        cfg.schedule.alpha = a;
    }
    if let Some(f) = args.frames {
        cfg.synth.n_frames = f;
    }
    if let Some(k) = args.k_masks {
        cfg.model.n_masks = k;
    }
    if let Some(s) = args.seed {
        cfg.synth.seed = s;
        cfg.model.seed = s;
        cfg.schedule.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.schedule.epochs = e;
    }
    if let Some(n) = args.episodes {
        cfg.synth.n_episodes = n;
    }
    if let Some(w) = args.window {
        cfg.schedule.window = w;
    }
    if let Some(g) = args.gamma {
        if !(g > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {g}")));
        }
        cfg.schedule.gamma = g;
    }
    cfg.fill_dims();
    let out = args.out.resolve()?;

    let ds = generate(&cfg.synth)?;
    let (train_set, rest) = ds.split(cfg.train_frac);
    let val_share = cfg.val_frac / (1.0 - cfg.train_frac);
    let rest_ds = SynthDataset { episodes: rest, ..ds.clone() };
    let (val_set, test_set) = rest_ds.split(val_share);
    if test_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("not enough episodes for validation and test splits".into()));
    }
    let model = QaModel::new(cfg.model.clone())?;
    let (model, history) = train(model, &train_set, &val_set, &cfg.schedule)?;
    for w in &history.warnings {
        eprintln!("warning: {w}");
    }
    let gamma = match args.gamma {
        Some(g) => g,
        None => select_gamma(&model, &val_set, &GAMMA_CHOICES, cfg.schedule.window)?.0,
    };
    cfg.schedule.gamma = gamma;
    let opts = InferenceOptions { gamma, window: cfg.schedule.window, ..InferenceOptions::default() };
    let preds = predict_episodes(&model, &test_set, &opts)?;
    let labels = SynthDataset::labels(&test_set);
    let report = crate::metrics::evaluate(&preds, &labels)?;

    model.checkpoint().save(&out.join("checkpoint.json"))?;
    write(&out.join("history.csv"), &history.to_csv())?;
    write(&out.join("predictions.json"), &predictions_to_json(&preds))?;
    write(&out.join("labels.csv"), &labels_to_csv(&labels))?;
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("report.csv"), &report.to_csv())?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    let tl_dir = out.join("timelines");
    std::fs::create_dir_all(&tl_dir).map_err(|e| Error::io(&tl_dir, e))?;
    for ep in test_set.iter().take(args.timelines) {
        let p = model.predict(ep, &opts)?;
        let gt: Vec<_> = ep.gt_moment.into_iter().collect();
        let svg = svg::timeline(&svg::TimelineInput {
            question_id: &ep.id,
            duration: ep.extent.duration(),
            mask: Some(&p.mask),
            trace: &p.trace,
            ground_truth: &gt,
            prediction: Some(p.window),
        });
        write(&tl_dir.join(format!("{}.svg", ep.id)), &svg)?;
    }
    let r = report.rounded();
    println!(
        "{:?} gamma {gamma}: Acc@QA {:.1}  Acc@GQA {:.1}  mIoP {:.1}  mIoU {:.1}  (best epoch {:?}, {:.1}s)",
        cfg.schedule.objective,
        r.acc_qa,
        r.acc_gqa,
        r.m_iop,
        r.m_iou,
        history.best_epoch,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval { pred, labels, out, extended } => {
            let dir = out.resolve()?;
            let report = cmd_eval(&pred, &labels, &dir, extended)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Stats { labels, out } => cmd_stats(&labels, &out.resolve()?),
        Command::Baseline { labels, answer, output } => {
            let labels = load_labels(&labels)?;
            write(&output, &predictions_to_json(&random_baseline(&labels, answer)))
        }
        Command::GenSynth { config, seed, episodes, frames, out } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::standard(),
            };
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = episodes {
                cfg.synth.n_episodes = n;
            }
            if let Some(f) = frames {
                cfg.synth.n_frames = f;
            }
            let dir = out.resolve()?;
            let ds = generate(&cfg.synth)?;
            ds.save(&dir.join("episodes.json"))?;
            write(&dir.join("labels.csv"), &labels_to_csv(&SynthDataset::labels(&ds.episodes)))
        }
        Command::TrainSynth(args) => cmd_train_synth(&args),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
