//! Per-task orchestration of the incremental loop and the three
//! comparison modes.
//!
//! A run pre-trains once on the initial series, then folds tasks through
//! a mode-specific update: `static` applies the pre-trained model and its
//! frozen threshold unchanged; `it` re-trains on the retained history
//! plus the evolving normals; `iadcps` additionally mixes history toward
//! the evolving distribution and finishes with the meta fine-tuning step.
//! Scores stream into a bounded memory from which the dynamic threshold
//! is recomputed after every task (except in `static` mode).
//!
//! Retention follows the one-preceding-task memory rule: after task K the
//! raw train split of task K becomes the history for task K+1; for the
//! first task the history is the initial training series. Normalization
//! stats are refit per task on (history + evolving train split) so the
//! scaling tracks covariate shift; `static` keeps the pre-training stats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Report, ScoredPoint};
use crate::mixup::{build_mixed_dataset, MixupConfig};
use crate::rng::derive_seed;
use crate::scoring::{estimate_noise, residual_score, ScorerKind, UnscentedScorer};
use crate::ssm::{meta_finetune, train_standard, SsmModel, TrainConfig};
use crate::threshold::{compute_threshold, KdeResult, ScoreMemory, ThresholdConfig};
use crate::timeseries::{apply_norm, sliding_pairs, Label, NormStats, TimeSeries, WindowPair};

/// Comparison mode for an incremental run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Pre-trained model and frozen threshold, no adaptation.
    Static,
    /// Incremental re-training on history plus evolving normals.
    It,
    /// Mixup-aligned incremental re-training plus the meta step.
    Iadcps,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Static => "static",
            Mode::It => "it",
            Mode::Iadcps => "iadcps",
        }
    }

    pub fn all() -> [Mode; 3] {
        [Mode::Static, Mode::It, Mode::Iadcps]
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "static" => Ok(Mode::Static),
            "it" => Ok(Mode::It),
            "iadcps" => Ok(Mode::Iadcps),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected static, it, or iadcps)"
            ))),
        }
    }
}

/// Everything a run needs beyond the data itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Sliding-window length.
    pub window: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Tail fraction of the initial pairs held out for validation.
    pub val_frac: f64,
    pub scorer: ScorerKind,
    /// Points taken as the train split when a task arrives as one series.
    pub task_train_len: usize,
    /// Skip a failing task and carry the previous model forward.
    pub continue_on_task_error: bool,
    pub train: TrainConfig,
    pub mixup: MixupConfig,
    pub threshold: ThresholdConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Iadcps,
            window: 31,
            latent_dim: 8,
            hidden: 64,
            seed: 0,
            val_frac: 0.1,
            scorer: ScorerKind::Filter,
            task_train_len: 1000,
            continue_on_task_error: false,
            train: TrainConfig::default(),
            mixup: MixupConfig::default(),
            threshold: ThresholdConfig::default(),
        }
    }
}

/// The per-task quadruple: retained history pairs, the few evolving
/// normals, the generated mixed pairs, and the query pairs.
///
/// The three training sets never contain anomalous-labeled pairs.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub d_train: Vec<WindowPair>,
    pub d_meta: Vec<WindowPair>,
    pub d_mix: Vec<WindowPair>,
    pub d_query: Vec<WindowPair>,
}

/// Artifacts of the one-off pre-training phase.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: SsmModel,
    pub stats: NormStats,
    pub process_noise: Vec<f64>,
    pub measurement_noise: Vec<f64>,
    pub val_scores: Vec<f64>,
    /// Frozen threshold used by `static` mode throughout.
    pub threshold: KdeResult,
    pub report: Report,
    pub epoch_losses: Vec<f64>,
}

/// Output of one incremental task.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub task_index: usize,
    pub mode: Mode,
    pub report: Report,
    pub kde: KdeResult,
    pub scores: Vec<ScoredPoint>,
    pub model: SsmModel,
    pub warnings: Vec<String>,
}

/// Aggregates over one mode's task sequence.
#[derive(Debug, Clone)]
pub struct ModeSummary {
    pub mode: Mode,
    pub mean_auc: Option<f64>,
    pub mean_f1: f64,
    pub tasks: Vec<TaskOutput>,
    /// Tasks skipped under `continue_on_task_error`, with their diagnostics.
    pub skipped: Vec<(usize, String)>,
}

/// Full experiment result: the shared pre-training plus per-mode folds.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub pretrained: Pretrained,
    pub modes: Vec<ModeSummary>,
}

/// Keep pairs usable for training: anything not labeled anomalous.
fn trainable(pairs: Vec<WindowPair>) -> Vec<WindowPair> {
    pairs
        .into_iter()
        .filter(|p| p.label != Label::Anomalous)
        .collect()
}

/// Order-preserving union of pair groups with exact-duplicate removal
/// (value equality; negative zero equals positive zero).
pub fn merge_pairs(groups: &[&[WindowPair]]) -> Vec<WindowPair> {
    let all: Vec<&WindowPair> = groups.iter().flat_map(|g| g.iter()).collect();
    let cmp_values = |a: &WindowPair, b: &WindowPair| -> std::cmp::Ordering {
        let norm = |v: f64| v + 0.0; // maps -0.0 onto +0.0
        let seq = |p: &WindowPair| {
            p.x.iter()
                .chain(p.u.iter())
                .chain(p.y.iter())
                .copied()
                .collect::<Vec<f64>>()
        };
        let (sa, sb) = (seq(a), seq(b));
        for (va, vb) in sa.iter().zip(sb.iter()) {
            let ord = norm(*va).total_cmp(&norm(*vb));
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        sa.len()
            .cmp(&sb.len())
            .then(a.label.code().cmp(&b.label.code()))
    };
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&i, &j| cmp_values(all[i], all[j]).then(i.cmp(&j)));
    let mut keep = vec![true; all.len()];
    for pair in order.windows(2) {
        if cmp_values(all[pair[0]], all[pair[1]]) == std::cmp::Ordering::Equal {
            keep[pair[1]] = false;
        }
    }
    all.into_iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, p)| p.clone())
        .collect()
}

fn score_pairs(
    model: &SsmModel,
    pairs: &[WindowPair],
    q: &[f64],
    r: &[f64],
    kind: ScorerKind,
) -> Result<Vec<f64>> {
    match kind {
        ScorerKind::Filter => UnscentedScorer::new(model).score_series(pairs, q, r),
        ScorerKind::Residual => pairs.iter().map(|p| residual_score(model, p)).collect(),
    }
}

/// Pre-train once on the initial series and freeze the static-mode
/// artifacts (normalization stats, noise estimate, threshold).
pub fn pretrain(initial: &TimeSeries, cfg: &RunConfig) -> Result<Pretrained> {
    let stats = NormStats::fit_many(&[initial])?;
    let normalized = apply_norm(initial, &stats)?;
    let pairs = trainable(sliding_pairs(&normalized, cfg.window)?);
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no trainable pairs in the initial series".into()));
    }
    let val_len = ((pairs.len() as f64 * cfg.val_frac).ceil() as usize)
        .clamp(1, pairs.len().saturating_sub(1).max(1));
    let split = pairs.len() - val_len;
    if split == 0 {
        return Err(Error::TooFew {
            context: "initial pairs after the validation split".into(),
            needed: 2,
            got: pairs.len(),
        });
    }
    let (train_pairs, val_pairs) = pairs.split_at(split);

    let model = SsmModel::new(
        cfg.window,
        initial.num_sensors(),
        initial.num_actuators(),
        cfg.latent_dim,
        cfg.hidden,
        derive_seed(cfg.seed, "model-init", 0),
    )?;
    let outcome = train_standard(
        &model,
        train_pairs,
        &TrainConfig {
            seed: derive_seed(cfg.seed, "pretrain", 0),
            ..cfg.train.clone()
        },
    )?;
    let (q, r) = estimate_noise(&outcome.model, val_pairs)?;
    let val_scores = score_pairs(&outcome.model, val_pairs, &q, &r, cfg.scorer)?;
    let threshold = compute_threshold(&val_scores, &cfg.threshold)?;
    let labels: Vec<Label> = val_pairs.iter().map(|p| p.label).collect();
    let preds: Vec<bool> = val_scores.iter().map(|&s| threshold.classify(s)).collect();
    let report = Report::build(&labels, &preds, &val_scores, threshold.threshold)?;
    Ok(Pretrained {
        model: outcome.model,
        stats,
        process_noise: q,
        measurement_noise: r,
        val_scores,
        threshold,
        report,
        epoch_losses: outcome.epoch_losses,
    })
}

/// One mode's fold over the task sequence.
pub struct ModeRun<'a> {
    cfg: &'a RunConfig,
    mode: Mode,
    pretrained: &'a Pretrained,
    model: SsmModel,
    history: TimeSeries,
    memory: ScoreMemory,
    task_index: usize,
}

impl<'a> ModeRun<'a> {
    /// Start a fold from the shared pre-training artifacts. The initial
    /// series becomes the first task's history; the score memory is
    /// seeded with the pre-training validation scores.
    pub fn new(pretrained: &'a Pretrained, initial: &TimeSeries, cfg: &'a RunConfig, mode: Mode) -> Self {
        let mut memory = ScoreMemory::new(cfg.threshold.memory);
        memory.push_scores(&pretrained.val_scores);
        ModeRun {
            cfg,
            mode,
            pretrained,
            model: pretrained.model.clone(),
            history: initial.clone(),
            memory,
            task_index: 0,
        }
    }

    /// Assemble the task's quadruple under the mode's rules; the mixed
    /// set stays empty outside `iadcps`.
    fn build_dataset(
        &self,
        train: &TimeSeries,
        test: &TimeSeries,
        warnings: &mut Vec<String>,
    ) -> Result<TaskDataset> {
        let cfg = self.cfg;
        let k = self.task_index;
        let stats = match self.mode {
            Mode::Static => self.pretrained.stats.clone(),
            _ => NormStats::fit_many(&[&self.history, train])?,
        };
        let d_train = trainable(sliding_pairs(&apply_norm(&self.history, &stats)?, cfg.window)?);
        let d_meta = trainable(sliding_pairs(&apply_norm(train, &stats)?, cfg.window)?);
        let d_query = sliding_pairs(&apply_norm(test, &stats)?, cfg.window)?;
        if d_meta.is_empty() {
            return Err(Error::EmptyInput(format!(
                "task {k}: no normal pairs in the evolving train split"
            )));
        }
        let d_mix = if self.mode == Mode::Iadcps {
            let mix_cfg = MixupConfig {
                pairing_seed: derive_seed(cfg.seed, "mixup-pairing", k as u64),
                ..cfg.mixup.clone()
            };
            let mixed = build_mixed_dataset(&d_train, &d_meta, &mix_cfg)
                .map_err(|e| stage_error("mixup", k, e))?;
            warnings.extend(mixed.warnings);
            mixed.pairs
        } else {
            Vec::new()
        };
        debug_assert!(d_train
            .iter()
            .chain(d_meta.iter())
            .chain(d_mix.iter())
            .all(|p| p.label != Label::Anomalous));
        Ok(TaskDataset {
            d_train,
            d_meta,
            d_mix,
            d_query,
        })
    }

    /// Execute one incremental task: adapt the model per the mode, score
    /// the query split, update memory and threshold, and retain the
    /// task's train split as the next history. State commits only when
    /// every stage succeeds, so a failed task leaves the fold at the
    /// previous model.
    pub fn run_task(&mut self, train: &TimeSeries, test: &TimeSeries) -> Result<TaskOutput> {
        let cfg = self.cfg;
        let k = self.task_index;
        let mut warnings = Vec::new();
        let ds = self.build_dataset(train, test, &mut warnings)?;

        let train_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, "task-train", k as u64),
            ..cfg.train.clone()
        };
        let model = match self.mode {
            Mode::Static => self.model.clone(),
            Mode::It => {
                let merged = merge_pairs(&[&ds.d_train, &ds.d_meta]);
                train_standard(&self.model, &merged, &train_cfg)
                    .map_err(|e| stage_error("standard training", k, e))?
                    .model
            }
            Mode::Iadcps => {
                let merged = merge_pairs(&[&ds.d_train, &ds.d_mix, &ds.d_meta]);
                let outcome = train_standard(&self.model, &merged, &train_cfg)
                    .map_err(|e| stage_error("standard training", k, e))?;
                let meta = meta_finetune(&outcome.model, &ds.d_meta, &train_cfg)
                    .map_err(|e| stage_error("meta fine-tuning", k, e))?;
                warnings.extend(meta.warnings);
                meta.model
            }
        };

        let (q, r) = match self.mode {
            Mode::Static => (
                self.pretrained.process_noise.clone(),
                self.pretrained.measurement_noise.clone(),
            ),
            _ => {
                let calib: &[WindowPair] = if ds.d_meta.len() >= 10 {
                    &ds.d_meta
                } else {
                    &ds.d_train
                };
                estimate_noise(&model, calib).map_err(|e| stage_error("noise estimation", k, e))?
            }
        };
        let scores = score_pairs(&model, &ds.d_query, &q, &r, cfg.scorer)
            .map_err(|e| stage_error("scoring", k, e))?;

        let mut memory = self.memory.clone();
        memory.push_scores(&scores);
        let kde = match self.mode {
            Mode::Static => self.pretrained.threshold.clone(),
            _ => compute_threshold(&memory.scores(), &cfg.threshold)
                .map_err(|e| stage_error("threshold", k, e))?,
        };

        let labels: Vec<Label> = ds.d_query.iter().map(|p| p.label).collect();
        let preds: Vec<bool> = scores.iter().map(|&s| kde.classify(s)).collect();
        let report = Report::build(&labels, &preds, &scores, kde.threshold)
            .map_err(|e| stage_error("evaluation", k, e))?;

        let scored: Vec<ScoredPoint> = scores
            .iter()
            .zip(ds.d_query.iter())
            .enumerate()
            .map(|(i, (&score, pair))| ScoredPoint {
                t: test.points()[i + cfg.window].t,
                score,
                label: pair.label,
            })
            .collect();

        // commit
        self.model = model;
        self.memory = memory;
        self.history = train.clone();
        self.task_index += 1;
        Ok(TaskOutput {
            task_index: k,
            mode: self.mode,
            report,
            kde,
            scores: scored,
            model: self.model.clone(),
            warnings,
        })
    }

    /// Index of the task the next `run_task` call will execute.
    pub fn next_task_index(&self) -> usize {
        self.task_index
    }

    /// Skip a failed task: keep the model and memory, advance the index,
    /// and retain the failed task's train split as history.
    fn skip_task(&mut self, train: &TimeSeries) {
        self.history = train.clone();
        self.task_index += 1;
    }
}

fn stage_error(stage: &str, task: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("task {task} {stage}: {msg}")),
        other => Error::InvalidArgument(format!("task {task} {stage}: {other}")),
    }
}

/// Pre-train once, then fold every requested mode over the task list.
pub fn run_experiment(
    initial: &TimeSeries,
    tasks: &[(TimeSeries, TimeSeries)],
    modes: &[Mode],
    cfg: &RunConfig,
) -> Result<ExperimentResult> {
    let pretrained = pretrain(initial, cfg)?;
    let mut mode_summaries = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut fold = ModeRun::new(&pretrained, initial, cfg, mode);
        let mut outputs = Vec::with_capacity(tasks.len());
        let mut skipped = Vec::new();
        for (train, test) in tasks {
            match fold.run_task(train, test) {
                Ok(output) => outputs.push(output),
                Err(e) if cfg.continue_on_task_error => {
                    skipped.push((fold.next_task_index(), e.to_string()));
                    fold.skip_task(train);
                }
                Err(e) => return Err(e),
            }
        }
        let aucs: Vec<f64> = outputs.iter().filter_map(|t| t.report.auc).collect();
        let mean_auc = if aucs.is_empty() {
            None
        } else {
            Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
        };
        let mean_f1 = if outputs.is_empty() {
            0.0
        } else {
            outputs.iter().map(|t| t.report.f1).sum::<f64>() / outputs.len() as f64
        };
        mode_summaries.push(ModeSummary {
            mode,
            mean_auc,
            mean_f1,
            tasks: outputs,
            skipped,
        });
    }
    Ok(ExperimentResult {
        pretrained,
        modes: mode_summaries,
    })
}
