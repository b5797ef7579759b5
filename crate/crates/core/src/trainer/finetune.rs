use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::{adam_step, AdamConfig, AdamState, Float, Mode, ParamStore, Tape, Tensor};

use super::tasks::{predict_records, EvalItem};
use super::{lr_at, TrainerError};
use crate::encoder::{Bound, DropoutKeys, EncoderConfig};
use crate::heads::{init_head_params, task_loss, TaskSpec, TrainExample};
use crate::metrics::{evaluate_records, MetricKind, MetricReport, QaNormalization};

/// One point of the fine-tuning grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub warmup_fraction: f64,
    /// Token limit for task inputs.
    pub max_len: usize,
}

impl Default for FinetuneGrid {
    fn default() -> Self {
        Self {
            batch_sizes: vec![16, 32],
            learning_rates: vec![5e-5, 3e-5, 2e-5],
            epochs: vec![2, 3, 4],
            warmup_fraction: 0.1,
            max_len: 128,
        }
    }
}

impl FinetuneGrid {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.batch_sizes.is_empty() || self.learning_rates.is_empty() || self.epochs.is_empty() {
            return Err(TrainerError::InvalidSchedule(
                "grid needs at least one batch size, learning rate and epoch count".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) || self.max_len < 3 {
            return Err(TrainerError::InvalidSchedule(format!(
                "warmup_fraction {} must lie in [0, 1) and max_len {} be at least 3",
                self.warmup_fraction, self.max_len
            )));
        }
        Ok(())
    }

    /// Every combination, batch-major.
    pub fn points(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &batch in &self.batch_sizes {
            for &lr in &self.learning_rates {
                for &epochs in &self.epochs {
                    out.push(HyperParams { batch, lr, epochs });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneOptions {
    pub seed: u64,
    pub warmup_fraction: f64,
    /// Selection metric; `None` picks the task default.
    pub metric: Option<MetricKind>,
    pub eval_batch: usize,
    pub exclude_punct: bool,
    pub max_answer_len: usize,
    pub qa_normalization: QaNormalization,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            warmup_fraction: 0.1,
            metric: None,
            eval_batch: 32,
            exclude_punct: false,
            max_answer_len: 30,
            qa_normalization: QaNormalization::default(),
        }
    }
}

pub struct FinetuneOutcome<T> {
    /// Encoder and head parameters from the best epoch.
    pub params: ParamStore<T>,
    pub best_score: f64,
    /// 1-based epoch of the best dev score.
    pub best_epoch: usize,
    pub epoch_scores: Vec<f64>,
    pub report: MetricReport,
}

/// Scores evaluation items with the task's metric.
pub fn evaluate<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    items: &[EvalItem],
    opts: &FinetuneOptions,
) -> Result<MetricReport, TrainerError> {
    let records = predict_records(params, cfg, task, items, opts.eval_batch, opts.max_answer_len)?;
    let metric = opts.metric.unwrap_or_else(|| super::default_metric(task));
    evaluate_records(&task.name, metric, &records, opts.exclude_punct, &opts.qa_normalization)
        .map_err(|e| TrainerError::InvalidData(format!("dev evaluation: {e}")))
}

/// Encoder parameters plus a fresh output layer; the pre-training head is
/// dropped.
pub fn task_params<T: Float>(
    encoder: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    seed: u64,
) -> Result<ParamStore<T>, TrainerError> {
    let mut params = encoder.clone();
    params.retain(|p| !p.name.starts_with("mlm.") && !p.name.starts_with("head."));
    let head = init_head_params::<T>(cfg, task, seed).map_err(|e| TrainerError::InvalidData(e.to_string()))?;
    params.extend(head);
    Ok(params)
}

/// Fine-tunes the encoder with a task head on `train` and keeps the
/// parameters of the epoch with the best dev score (earliest on ties).
/// Adam with decoupled weight decay 0.01; the learning rate warms up over
/// the first `warmup_fraction` of steps, then decays linearly to zero.
#[allow(clippy::too_many_arguments)]
pub fn finetune<T: Float>(
    encoder: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    train: &[TrainExample],
    dev: &[EvalItem],
    hp: &HyperParams,
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome<T>, TrainerError> {
    if hp.epochs == 0 || hp.batch == 0 || !(hp.lr > 0.0) {
        return Err(TrainerError::InvalidSchedule(format!(
            "epochs {} and batch {} must be positive and lr {} above zero",
            hp.epochs, hp.batch, hp.lr
        )));
    }
    if train.is_empty() || dev.is_empty() {
        return Err(TrainerError::InvalidData(
            "training and dev sets must be non-empty".into(),
        ));
    }
    if let Some(e) = train.iter().find(|e| e.kind() != task.kind) {
        return Err(TrainerError::InvalidData(format!(
            "task {} is {:?} but training data is {:?}",
            task.name,
            task.kind,
            e.kind()
        )));
    }
    let per_epoch = train.len().div_ceil(hp.batch);
    let total = (per_epoch * hp.epochs) as u64;
    if total < 2 {
        return Err(TrainerError::InvalidSchedule(format!(
            "{total} optimizer step(s) is too few for a warmup schedule"
        )));
    }
    let warmup = ((total as f64 * opts.warmup_fraction).round() as u64).clamp(1, total - 1);

    let mut params = task_params(encoder, cfg, task, opts.seed)?;
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut best: Option<(f64, usize, ParamStore<T>, MetricReport)> = None;
    let mut epoch_scores = Vec::with_capacity(hp.epochs);
    let mut step = 0u64;
    for epoch in 0..hp.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for idx in order.chunks(hp.batch) {
            let batch: Vec<&TrainExample> = idx.iter().map(|&i| &train[i]).collect();
            let lr = lr_at(step, total, warmup, hp.lr)?;
            if lr > 0.0 {
                let mut tape = Tape::new(Mode::Train);
                let model = Bound::new(&mut tape, &params);
                let mut keys = DropoutKeys::for_step(opts.seed, step, 0);
                let loss = task_loss(&mut tape, &model, cfg, task, &batch, &mut keys)
                    .map_err(|e| TrainerError::InvalidData(e.to_string()))?;
                let mut g = tape.backward(loss)?;
                let grads: Vec<Tensor<T>> = model
                    .vars
                    .iter()
                    .zip(params.iter())
                    .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.tensor.shape())))
                    .collect();
                adam_step(&mut params, &grads, &mut adam, lr)?;
            }
            step += 1;
        }
        let report = evaluate(&params, cfg, task, dev, opts)?;
        log::info!(
            "{} bs={} lr={} epoch {}: dev {} = {:.4}",
            task.name,
            hp.batch,
            hp.lr,
            epoch + 1,
            report.metric.name(),
            report.score
        );
        epoch_scores.push(report.score);
        if best.as_ref().map_or(true, |b| report.score > b.0) {
            best = Some((report.score, epoch + 1, params.clone(), report));
        }
    }
    let (best_score, best_epoch, params, report) = best.expect("at least one epoch");
    Ok(FinetuneOutcome {
        params,
        best_score,
        best_epoch,
        epoch_scores,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hp: HyperParams,
    pub score: f64,
    pub best_epoch: usize,
}

pub struct GridOutcome<T> {
    /// One row per grid point, in grid order.
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the selected point.
    pub best: usize,
    pub best_params: ParamStore<T>,
    pub best_report: MetricReport,
}

impl<T> GridOutcome<T> {
    /// Tab-separated table with a header row.
    pub fn table(&self) -> String {
        let mut out = String::from("batch\tlr\tepochs\tscore\tbest_epoch\tselected\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}\t{}",
                r.hp.batch,
                r.hp.lr,
                r.hp.epochs,
                r.score,
                r.best_epoch,
                (i == self.best) as u8
            );
        }
        out
    }
}

/// True when `a` should be selected over `b`: higher score, then smaller
/// learning rate, smaller batch, fewer epochs.
pub fn prefer(a: &GridRow, b: &GridRow) -> bool {
    let key = |r: &GridRow| (-r.score, r.hp.lr, r.hp.batch, r.hp.epochs);
    let (ka, kb) = (key(a), key(b));
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

/// Fine-tunes at every grid point and selects one by [`prefer`]. The grid's
/// warmup fraction overrides the one in `opts`.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<T: Float>(
    encoder: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    train: &[TrainExample],
    dev: &[EvalItem],
    grid: &FinetuneGrid,
    opts: &FinetuneOptions,
) -> Result<GridOutcome<T>, TrainerError> {
    grid.validate()?;
    let opts = &FinetuneOptions {
        warmup_fraction: grid.warmup_fraction,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    let mut best: Option<(usize, ParamStore<T>, MetricReport)> = None;
    for hp in grid.points() {
        let out = finetune(encoder, cfg, task, train, dev, &hp, opts)?;
        let row = GridRow {
            hp,
            score: out.best_score,
            best_epoch: out.best_epoch,
        };
        if best.as_ref().map_or(true, |(b, _, _)| prefer(&row, &rows[*b])) {
            best = Some((rows.len(), out.params, out.report));
        }
        rows.push(row);
    }
    let (best, best_params, best_report) = best.expect("non-empty grid");
    Ok(GridOutcome {
        rows,
        best,
        best_params,
        best_report,
    })
}
