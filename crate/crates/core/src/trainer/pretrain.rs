use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::{adam_step, AdamConfig, AdamState, Float, Mode, ParamStore, Tape, Tensor};

use super::{PretrainSchedule, TrainerError};
use crate::dataprep::PretrainExample;
use crate::encoder::{
    init_params, mlm_loss, save_checkpoint, Bound, Checkpoint, DropoutKeys, EncoderConfig, EncoderInput,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        phase: u8,
        lr: f64,
        loss: f64,
        acc: f64,
    },
    PhaseSwitch {
        step: u64,
        from: u8,
        to: u8,
    },
    Checkpoint {
        step: u64,
        /// File name inside the checkpoint directory.
        file: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainOptions {
    pub seed: u64,
    /// Examples per forward pass; the step's batch is split into chunks of
    /// this size and their gradients accumulated. 0 disables splitting.
    #[serde(default)]
    pub micro_batch: usize,
    /// Save a checkpoint every this many steps (0: never).
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Stop after this many completed steps instead of running to the end.
    #[serde(default)]
    pub stop_after: Option<u64>,
}

/// Metadata stored in pre-training checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainMeta {
    pub kind: String,
    pub step: u64,
    pub seed: u64,
    pub schedule: PretrainSchedule,
}

pub struct PretrainOutcome<T> {
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    /// Completed steps.
    pub step: u64,
    pub records: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl<T: Float> PretrainOutcome<T> {
    pub fn checkpoint(
        &self,
        cfg: &EncoderConfig,
        sched: &PretrainSchedule,
        seed: u64,
        vocab_hash: &str,
    ) -> Checkpoint<T> {
        Checkpoint {
            config: cfg.clone(),
            vocab_hash: vocab_hash.to_string(),
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            meta: toml::to_string(&PretrainMeta {
                kind: "pretrain".into(),
                step: self.step,
                seed,
                schedule: sched.clone(),
            })
            .expect("meta serializes"),
        }
    }

    /// Loss of the last completed step.
    pub fn last_loss(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Step { loss, .. } => Some(*loss),
            _ => None,
        })
    }
}

/// Deterministic example order: each epoch of each phase is an independent
/// shuffle, so the examples of a step depend only on the step number.
struct Sampler<'a> {
    seed: u64,
    data: [&'a [PretrainExample]; 2],
    perms: HashMap<(u8, u64), Vec<usize>>,
}

impl<'a> Sampler<'a> {
    fn perm(&mut self, phase: u8, epoch: u64) -> &[usize] {
        let n = self.data[phase as usize - 1].len();
        let seed = self.seed;
        self.perms.entry((phase, epoch)).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a4d_504c_4552);
            rng.set_stream(((phase as u64) << 48) | epoch);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
    }

    /// Examples for local step `local` of `phase` with `batch` examples.
    fn batch(&mut self, phase: u8, local: u64, batch: usize) -> Vec<&'a PretrainExample> {
        let data = self.data[phase as usize - 1];
        let n = data.len() as u64;
        let first = local * batch as u64;
        let mut out = Vec::with_capacity(batch);
        for k in first..first + batch as u64 {
            let (epoch, i) = (k / n, (k % n) as usize);
            self.perms.retain(|&(p, e), _| p != phase || e + 1 >= epoch);
            let idx = self.perm(phase, epoch)[i];
            out.push(&data[idx]);
        }
        out
    }
}

fn check_examples(
    examples: &[PretrainExample],
    phase: u8,
    max_len: usize,
    cfg: &EncoderConfig,
) -> Result<(), TrainerError> {
    for (i, e) in examples.iter().enumerate() {
        if e.input_ids.len() > max_len || e.input_ids.len() > cfg.max_positions {
            return Err(TrainerError::InvalidData(format!(
                "phase {phase} example {i} has length {}, limit {}",
                e.input_ids.len(),
                max_len.min(cfg.max_positions)
            )));
        }
        if let Some(&id) = e.input_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(TrainerError::InvalidData(format!(
                "phase {phase} example {i} contains id {id} beyond vocab_size {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(())
}

/// Forward and backward over one batch split into micro-batches. Returns the
/// batch loss and accuracy (means over labeled positions) and the summed
/// gradient of that mean.
pub(crate) fn accumulate<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    batch: &[&PretrainExample],
    micro: usize,
    seed: u64,
    step: u64,
) -> Result<Option<(f64, f64, Vec<Tensor<T>>)>, TrainerError> {
    let total: usize = batch.iter().map(|e| e.labeled_positions().count()).sum();
    if total == 0 {
        return Ok(None);
    }
    let micro = if micro == 0 { batch.len() } else { micro };
    let mut grads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
    let (mut loss, mut acc) = (0.0, 0.0);
    for (mi, chunk) in batch.chunks(micro).enumerate() {
        let (input, labels) = EncoderInput::from_examples(chunk);
        let labeled = labels.iter().filter(|l| l.is_some()).count();
        if labeled == 0 {
            continue;
        }
        let weight = labeled as f64 / total as f64;
        let mut tape = Tape::new(Mode::Train);
        let model = Bound::new(&mut tape, params);
        let mut keys = DropoutKeys::for_step(seed, step, mi as u64);
        let out = mlm_loss(&mut tape, &model, cfg, &input, &labels, &mut keys)?;
        loss += weight * tape.value(out.loss).item().to_f64();
        acc += weight * out.accuracy;
        let mut g = tape.backward(out.loss)?;
        let w = T::from_f64(weight);
        for (i, &v) in model.vars.iter().enumerate() {
            if let Some(gi) = g.take(v) {
                for (a, &b) in grads[i].data_mut().iter_mut().zip(gi.data()) {
                    *a += w * b;
                }
            }
        }
    }
    Ok(Some((loss, acc, grads)))
}

fn write_record(log: &mut dyn Write, r: &LogRecord) -> Result<(), TrainerError> {
    let line = serde_json::to_string(r).expect("record serializes");
    writeln!(log, "{line}").map_err(|e| TrainerError::Io {
        path: PathBuf::from("<loss log>"),
        source: e,
    })
}

/// Two-phase masked-language-model pre-training.
///
/// Step `s` (0-based) trains on phase-1 data with the phase-1 batch size
/// while `s < phase1_steps`, then on phase-2 data; it uses learning rate
/// `lr_at(s)`, and the parameter update is skipped when that rate is zero.
/// Dropout masks and example order are pure functions of
/// `(seed, step)`, so resuming from a checkpoint reproduces an uninterrupted
/// run bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn pretrain<T: Float>(
    cfg: &EncoderConfig,
    sched: &PretrainSchedule,
    phase1: &[PretrainExample],
    phase2: &[PretrainExample],
    opts: &PretrainOptions,
    vocab_hash: &str,
    resume: Option<Checkpoint<T>>,
    checkpoint_dir: Option<&Path>,
    log: &mut dyn Write,
) -> Result<PretrainOutcome<T>, TrainerError> {
    cfg.validate()?;
    sched.validate()?;
    let end = opts.stop_after.unwrap_or(sched.total_steps).min(sched.total_steps);
    if sched.phase1_steps > 0 && phase1.is_empty() {
        return Err(TrainerError::InvalidData("no phase-1 examples".into()));
    }
    if sched.total_steps > sched.phase1_steps && phase2.is_empty() {
        return Err(TrainerError::InvalidData(
            "no phase-2 examples; the schedule switches phase at step ".to_string() + &sched.phase1_steps.to_string(),
        ));
    }
    check_examples(phase1, 1, sched.phase1.max_len, cfg)?;
    check_examples(phase2, 2, sched.phase2.max_len, cfg)?;
    if opts.checkpoint_every > 0 && checkpoint_dir.is_none() {
        return Err(TrainerError::InvalidData(
            "checkpoint_every is set but no checkpoint directory was given".into(),
        ));
    }

    let (mut params, mut adam, start) = match resume {
        Some(ck) => {
            if ck.config != *cfg {
                return Err(TrainerError::Resume("checkpoint config differs".into()));
            }
            if !ck.vocab_hash.eq_ignore_ascii_case(vocab_hash) {
                return Err(TrainerError::Resume("checkpoint vocabulary hash differs".into()));
            }
            let meta: PretrainMeta =
                toml::from_str(&ck.meta).map_err(|e| TrainerError::Resume(format!("checkpoint metadata: {e}")))?;
            if meta.schedule != *sched || meta.seed != opts.seed {
                return Err(TrainerError::Resume("checkpoint schedule or seed differs".into()));
            }
            let adam = ck
                .adam
                .ok_or_else(|| TrainerError::Resume("checkpoint has no optimizer state".into()))?;
            (ck.params, adam, meta.step)
        }
        None => {
            let p = init_params::<T>(cfg)?;
            let a = AdamState::new(&p, AdamConfig::default());
            (p, a, 0)
        }
    };

    let mut sampler = Sampler {
        seed: opts.seed,
        data: [phase1, phase2],
        perms: HashMap::new(),
    };
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut emit = |r: LogRecord, records: &mut Vec<LogRecord>| -> Result<(), TrainerError> {
        write_record(log, &r)?;
        records.push(r);
        Ok(())
    };

    for step in start..end {
        let phase = sched.phase_of(step);
        if step == sched.phase1_steps && step > 0 {
            emit(LogRecord::PhaseSwitch { step, from: 1, to: 2 }, &mut records)?;
        }
        let local = if phase == 1 { step } else { step - sched.phase1_steps };
        let batch = sampler.batch(phase, local, sched.phase(phase).batch);
        let lr = sched.lr(step)?;
        let Some((loss, acc, grads)) = accumulate(&params, cfg, &batch, opts.micro_batch, opts.seed, step)? else {
            log::warn!("step {step}: batch has no labeled positions, skipped");
            continue;
        };
        if lr > 0.0 {
            adam_step(&mut params, &grads, &mut adam, lr)?;
        }
        emit(
            LogRecord::Step {
                step,
                phase,
                lr,
                loss,
                acc,
            },
            &mut records,
        )?;
        let done = step + 1;
        if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 {
            let dir = checkpoint_dir.expect("checked above");
            let file = format!("step-{done:08}.ckpt");
            let path = dir.join(&file);
            let outcome = PretrainOutcome {
                params: params.clone(),
                adam: adam.clone(),
                step: done,
                records: Vec::new(),
                checkpoints: Vec::new(),
            };
            save_checkpoint(&outcome.checkpoint(cfg, sched, opts.seed, vocab_hash), &path)?;
            emit(LogRecord::Checkpoint { step: done, file }, &mut records)?;
            checkpoints.push(path);
        }
    }
    Ok(PretrainOutcome {
        params,
        adam,
        step: end.max(start),
        records,
        checkpoints,
    })
}
