#![allow(dead_code)]

use mlmkit::dataprep::{generate_masked_examples, pack_sequences, MaskingConfig, PretrainExample};
use mlmkit::encoder::{mlm_loss, Bound, DropoutKeys, EncoderConfig, EncoderInput};
use mlmkit::tokenizer::{train_vocabulary, NormalizationConfig};
use mlmkit::trainer::{pretrain, PhaseConfig, PretrainOptions, PretrainSchedule};
use tensorcore::{Mode, ParamStore, Tape};

pub struct OverfitRun {
    pub vocab_size: usize,
    pub sentences: usize,
    pub examples: usize,
    /// (step, masked-position accuracy) after each segment.
    pub trace: Vec<(u64, f64)>,
}

impl OverfitRun {
    pub fn best(&self) -> (u64, f64) {
        self.trace
            .iter()
            .copied()
            .fold((0, 0.0), |b, t| if t.1 > b.1 { t } else { b })
    }
}

fn accuracy(cfg: &EncoderConfig, params: &ParamStore<f32>, examples: &[PretrainExample]) -> f64 {
    let refs: Vec<_> = examples.iter().collect();
    let (mut hits, mut total) = (0.0, 0usize);
    for chunk in refs.chunks(100) {
        let (input, labels) = EncoderInput::from_examples(chunk);
        let mut tape = Tape::new(Mode::Eval);
        let model = Bound::new(&mut tape, params);
        let o = mlm_loss(&mut tape, &model, cfg, &input, &labels, &mut DropoutKeys::new(0)).unwrap();
        hits += o.accuracy * o.labeled as f64;
        total += o.labeled;
    }
    hits / total as f64
}

/// Pre-trains the tiny encoder (2 layers, hidden 128) on 100 sentences with an
/// 8000-entry vocabulary, for at most `max_steps` steps in segments of
/// `segment` steps. Training resumes from the previous segment's checkpoint and
/// stops once accuracy on the training examples exceeds `target`.
pub fn overfit(max_steps: u64, segment: u64, target: f64) -> OverfitRun {
    let corpus = super::corpus::sentences(10_000, 3000, 7);
    let vocab = train_vocabulary(&corpus, &NormalizationConfig::uncased(), 8000, 0, 1).unwrap();
    let docs: Vec<Vec<_>> = corpus[..100].iter().map(|s| vec![vocab.encode(s)]).collect();
    let packed = pack_sequences(docs, 128).unwrap();
    let mcfg = MaskingConfig::default();
    let mut examples = Vec::new();
    for (i, s) in packed.sequences.iter().enumerate() {
        examples.extend(generate_masked_examples(s, i as u64, &mcfg, &vocab, 32).unwrap());
    }
    let mut cfg = EncoderConfig::tiny();
    cfg.vocab_size = vocab.size();
    cfg.max_positions = 128;
    let phase = PhaseConfig { batch: 32, max_len: 32 };
    let sched = PretrainSchedule {
        total_steps: max_steps + 1,
        warmup_steps: max_steps / 20,
        peak_lr: 1e-3,
        phase1_steps: max_steps,
        phase1: phase.clone(),
        phase2: phase,
    };
    let hash = vocab.hash();
    let mut run = OverfitRun {
        vocab_size: vocab.size(),
        sentences: 100,
        examples: examples.len(),
        trace: Vec::new(),
    };
    let mut resume = None;
    let mut step = 0;
    while step < max_steps {
        let opts = PretrainOptions {
            seed: 1,
            micro_batch: 0,
            checkpoint_every: 0,
            stop_after: Some((step + segment).min(max_steps)),
        };
        let out = pretrain::<f32>(
            &cfg,
            &sched,
            &examples,
            &examples,
            &opts,
            &hash,
            resume,
            None,
            &mut Vec::new(),
        )
        .unwrap();
        step = out.step;
        let acc = accuracy(&cfg, &out.params, &examples);
        run.trace.push((step, acc));
        if acc > target {
            break;
        }
        resume = Some(out.checkpoint(&cfg, &sched, opts.seed, &hash));
    }
    run
}
