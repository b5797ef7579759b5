use mlmkit::dataprep::{build_examples, MaskingConfig, PretrainExample};
use mlmkit::encoder::EncoderConfig;
use mlmkit::tokenizer::{train_vocabulary, NormalizationConfig, Vocabulary};
use mlmkit::trainer::{PhaseConfig, PretrainSchedule};

/// A one-layer encoder with examples for both phases (lengths 16 and 48).
pub struct Fixture {
    pub vocab: Vocabulary,
    pub short: Vec<PretrainExample>,
    pub long: Vec<PretrainExample>,
    pub cfg: EncoderConfig,
}

pub fn fixture() -> Fixture {
    let corpus = super::corpus::sentences(60, 200, 3);
    let vocab = train_vocabulary(&corpus, &NormalizationConfig::uncased(), 300, 4, 0).unwrap();
    let text = corpus.chunks(3).map(|c| c.join("\n")).collect::<Vec<_>>().join("\n\n");
    let mcfg = MaskingConfig {
        duplicates: 2,
        ..MaskingConfig::default()
    };
    let (short, _) = build_examples(&text, &vocab, 16, &mcfg).unwrap();
    let (long, _) = build_examples(&text, &vocab, 48, &mcfg).unwrap();
    let cfg = EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_size: 16,
        intermediate_size: 32,
        vocab_size: vocab.size(),
        max_positions: 48,
        type_vocab: 2,
        dropout: 0.1,
        seed: 11,
    };
    Fixture {
        vocab,
        short,
        long,
        cfg,
    }
}

/// 200 steps, warmup 20, phase switch at 100.
pub fn schedule() -> PretrainSchedule {
    PretrainSchedule {
        total_steps: 200,
        warmup_steps: 20,
        peak_lr: 1e-3,
        phase1_steps: 100,
        phase1: PhaseConfig { batch: 4, max_len: 16 },
        phase2: PhaseConfig { batch: 2, max_len: 48 },
    }
}
