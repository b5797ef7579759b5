use mlmkit::encoder::{init_params, EncoderConfig};
use mlmkit::gluesio::ClassificationRecord;
use mlmkit::heads::{TaskKind, TaskSpec, TrainExample};
use mlmkit::tokenizer::{train_vocabulary, NormalizationConfig, Vocabulary};
use mlmkit::trainer::{build_eval_items, build_train_examples, EvalItem, InputConfig, TaskRecords};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::ParamStore;

/// Two classes over disjoint word sets; every sentence is 4 to 8 words
/// drawn from its class's set.
pub fn separable(n: usize, seed: u64) -> Vec<ClassificationRecord> {
    let a = ["red", "green", "blue", "yellow", "purple", "orange", "black", "white"];
    let b = ["dog", "cat", "horse", "mouse", "sheep", "goat", "bird", "fish"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (set, label) = if i % 2 == 0 { (&a, "pos") } else { (&b, "neg") };
            let len = rng.gen_range(4..=8);
            let words: Vec<&str> = (0..len).map(|_| *set.choose(&mut rng).unwrap()).collect();
            ClassificationRecord {
                text_a: words.join(" "),
                text_b: None,
                label: label.to_string(),
            }
        })
        .collect()
}

/// Classification fixture: a randomly initialized encoder with `layers` layers
/// and width `hidden`, `n_train` separable training examples and 100 dev items.
pub struct Toy {
    pub cfg: EncoderConfig,
    pub params: ParamStore<f32>,
    pub task: TaskSpec,
    pub train: Vec<TrainExample>,
    pub dev: Vec<EvalItem>,
}

pub fn toy(n_train: usize, hidden: usize, layers: usize) -> Toy {
    let train_recs = separable(n_train, 1);
    let dev_recs = separable(100, 2);
    let text: Vec<&str> = train_recs.iter().map(|r| r.text_a.as_str()).collect();
    let vocab: Vocabulary = train_vocabulary(&text, &NormalizationConfig::uncased(), 200, 0, 1).unwrap();
    let mut cfg = EncoderConfig::new(layers, 2, hidden, vocab.size());
    cfg.max_positions = 32;
    let params = init_params::<f32>(&cfg).unwrap();
    let task = TaskSpec {
        name: "toy".into(),
        kind: TaskKind::Classification,
        labels: vec!["neg".into(), "pos".into()],
        pair: false,
    };
    let input = InputConfig {
        max_len: 32,
        ..InputConfig::default()
    };
    let (train, _) = build_train_examples(&task, &vocab, &TaskRecords::Classification(train_recs), &input).unwrap();
    let dev = build_eval_items(&task, &vocab, &TaskRecords::Classification(dev_recs), &input).unwrap();
    Toy {
        cfg,
        params,
        task,
        train,
        dev,
    }
}
