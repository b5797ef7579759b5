//! Task output layers on top of the encoder: sequence classification,
//! windowed word tagging, QA span extraction and dependency parsing.

mod features;
mod model;
mod mst;
mod span;
mod window;

pub use features::{encode_pair, encode_words, ClsFeature, QaChunk, QaConfig, QaFeature, SeqFeature, WordSlot};
pub use model::{
    classify_batch, classify_sequence, decode_parse, parse_batch, predict_span, predict_spans, score_arcs_and_labels,
    tag_batch, tag_tokens_windowed, task_loss, ParseScores, QaPrediction, TrainExample,
};
pub use mst::{decode_mst, tree_score, validate_tree};
pub use span::{best_span, qa_words, select_span, ChunkLogits, SpanChoice};
pub use window::{plan_windows, token_owners, Window, WindowingConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::{Float, ParamStore, TensorError};

use crate::encoder::{init_tensor, EncoderConfig, EncoderError};

#[derive(Debug, thiserror::Error)]
pub enum HeadsError {
    #[error("invalid head config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("task {task} is a {found:?} task, expected {expected:?}")]
    TaskMismatch {
        task: String,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Tagging,
    Qa,
    Parsing,
}

/// A fine-tuning task: its output layer kind and closed label set (tag set
/// for tagging, relation set for parsing, unused for QA).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub labels: Vec<String>,
    /// Classification over sentence pairs.
    #[serde(default)]
    pub pair: bool,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), HeadsError> {
        let needs_labels = self.kind != TaskKind::Qa;
        if needs_labels && self.labels.len() < 2 && self.kind == TaskKind::Classification {
            return Err(HeadsError::InvalidConfig(format!(
                "task {} needs at least 2 labels",
                self.name
            )));
        }
        if needs_labels && self.labels.is_empty() {
            return Err(HeadsError::InvalidConfig(format!("task {} has no labels", self.name)));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(HeadsError::InvalidConfig(format!(
                "task {} lists label {dup:?} twice",
                self.name
            )));
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub(crate) fn expect(&self, kind: TaskKind) -> Result<(), HeadsError> {
        if self.kind != kind {
            return Err(HeadsError::TaskMismatch {
                task: self.name.clone(),
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }
}

/// Names, shapes and decay flags of the output layer for `task`.
pub fn head_layout(cfg: &EncoderConfig, task: &TaskSpec) -> Vec<(String, Vec<usize>, bool)> {
    let h = cfg.hidden_size;
    let c = task.labels.len();
    let entry = |name: &str, shape: Vec<usize>, decay| (name.to_string(), shape, decay);
    match task.kind {
        TaskKind::Classification => vec![
            entry("head.pooler.w", vec![h, h], true),
            entry("head.pooler.b", vec![h], false),
            entry("head.cls.w", vec![h, c], true),
            entry("head.cls.b", vec![c], false),
        ],
        TaskKind::Tagging => vec![
            entry("head.tag.w", vec![h, c], true),
            entry("head.tag.b", vec![c], false),
        ],
        TaskKind::Qa => vec![
            entry("head.span.w", vec![h, 2], true),
            entry("head.span.b", vec![2], false),
        ],
        TaskKind::Parsing => vec![
            entry("head.arc.dep.w", vec![h, h], true),
            entry("head.arc.dep.b", vec![h], false),
            entry("head.arc.head.w", vec![h, h], true),
            entry("head.arc.head.b", vec![h], false),
            entry("head.arc.u", vec![h, h], true),
            entry("head.arc.head_bias", vec![h, 1], false),
            entry("head.label.dep.w", vec![h, c], true),
            entry("head.label.head.w", vec![h, c], true),
            entry("head.label.b", vec![c], false),
        ],
    }
}

/// Freshly initialized output layer, deterministic in `seed`.
pub fn init_head_params<T: Float>(
    cfg: &EncoderConfig,
    task: &TaskSpec,
    seed: u64,
) -> Result<ParamStore<T>, HeadsError> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
    let mut store = ParamStore::new();
    for (name, shape, decay) in head_layout(cfg, task) {
        let t = init_tensor(&mut rng, &name, &shape);
        store.push(name, t, decay);
    }
    Ok(store)
}

/// A predicted or gold dependency tree: `heads[i]` is the head of word
/// `i + 1` (0 = root) and `labels[i]` its relation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl DependencyTree {
    pub fn validate(&self) -> Result<(), String> {
        if self.heads.len() != self.labels.len() {
            return Err(format!("{} heads but {} labels", self.heads.len(), self.labels.len()));
        }
        validate_tree(&self.heads)
    }
}
