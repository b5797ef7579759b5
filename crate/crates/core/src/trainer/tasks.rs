use serde::{Deserialize, Serialize};
use tensorcore::{Float, ParamStore};

use super::TrainerError;
use crate::encoder::EncoderConfig;
use crate::gluesio::{ClassificationRecord, DepSentence, QaExample, TaggedSentence};
use crate::heads::{
    classify_batch, encode_pair, parse_batch, predict_spans, tag_batch, ClsFeature, DependencyTree, QaConfig,
    QaFeature, SeqFeature, TaskKind, TaskSpec, TrainExample, WindowingConfig,
};
use crate::metrics::{MetricKind, PredictionRecord};
use crate::tokenizer::Vocabulary;

/// Loaded task data, before tokenization.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskRecords {
    Classification(Vec<ClassificationRecord>),
    Tagging(Vec<TaggedSentence>),
    Parsing(Vec<DepSentence>),
    Qa(Vec<QaExample>),
}

impl TaskRecords {
    pub fn kind(&self) -> TaskKind {
        match self {
            Self::Classification(_) => TaskKind::Classification,
            Self::Tagging(_) => TaskKind::Tagging,
            Self::Parsing(_) => TaskKind::Parsing,
            Self::Qa(_) => TaskKind::Qa,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Classification(v) => v.len(),
            Self::Tagging(v) => v.len(),
            Self::Parsing(v) => v.len(),
            Self::Qa(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sorted distinct tags (tagging) or relations (parsing).
    pub fn label_set(&self) -> Vec<String> {
        let mut set = std::collections::BTreeSet::new();
        match self {
            Self::Classification(v) => set.extend(v.iter().map(|r| r.label.clone())),
            Self::Tagging(v) => set.extend(v.iter().flat_map(|s| s.tags.iter().cloned())),
            Self::Parsing(v) => set.extend(v.iter().flat_map(|s| s.labels.iter().cloned())),
            Self::Qa(_) => {}
        }
        set.into_iter().collect()
    }
}

/// How task inputs are turned into encoder rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// Token limit for classification inputs, specials included.
    pub max_len: usize,
    pub window: WindowingConfig,
    pub qa: QaConfig,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            max_len: 128,
            window: WindowingConfig::default(),
            qa: QaConfig::default(),
        }
    }
}

/// One evaluation instance with what the prediction dump needs.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalItem {
    Classification {
        id: String,
        feature: ClsFeature,
        gold: Option<String>,
    },
    Tagging {
        id: String,
        words: Vec<String>,
        feature: SeqFeature,
        gold: Option<Vec<String>>,
    },
    Parsing {
        id: String,
        words: Vec<String>,
        feature: SeqFeature,
        gold: Option<DependencyTree>,
        is_punct: Vec<bool>,
    },
    Qa {
        id: String,
        feature: QaFeature,
        gold: Vec<String>,
    },
}

impl EvalItem {
    pub fn kind(&self) -> TaskKind {
        match self {
            Self::Classification { .. } => TaskKind::Classification,
            Self::Tagging { .. } => TaskKind::Tagging,
            Self::Parsing { .. } => TaskKind::Parsing,
            Self::Qa { .. } => TaskKind::Qa,
        }
    }
}

fn check_kind(task: &TaskSpec, records: &TaskRecords) -> Result<(), TrainerError> {
    if task.kind != records.kind() {
        return Err(TrainerError::InvalidData(format!(
            "task {} expects {:?} data, got {:?}",
            task.name,
            task.kind,
            records.kind()
        )));
    }
    Ok(())
}

fn index(task: &TaskSpec, label: &str, at: usize) -> Result<usize, TrainerError> {
    task.label_index(label).ok_or_else(|| {
        TrainerError::InvalidData(format!(
            "example {at}: label {label:?} is not in the label set of task {}",
            task.name
        ))
    })
}

fn heads_err(e: crate::heads::HeadsError, at: usize) -> TrainerError {
    TrainerError::InvalidData(format!("example {at}: {e}"))
}

/// Training instances. QA examples yield one instance per window holding
/// the first answer; the second value counts QA examples whose answer no
/// window holds (they are skipped).
pub fn build_train_examples(
    task: &TaskSpec,
    vocab: &Vocabulary,
    records: &TaskRecords,
    input: &InputConfig,
) -> Result<(Vec<TrainExample>, usize), TrainerError> {
    check_kind(task, records)?;
    let mut out = Vec::new();
    let mut skipped = 0;
    match records {
        TaskRecords::Classification(v) => {
            for (i, r) in v.iter().enumerate() {
                if task.pair != r.text_b.is_some() {
                    return Err(TrainerError::InvalidData(format!(
                        "example {i}: task {} pair={} but record has{} second text",
                        task.name,
                        task.pair,
                        if r.text_b.is_some() { "" } else { " no" }
                    )));
                }
                let feature =
                    encode_pair(vocab, &r.text_a, r.text_b.as_deref(), input.max_len).map_err(|e| heads_err(e, i))?;
                out.push(TrainExample::Classification {
                    feature,
                    label: index(task, &r.label, i)?,
                });
            }
        }
        TaskRecords::Tagging(v) => {
            for (i, s) in v.iter().enumerate() {
                let feature = SeqFeature::from_words(vocab, &s.words, &input.window).map_err(|e| heads_err(e, i))?;
                let tags = s.tags.iter().map(|t| index(task, t, i)).collect::<Result<_, _>>()?;
                out.push(TrainExample::Tagging { feature, tags });
            }
        }
        TaskRecords::Parsing(v) => {
            for (i, s) in v.iter().enumerate() {
                let feature = SeqFeature::from_words(vocab, &s.words, &input.window).map_err(|e| heads_err(e, i))?;
                let labels = s.labels.iter().map(|t| index(task, t, i)).collect::<Result<_, _>>()?;
                out.push(TrainExample::Parsing {
                    feature,
                    heads: s.heads.clone(),
                    labels,
                });
            }
        }
        TaskRecords::Qa(v) => {
            for (i, ex) in v.iter().enumerate() {
                let Some(a) = ex.answers.first() else {
                    skipped += 1;
                    continue;
                };
                let f = QaFeature::new(vocab, &ex.question, &ex.context, &input.qa).map_err(|e| heads_err(e, i))?;
                let targets = f.targets(a.char_start, a.text.chars().count());
                if targets.is_empty() {
                    skipped += 1;
                }
                for (c, start, end) in targets {
                    out.push(TrainExample::Qa {
                        chunk: f.chunks[c].clone(),
                        start,
                        end,
                    });
                }
            }
        }
    }
    Ok((out, skipped))
}

/// Evaluation instances, ids `"{index}"` unless the data has its own.
pub fn build_eval_items(
    task: &TaskSpec,
    vocab: &Vocabulary,
    records: &TaskRecords,
    input: &InputConfig,
) -> Result<Vec<EvalItem>, TrainerError> {
    check_kind(task, records)?;
    let mut out = Vec::with_capacity(records.len());
    match records {
        TaskRecords::Classification(v) => {
            for (i, r) in v.iter().enumerate() {
                out.push(EvalItem::Classification {
                    id: i.to_string(),
                    feature: encode_pair(vocab, &r.text_a, r.text_b.as_deref(), input.max_len)
                        .map_err(|e| heads_err(e, i))?,
                    gold: Some(r.label.clone()),
                });
            }
        }
        TaskRecords::Tagging(v) => {
            for (i, s) in v.iter().enumerate() {
                out.push(EvalItem::Tagging {
                    id: i.to_string(),
                    words: s.words.clone(),
                    feature: SeqFeature::from_words(vocab, &s.words, &input.window).map_err(|e| heads_err(e, i))?,
                    gold: Some(s.tags.clone()),
                });
            }
        }
        TaskRecords::Parsing(v) => {
            for (i, s) in v.iter().enumerate() {
                out.push(EvalItem::Parsing {
                    id: i.to_string(),
                    words: s.words.clone(),
                    feature: SeqFeature::from_words(vocab, &s.words, &input.window).map_err(|e| heads_err(e, i))?,
                    gold: Some(DependencyTree {
                        heads: s.heads.clone(),
                        labels: s.labels.clone(),
                    }),
                    is_punct: s.is_punct.clone(),
                });
            }
        }
        TaskRecords::Qa(v) => {
            for (i, ex) in v.iter().enumerate() {
                out.push(EvalItem::Qa {
                    id: ex.id.clone(),
                    feature: QaFeature::new(vocab, &ex.question, &ex.context, &input.qa)
                        .map_err(|e| heads_err(e, i))?,
                    gold: ex.answers.iter().map(|a| a.text.clone()).collect(),
                });
            }
        }
    }
    Ok(out)
}

/// The selection metric of a task: accuracy for classification, chunk F1
/// for BIO tag sets, token F1 for other tag sets, LAS for parsing, answer
/// F1 for QA.
pub fn default_metric(task: &TaskSpec) -> MetricKind {
    match task.kind {
        TaskKind::Classification => MetricKind::Accuracy,
        TaskKind::Qa => MetricKind::QaF1,
        TaskKind::Parsing => MetricKind::Las,
        TaskKind::Tagging => {
            let bio = task
                .labels
                .iter()
                .all(|l| l == "O" || l.starts_with("B-") || l.starts_with("I-"));
            if bio {
                MetricKind::ChunkF1
            } else {
                MetricKind::PosF1
            }
        }
    }
}

/// Runs the model over evaluation items in batches of `batch`.
pub fn predict_records<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    items: &[EvalItem],
    batch: usize,
    max_answer_len: usize,
) -> Result<Vec<PredictionRecord>, TrainerError> {
    if let Some(i) = items.iter().position(|i| i.kind() != task.kind) {
        return Err(TrainerError::InvalidData(format!(
            "evaluation item {i} does not belong to task kind {:?}",
            task.kind
        )));
    }
    let mut out = Vec::with_capacity(items.len());
    let herr = |e: crate::heads::HeadsError| TrainerError::InvalidData(e.to_string());
    for group in items.chunks(batch.max(1)) {
        match task.kind {
            TaskKind::Classification => {
                let feats: Vec<&ClsFeature> = group
                    .iter()
                    .filter_map(|i| match i {
                        EvalItem::Classification { feature, .. } => Some(feature),
                        _ => None,
                    })
                    .collect();
                let probs = classify_batch(params, cfg, task, &feats).map_err(herr)?;
                for (item, p) in group.iter().zip(probs) {
                    let EvalItem::Classification { id, gold, .. } = item else {
                        unreachable!()
                    };
                    let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                    out.push(PredictionRecord::Classification {
                        id: id.clone(),
                        pred: task.labels[best].clone(),
                        gold: gold.clone(),
                        probs: p,
                    });
                }
            }
            TaskKind::Tagging => {
                let feats: Vec<&SeqFeature> = group
                    .iter()
                    .filter_map(|i| match i {
                        EvalItem::Tagging { feature, .. } => Some(feature),
                        _ => None,
                    })
                    .collect();
                let tags = tag_batch(params, cfg, task, &feats).map_err(herr)?;
                for (item, t) in group.iter().zip(tags) {
                    let EvalItem::Tagging { id, words, gold, .. } = item else {
                        unreachable!()
                    };
                    out.push(PredictionRecord::Tagging {
                        id: id.clone(),
                        words: words.clone(),
                        pred: t.iter().map(|&k| task.labels[k].clone()).collect(),
                        gold: gold.clone(),
                    });
                }
            }
            TaskKind::Parsing => {
                let feats: Vec<&SeqFeature> = group
                    .iter()
                    .filter_map(|i| match i {
                        EvalItem::Parsing { feature, .. } => Some(feature),
                        _ => None,
                    })
                    .collect();
                let trees = parse_batch(params, cfg, task, &feats).map_err(herr)?;
                for (item, (heads, labels)) in group.iter().zip(trees) {
                    let EvalItem::Parsing {
                        id,
                        words,
                        gold,
                        is_punct,
                        ..
                    } = item
                    else {
                        unreachable!()
                    };
                    out.push(PredictionRecord::Parsing {
                        id: id.clone(),
                        words: words.clone(),
                        pred: DependencyTree {
                            heads,
                            labels: labels.iter().map(|&k| task.labels[k].clone()).collect(),
                        },
                        gold: gold.clone(),
                        is_punct: is_punct.clone(),
                    });
                }
            }
            TaskKind::Qa => {
                let feats: Vec<&QaFeature> = group
                    .iter()
                    .filter_map(|i| match i {
                        EvalItem::Qa { feature, .. } => Some(feature),
                        _ => None,
                    })
                    .collect();
                let spans = predict_spans(params, cfg, task, &feats, max_answer_len).map_err(herr)?;
                for (item, s) in group.iter().zip(spans) {
                    let EvalItem::Qa { id, gold, .. } = item else {
                        unreachable!()
                    };
                    out.push(PredictionRecord::Qa {
                        id: id.clone(),
                        pred: s.as_ref().map(|s| s.text.clone()).unwrap_or_default(),
                        char_start: s.map(|s| s.char_start),
                        gold: gold.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}
