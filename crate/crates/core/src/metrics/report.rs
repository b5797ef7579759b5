use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{accuracy, attachment_scores, chunk_f1, pos_f1, qa_em_f1, MetricsError, QaNormalization};
use crate::gluesio::DepSentence;
use crate::heads::DependencyTree;

/// The score used to select and report a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    ChunkF1,
    PosF1,
    Las,
    QaF1,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::ChunkF1 => "chunk_f1",
            Self::PosF1 => "pos_f1",
            Self::Las => "las",
            Self::QaF1 => "qa_f1",
        }
    }
}

/// One line of a prediction dump, with gold annotations when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionRecord {
    Classification {
        id: String,
        pred: String,
        #[serde(default)]
        gold: Option<String>,
        probs: Vec<f64>,
    },
    Tagging {
        id: String,
        words: Vec<String>,
        pred: Vec<String>,
        #[serde(default)]
        gold: Option<Vec<String>>,
    },
    Parsing {
        id: String,
        words: Vec<String>,
        pred: DependencyTree,
        #[serde(default)]
        gold: Option<DependencyTree>,
        #[serde(default)]
        is_punct: Vec<bool>,
    },
    Qa {
        id: String,
        pred: String,
        char_start: Option<usize>,
        #[serde(default)]
        gold: Vec<String>,
    },
}

/// Scores of one evaluation, with the options that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub task: String,
    pub metric: MetricKind,
    /// The selection score named by `metric`.
    pub score: f64,
    pub examples: usize,
    pub scores: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub flags: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (k, &v) in self.scores.iter().chain([(&"score".to_string(), &self.score)]) {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::Invalid(format!("score {k} = {v} outside [0, 1]")));
            }
        }
        if self.examples == 0 {
            return Err(MetricsError::Invalid("report covers no examples".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

fn gold_missing(id: &str) -> MetricsError {
    MetricsError::Invalid(format!("record {id} has no gold annotation"))
}

/// Scores a prediction dump. Every record must match `metric` and carry
/// its gold annotation.
pub fn evaluate_records(
    task: &str,
    metric: MetricKind,
    records: &[PredictionRecord],
    exclude_punct: bool,
    norm: &QaNormalization,
) -> Result<MetricReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut scores = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut flags = BTreeMap::new();
    let wrong = |id: &str| MetricsError::Invalid(format!("record {id} does not fit metric {}", metric.name()));
    let score = match metric {
        MetricKind::Accuracy => {
            let (mut p, mut g) = (Vec::new(), Vec::new());
            for r in records {
                let PredictionRecord::Classification { id, pred, gold, .. } = r else {
                    return Err(wrong(record_id(r)));
                };
                p.push(pred.clone());
                g.push(gold.clone().ok_or_else(|| gold_missing(id))?);
            }
            let acc = accuracy(&p, &g)?;
            let hits = p.iter().zip(&g).filter(|(a, b)| a == b).count();
            counts.insert("correct".into(), hits as u64);
            scores.insert("accuracy".into(), acc);
            acc
        }
        MetricKind::ChunkF1 | MetricKind::PosF1 => {
            let (mut p, mut g) = (Vec::new(), Vec::new());
            for r in records {
                let PredictionRecord::Tagging { id, pred, gold, .. } = r else {
                    return Err(wrong(record_id(r)));
                };
                p.push(pred.clone());
                g.push(gold.clone().ok_or_else(|| gold_missing(id))?);
            }
            if metric == MetricKind::ChunkF1 {
                let s = chunk_f1(&p, &g)?;
                scores.insert("precision".into(), s.precision);
                scores.insert("recall".into(), s.recall);
                scores.insert("f1".into(), s.f1);
                counts.insert("tp".into(), s.tp as u64);
                counts.insert("fp".into(), s.fp as u64);
                counts.insert("fn".into(), s.fn_ as u64);
                s.f1
            } else {
                let s = pos_f1(&p, &g)?;
                scores.insert("f1".into(), s.f1);
                scores.insert("accuracy".into(), s.accuracy);
                counts.insert("correct".into(), s.correct as u64);
                counts.insert("tokens".into(), s.tokens as u64);
                s.f1
            }
        }
        MetricKind::Las => {
            let (mut p, mut g) = (Vec::new(), Vec::new());
            for r in records {
                let PredictionRecord::Parsing {
                    id,
                    words,
                    pred,
                    gold,
                    is_punct,
                } = r
                else {
                    return Err(wrong(record_id(r)));
                };
                let gold = gold.clone().ok_or_else(|| gold_missing(id))?;
                p.push(pred.clone());
                g.push(DepSentence {
                    words: words.clone(),
                    heads: gold.heads,
                    labels: gold.labels,
                    is_punct: if is_punct.is_empty() {
                        vec![false; words.len()]
                    } else {
                        is_punct.clone()
                    },
                });
            }
            let s = attachment_scores(&p, &g, exclude_punct)?;
            scores.insert("uas".into(), s.uas);
            scores.insert("las".into(), s.las);
            counts.insert("head_correct".into(), s.head_correct as u64);
            counts.insert("labeled_correct".into(), s.labeled_correct as u64);
            counts.insert("counted_words".into(), s.counted as u64);
            flags.insert("exclude_punct".into(), exclude_punct.to_string());
            s.las
        }
        MetricKind::QaF1 => {
            let (mut em, mut f1) = (0.0, 0.0);
            let mut exact = 0u64;
            for r in records {
                let PredictionRecord::Qa { pred, gold, .. } = r else {
                    return Err(wrong(record_id(r)));
                };
                let (e, f) = qa_em_f1(pred, gold, norm)?;
                em += e;
                f1 += f;
                exact += e as u64;
            }
            let n = records.len() as f64;
            scores.insert("exact_match".into(), em / n);
            scores.insert("f1".into(), f1 / n);
            counts.insert("exact".into(), exact);
            flags.insert("lowercase".into(), norm.lowercase.to_string());
            flags.insert("strip_punctuation".into(), norm.strip_punctuation.to_string());
            flags.insert("articles".into(), norm.articles.join(","));
            f1 / n
        }
    };
    let report = MetricReport {
        task: task.to_string(),
        metric,
        score,
        examples: records.len(),
        scores,
        counts,
        flags,
    };
    report.validate()?;
    Ok(report)
}

fn record_id(r: &PredictionRecord) -> &str {
    match r {
        PredictionRecord::Classification { id, .. }
        | PredictionRecord::Tagging { id, .. }
        | PredictionRecord::Parsing { id, .. }
        | PredictionRecord::Qa { id, .. } => id,
    }
}
