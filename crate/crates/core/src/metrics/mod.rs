//! Evaluation metrics for the GLUES tasks and the report format.

mod report;

pub use report::{evaluate_records, MetricKind, MetricReport, PredictionRecord};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::gluesio::DepSentence;
use crate::heads::DependencyTree;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no examples to score")]
    Empty,
    #[error("prediction has {pred} items but gold has {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("tag {tag:?} at position {position} is not O, B-X or I-X")]
    BadTag { tag: String, position: usize },
    #[error("no gold answers")]
    NoGold,
    #[error("{0}")]
    Invalid(String),
}

fn same_len(pred: usize, gold: usize) -> Result<(), MetricsError> {
    if pred != gold {
        return Err(MetricsError::LengthMismatch { pred, gold });
    }
    if pred == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64, MetricsError> {
    same_len(pred.len(), gold.len())?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// A typed entity span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub ty: String,
    pub start: usize,
    pub end: usize,
}

/// Chunks of a BIO sequence. `I-X` that does not continue an `X` chunk
/// opens a new one.
pub fn extract_chunks<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Chunk>, MetricsError> {
    let mut out = Vec::new();
    let mut open: Option<Chunk> = None;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        let (begin, ty) = if t == "O" {
            (false, None)
        } else if let Some(ty) = t.strip_prefix("B-").filter(|s| !s.is_empty()) {
            (true, Some(ty))
        } else if let Some(ty) = t.strip_prefix("I-").filter(|s| !s.is_empty()) {
            (open.as_ref().map_or(true, |c| c.ty != ty), Some(ty))
        } else {
            return Err(MetricsError::BadTag {
                tag: t.to_string(),
                position: i,
            });
        };
        if ty.is_none() || begin {
            out.extend(open.take());
        }
        match (ty, &mut open) {
            (Some(ty), None) => {
                open = Some(Chunk {
                    ty: ty.to_string(),
                    start: i,
                    end: i + 1,
                })
            }
            (Some(_), Some(c)) => c.end = i + 1,
            (None, _) => {}
        }
    }
    out.extend(open);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrfScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

/// Entity-level precision, recall and F1 over aligned sentences: a
/// predicted chunk counts only with the exact span and type.
pub fn chunk_f1<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<PrfScores, MetricsError> {
    same_len(pred.len(), gold.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(MetricsError::LengthMismatch {
                pred: p.len(),
                gold: g.len(),
            });
        }
        let pc = extract_chunks(p)?;
        let gc = extract_chunks(g)?;
        let mut gold_set: HashMap<&Chunk, usize> = HashMap::new();
        for c in &gc {
            *gold_set.entry(c).or_default() += 1;
        }
        for c in &pc {
            match gold_set.get_mut(c) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    tp += 1;
                }
                _ => fp += 1,
            }
        }
        fn_ += gc.len();
    }
    fn_ -= tp;
    Ok(PrfScores::from_counts(tp, fp, fn_))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosScores {
    /// Micro-averaged F1 over tokens.
    pub f1: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub tokens: usize,
}

/// Token-level micro F1. Every token carries exactly one predicted and one
/// gold tag, so it equals accuracy; both are reported.
pub fn pos_f1<S: PartialEq>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<PosScores, MetricsError> {
    same_len(pred.len(), gold.len())?;
    let (mut tp, mut fp, mut fn_, mut tokens) = (0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(MetricsError::LengthMismatch {
                pred: p.len(),
                gold: g.len(),
            });
        }
        for (a, b) in p.iter().zip(g) {
            tokens += 1;
            if a == b {
                tp += 1;
            } else {
                fp += 1;
                fn_ += 1;
            }
        }
    }
    if tokens == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(PosScores {
        f1: PrfScores::from_counts(tp, fp, fn_).f1,
        accuracy: tp as f64 / tokens as f64,
        correct: tp,
        tokens,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttachmentScores {
    pub uas: f64,
    pub las: f64,
    pub head_correct: usize,
    pub labeled_correct: usize,
    pub counted: usize,
    pub exclude_punct: bool,
}

/// Attachment counts over many sentences.
pub fn attachment_scores(
    pred: &[DependencyTree],
    gold: &[DepSentence],
    exclude_punct: bool,
) -> Result<AttachmentScores, MetricsError> {
    same_len(pred.len(), gold.len())?;
    let (mut heads, mut labeled, mut counted) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let n = g.words.len();
        if p.heads.len() != n || p.labels.len() != n || g.heads.len() != n || g.labels.len() != n {
            return Err(MetricsError::LengthMismatch {
                pred: p.heads.len(),
                gold: n,
            });
        }
        for i in 0..n {
            if exclude_punct && g.is_punct.get(i).copied().unwrap_or(false) {
                continue;
            }
            counted += 1;
            if p.heads[i] == g.heads[i] {
                heads += 1;
                if p.labels[i] == g.labels[i] {
                    labeled += 1;
                }
            }
        }
    }
    if counted == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(AttachmentScores {
        uas: heads as f64 / counted as f64,
        las: labeled as f64 / counted as f64,
        head_correct: heads,
        labeled_correct: labeled,
        counted,
        exclude_punct,
    })
}

/// `(UAS, LAS)` of one sentence.
pub fn uas_las(pred: &DependencyTree, gold: &DepSentence, exclude_punct: bool) -> Result<(f64, f64), MetricsError> {
    let s = attachment_scores(std::slice::from_ref(pred), std::slice::from_ref(gold), exclude_punct)?;
    Ok((s.uas, s.las))
}

/// Answer normalization for QA scoring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaNormalization {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    /// Whole words removed after lowercasing and punctuation stripping.
    pub articles: Vec<String>,
}

pub const SPANISH_ARTICLES: [&str; 8] = ["el", "la", "los", "las", "un", "una", "unos", "unas"];

impl Default for QaNormalization {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            articles: SPANISH_ARTICLES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¿' | '¡' | '«' | '»' | '“' | '”' | '‘' | '’' | '—' | '–' | '…' | '·' | '„'
        )
}

impl QaNormalization {
    /// Normalized whitespace-separated tokens.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let mut s: String = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        if self.strip_punctuation {
            s = s.chars().filter(|&c| !is_punct(c)).collect();
        }
        s.split_whitespace()
            .filter(|w| !self.articles.iter().any(|a| a == w))
            .map(str::to_string)
            .collect()
    }

    pub fn normalize(&self, text: &str) -> String {
        self.tokens(text).join(" ")
    }
}

fn bag_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut same = 0;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pred.len() as f64;
    let recall = same as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `(exact_match, f1)` of one answer against its gold answers, each the best
/// over golds. Two answers that both normalize to nothing match fully.
pub fn qa_em_f1<S: AsRef<str>>(pred: &str, golds: &[S], norm: &QaNormalization) -> Result<(f64, f64), MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::NoGold);
    }
    let p = norm.tokens(pred);
    let mut em: f64 = 0.0;
    let mut f1: f64 = 0.0;
    for g in golds {
        let g = norm.tokens(g.as_ref());
        if g == p {
            em = 1.0;
        }
        f1 = f1.max(bag_f1(&p, &g));
    }
    Ok((em, f1))
}
