use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::span::qa_words;
use super::window::{plan_windows, token_owners, Window, WindowingConfig};
use super::HeadsError;
use crate::tokenizer::{normalize, TokenizedText, Vocabulary, CLS, SEP, UNK};

/// Encodes pre-split words, one or more subwords each. A word that
/// normalizes to nothing becomes `[UNK]` so word counts are preserved.
pub fn encode_words<S: AsRef<str>>(vocab: &Vocabulary, words: &[S]) -> TokenizedText {
    let mut out = TokenizedText::default();
    for (w, word) in words.iter().enumerate() {
        let norm: String = normalize(word.as_ref(), vocab.normalization())
            .split_whitespace()
            .collect();
        let mut ids = vocab.encode_word(&norm);
        if ids.is_empty() {
            ids.push(UNK);
        }
        for (j, id) in ids.into_iter().enumerate() {
            out.ids.push(id);
            out.word_index.push(w);
            out.is_continuation.push(j > 0);
        }
    }
    out
}

/// One encoder row: `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClsFeature {
    pub ids: Vec<u32>,
    pub segments: Vec<u32>,
}

/// Encodes a text or text pair into at most `max_len` tokens, dropping
/// subwords from the end of the longer side until it fits.
pub fn encode_pair(vocab: &Vocabulary, a: &str, b: Option<&str>, max_len: usize) -> Result<ClsFeature, HeadsError> {
    let mut ta = vocab.encode(a).ids;
    let mut tb = match b {
        Some(b) => Some(vocab.encode(b).ids),
        None => None,
    };
    if ta.is_empty() || tb.as_ref().is_some_and(|t| t.is_empty()) {
        return Err(HeadsError::InvalidInput("empty text".into()));
    }
    let specials = if tb.is_some() { 3 } else { 2 };
    let min = specials + 1 + tb.is_some() as usize;
    if max_len < min {
        return Err(HeadsError::InvalidConfig(format!(
            "max_len {max_len} cannot hold the special tokens and one subword per text"
        )));
    }
    loop {
        let lb = tb.as_ref().map_or(0, |t| t.len());
        if ta.len() + lb + specials <= max_len {
            break;
        }
        match &mut tb {
            Some(t) if t.len() >= ta.len() => {
                t.pop();
            }
            _ => {
                ta.pop();
            }
        }
    }
    let mut ids = vec![CLS];
    ids.extend(&ta);
    ids.push(SEP);
    let mut segments = vec![0; ids.len()];
    if let Some(t) = tb {
        ids.extend(&t);
        ids.push(SEP);
        segments.resize(ids.len(), 1);
    }
    Ok(ClsFeature { ids, segments })
}

/// Where a word's first subword is read from: encoder row `window`,
/// position `pos` within that row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordSlot {
    pub window: usize,
    pub pos: usize,
}

/// A word sequence laid out over sliding windows.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqFeature {
    pub tokens: TokenizedText,
    pub windows: Vec<Window>,
    pub slots: Vec<WordSlot>,
}

impl SeqFeature {
    pub fn new(tokens: TokenizedText, wcfg: &WindowingConfig) -> Result<Self, HeadsError> {
        if tokens.is_empty() {
            return Err(HeadsError::InvalidInput("empty sentence".into()));
        }
        let windows = plan_windows(tokens.len(), wcfg)?;
        let owners = token_owners(tokens.len(), wcfg)?;
        let slots = tokens
            .word_spans()
            .iter()
            .map(|span| {
                let w = owners[span.start];
                WordSlot {
                    window: w,
                    pos: 1 + span.start - windows[w].tokens.start,
                }
            })
            .collect();
        Ok(Self { tokens, windows, slots })
    }

    pub fn from_words<S: AsRef<str>>(
        vocab: &Vocabulary,
        words: &[S],
        wcfg: &WindowingConfig,
    ) -> Result<Self, HeadsError> {
        Self::new(encode_words(vocab, words), wcfg)
    }

    pub fn word_count(&self) -> usize {
        self.slots.len()
    }

    /// `[CLS] window tokens [SEP]` for every window.
    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.windows
            .iter()
            .map(|w| {
                let mut row = Vec::with_capacity(w.tokens.len() + 2);
                row.push(CLS);
                row.extend_from_slice(&self.tokens.ids[w.tokens.clone()]);
                row.push(SEP);
                row
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaConfig {
    pub max_len: usize,
    pub max_query_len: usize,
    /// Context tokens between the starts of consecutive windows.
    pub doc_stride: usize,
    /// Longest answer in subword tokens.
    pub max_answer_len: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            max_len: 128,
            max_query_len: 64,
            doc_stride: 64,
            max_answer_len: 30,
        }
    }
}

impl QaConfig {
    pub fn validate(&self) -> Result<(), HeadsError> {
        if self.max_len < self.max_query_len + 4 || self.max_query_len == 0 {
            return Err(HeadsError::InvalidConfig(format!(
                "max_len {} leaves no room for context after a {}-token question",
                self.max_len, self.max_query_len
            )));
        }
        if self.doc_stride == 0 || self.max_answer_len == 0 {
            return Err(HeadsError::InvalidConfig(
                "doc_stride and max_answer_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One encoder row of a QA example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaChunk {
    pub ids: Vec<u32>,
    pub segments: Vec<u32>,
    /// Row positions holding context tokens.
    pub context: Range<usize>,
    /// Context token index at row position `context.start`.
    pub offset: usize,
}

/// A question and its context split into windows.
#[derive(Clone, Debug, PartialEq)]
pub struct QaFeature {
    pub context: String,
    /// Context words with character ranges.
    pub words: Vec<(String, Range<usize>)>,
    /// Word index of every context token.
    pub token_word: Vec<usize>,
    pub chunks: Vec<QaChunk>,
}

impl QaFeature {
    pub fn new(vocab: &Vocabulary, question: &str, context: &str, qcfg: &QaConfig) -> Result<Self, HeadsError> {
        qcfg.validate()?;
        let mut q = vocab.encode(question).ids;
        if q.is_empty() {
            return Err(HeadsError::InvalidInput("empty question".into()));
        }
        q.truncate(qcfg.max_query_len);
        let words = qa_words(context);
        if words.is_empty() {
            return Err(HeadsError::InvalidInput("empty context".into()));
        }
        let surfaces: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
        let tokens = encode_words(vocab, &surfaces);
        let n = tokens.len();
        let cap = qcfg.max_len - 3 - q.len();
        let stride = qcfg.doc_stride.min(cap);
        let mut chunks = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + cap).min(n);
            let mut ids = vec![CLS];
            ids.extend(&q);
            ids.push(SEP);
            let ctx_start = ids.len();
            let mut segments = vec![0; ctx_start];
            ids.extend_from_slice(&tokens.ids[start..end]);
            ids.push(SEP);
            segments.resize(ids.len(), 1);
            chunks.push(QaChunk {
                ids,
                segments,
                context: ctx_start..ctx_start + (end - start),
                offset: start,
            });
            if end == n {
                break;
            }
            start += stride;
        }
        Ok(Self {
            context: context.to_string(),
            words,
            token_word: tokens.word_index,
            chunks,
        })
    }

    /// Context token span `(first, last)` covering the answer characters
    /// `[char_start, char_start + char_len)`.
    pub fn answer_tokens(&self, char_start: usize, char_len: usize) -> Option<(usize, usize)> {
        let char_end = char_start + char_len.max(1);
        let first = self.words.iter().position(|(_, r)| r.end > char_start)?;
        let last = self.words.iter().rposition(|(_, r)| r.start < char_end)?;
        if last < first {
            return None;
        }
        let s = self.token_word.iter().position(|&w| w == first)?;
        let e = self.token_word.iter().rposition(|&w| w == last)?;
        Some((s, e))
    }

    /// Training targets `(chunk, start_pos, end_pos)` in row positions for
    /// every window that holds the whole answer.
    pub fn targets(&self, char_start: usize, char_len: usize) -> Vec<(usize, usize, usize)> {
        let Some((s, e)) = self.answer_tokens(char_start, char_len) else {
            return Vec::new();
        };
        self.chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| c.offset <= s && e < c.offset + c.context.len())
            .map(|(i, c)| (i, c.context.start + s - c.offset, c.context.start + e - c.offset))
            .collect()
    }
}
