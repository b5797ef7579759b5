//! Packing tokenized sentences into fixed-length sequences and expanding each
//! sequence into several whole-word-masked pre-training examples.

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tokenizer::{TokenizedText, Vocabulary, CLS, MASK, PAD, SEP};

mod shards;

pub use shards::{
    dataprep_config_hash, read_manifest, read_pretrain_shards, write_pretrain_shards, Manifest, ShardEntry,
    MANIFEST_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum DataprepError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    pub replace_with_mask: f64,
    pub replace_with_random: f64,
    pub keep_original: f64,
    pub whole_word: bool,
    pub duplicates: usize,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            replace_with_mask: 0.8,
            replace_with_random: 0.1,
            keep_original: 0.1,
            whole_word: true,
            duplicates: 10,
            seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<(), DataprepError> {
        let bad = |m: String| Err(DataprepError::InvalidConfig(m));
        let probs = [self.replace_with_mask, self.replace_with_random, self.keep_original];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("replacement probabilities {probs:?} must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("replacement probabilities sum to {total}, expected 1"));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1)", self.mask_rate));
        }
        if self.duplicates == 0 {
            return bad("duplicates must be at least 1".into());
        }
        Ok(())
    }
}

/// One training example of fixed length `L`: `[CLS] tokens [SEP] [PAD]..`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretrainExample {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    /// Original id at masked positions, `None` elsewhere.
    pub labels: Vec<Option<u32>>,
}

impl PretrainExample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Number of attended positions (specials included).
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }

    pub fn labeled_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|_| i))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PackOutput {
    pub sequences: Vec<TokenizedText>,
    /// Sentences dropped because one of their words alone exceeds the
    /// content capacity.
    pub skipped_sentences: usize,
}

/// Greedily concatenates the sentences of each document into sequences of at
/// most `max_len - 2` tokens. Sequences break only between words and never
/// span two documents; a sentence longer than the capacity is split at the
/// last word boundary that fits.
pub fn pack_sequences<D>(docs: D, max_len: usize) -> Result<PackOutput, DataprepError>
where
    D: IntoIterator,
    D::Item: IntoIterator<Item = TokenizedText>,
{
    if max_len < 8 {
        return Err(DataprepError::InvalidConfig(format!(
            "max_len {max_len} is below the minimum of 8"
        )));
    }
    let cap = max_len - 2;
    let mut out = PackOutput::default();
    for doc in docs {
        let mut current = TokenizedText::default();
        for sentence in doc {
            let spans = sentence.word_spans();
            if spans.iter().any(|s| s.len() > cap) {
                out.skipped_sentences += 1;
                continue;
            }
            if current.len() + sentence.len() <= cap {
                current.append(&sentence);
                continue;
            }
            if !current.is_empty() {
                out.sequences.push(std::mem::take(&mut current));
            }
            let mut start = 0;
            let mut end = 0;
            for span in &spans {
                if span.end - start > cap {
                    out.sequences.push(sentence.slice(start..end));
                    start = end;
                }
                end = span.end;
            }
            current = sentence.slice(start..end);
        }
        if !current.is_empty() {
            out.sequences.push(current);
        }
    }
    if out.skipped_sentences > 0 {
        log::warn!(
            "skipped {} sentences containing a word longer than {cap} subwords",
            out.skipped_sentences
        );
    }
    Ok(out)
}

/// Number of units to select: `ceil(rate * n)`, guarding against products
/// such as `0.15 * 20` landing a rounding error above an integer.
pub fn selection_count(rate: f64, n: usize) -> usize {
    let raw = rate * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() < 1e-9 {
        nearest
    } else {
        raw.ceil()
    };
    (k as usize).min(n)
}

/// The random stream for duplicate `dup` of sequence `seq_index`.
pub fn masking_rng(seed: u64, seq_index: u64, dup: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq_index);
    rng.set_word_pos((dup as u128) << 32);
    rng
}

/// Expands one packed sequence into `cfg.duplicates` masked examples of
/// length `max_len`. Each duplicate draws from its own counter-based stream,
/// so results do not depend on generation order.
pub fn generate_masked_examples(
    seq: &TokenizedText,
    seq_index: u64,
    cfg: &MaskingConfig,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<PretrainExample>, DataprepError> {
    cfg.validate()?;
    if seq.len() + 2 > max_len {
        return Err(DataprepError::InvalidConfig(format!(
            "sequence of {} tokens does not fit max_len {max_len}",
            seq.len()
        )));
    }
    let units: Vec<std::ops::Range<usize>> = if cfg.whole_word {
        seq.word_spans()
    } else {
        (0..seq.len()).map(|i| i..i + 1).collect()
    };
    if units.is_empty() {
        return Ok(Vec::new());
    }
    let pool = vocab.subword_range();
    if pool.is_empty() {
        return Err(DataprepError::InvalidConfig("vocabulary has no subword tokens".into()));
    }
    let k = selection_count(cfg.mask_rate, units.len());

    let mut base_ids = Vec::with_capacity(max_len);
    base_ids.push(CLS);
    base_ids.extend_from_slice(&seq.ids);
    base_ids.push(SEP);
    let active = base_ids.len();
    base_ids.resize(max_len, PAD);
    let mut attention_mask = vec![false; max_len];
    attention_mask[..active].fill(true);

    let mut examples = Vec::with_capacity(cfg.duplicates);
    for dup in 0..cfg.duplicates {
        let mut rng = masking_rng(cfg.seed, seq_index, dup);
        let mut chosen = sample(&mut rng, units.len(), k).into_vec();
        chosen.sort_unstable();
        let mut input_ids = base_ids.clone();
        let mut labels = vec![None; max_len];
        for u in chosen {
            for t in units[u].clone() {
                let pos = t + 1;
                let original = input_ids[pos];
                labels[pos] = Some(original);
                let r: f64 = rng.gen();
                if r < cfg.replace_with_mask {
                    input_ids[pos] = MASK;
                } else if r < cfg.replace_with_mask + cfg.replace_with_random {
                    input_ids[pos] = rng.gen_range(pool.clone());
                }
            }
        }
        examples.push(PretrainExample {
            input_ids,
            attention_mask: attention_mask.clone(),
            labels,
        });
    }
    Ok(examples)
}

/// Splits raw corpus text into documents (separated by blank lines) of
/// sentences (one per line).
pub fn split_documents(text: &str) -> Vec<Vec<&str>> {
    let mut docs = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// Encodes, packs and masks a raw corpus in one go.
pub fn build_examples(
    text: &str,
    vocab: &Vocabulary,
    max_len: usize,
    cfg: &MaskingConfig,
) -> Result<(Vec<PretrainExample>, PackOutput), DataprepError> {
    let docs = split_documents(text);
    let packed = pack_sequences(
        docs.iter()
            .map(|d| d.iter().map(|s| vocab.encode(s)).collect::<Vec<_>>()),
        max_len,
    )?;
    let mut examples = Vec::new();
    for (i, seq) in packed.sequences.iter().enumerate() {
        examples.extend(generate_masked_examples(seq, i as u64, cfg, vocab, max_len)?);
    }
    Ok((examples, packed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_vocabulary, NormalizationConfig};

    /// Synthetic sentence: `words` words, each `per_word` subwords long.
    fn sentence(words: usize, per_word: usize) -> TokenizedText {
        let mut t = TokenizedText::default();
        for w in 0..words {
            for j in 0..per_word {
                t.ids.push(10 + j as u32);
                t.word_index.push(w);
                t.is_continuation.push(j > 0);
            }
        }
        t
    }

    fn vocab() -> Vocabulary {
        train_vocabulary(
            ["uno dos tres cuatro cinco seis siete ocho nueve diez"],
            &NormalizationConfig::default(),
            80,
            5,
            0,
        )
        .unwrap()
    }

    #[test]
    fn two_sentences_share_a_sequence() {
        let out = pack_sequences([vec![sentence(60, 1), sentence(60, 1)]], 128).unwrap();
        assert_eq!(out.sequences.len(), 1);
        assert_eq!(out.sequences[0].len(), 120);
        assert_eq!(out.sequences[0].word_count(), 120);
    }

    #[test]
    fn long_sentence_splits_at_word_boundary() {
        // 100 words of 3 subwords: 126 / 3 = 42 words fit exactly.
        let out = pack_sequences([vec![sentence(100, 3)]], 128).unwrap();
        let lens: Vec<_> = out.sequences.iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![126, 126, 48]);
        // 75 words of 4 subwords: 31 words = 124 tokens fit, 32 would not.
        let out = pack_sequences([vec![sentence(75, 4)]], 128).unwrap();
        assert_eq!(out.sequences[0].len(), 124);
        assert!(out.sequences.iter().all(|s| !s.is_continuation[0]));
    }

    #[test]
    fn documents_are_never_joined() {
        let out = pack_sequences([vec![sentence(5, 1)], vec![sentence(5, 1)]], 128).unwrap();
        assert_eq!(out.sequences.len(), 2);
    }

    #[test]
    fn empty_stream_and_oversized_word() {
        let empty: Vec<Vec<TokenizedText>> = Vec::new();
        assert!(pack_sequences(empty, 128).unwrap().sequences.is_empty());
        let out = pack_sequences([vec![sentence(1, 20), sentence(2, 1)]], 16).unwrap();
        assert_eq!(out.skipped_sentences, 1);
        assert_eq!(out.sequences.len(), 1);
        assert!(pack_sequences([vec![sentence(1, 1)]], 7).is_err());
    }

    #[test]
    fn twenty_words_select_three() {
        assert_eq!(selection_count(0.15, 20), 3);
        let v = vocab();
        let seq = sentence(20, 1);
        let ex = generate_masked_examples(&seq, 0, &MaskingConfig::default(), &v, 32).unwrap();
        assert_eq!(ex.len(), 10);
        for e in &ex {
            assert_eq!(e.labeled_positions().count(), 3);
        }
    }

    #[test]
    fn whole_words_are_labeled_together() {
        let v = vocab();
        let seq = sentence(10, 3);
        let ex = generate_masked_examples(&seq, 4, &MaskingConfig::default(), &v, 40).unwrap();
        for e in &ex {
            let labeled: Vec<_> = e.labeled_positions().collect();
            assert_eq!(labeled.len(), 6);
            for chunk in labeled.chunks(3) {
                assert_eq!((chunk[0] - 1) % 3, 0);
                assert_eq!(chunk, &[chunk[0], chunk[0] + 1, chunk[0] + 2]);
            }
        }
    }

    #[test]
    fn duplicates_differ_and_are_reproducible() {
        let v = vocab();
        let seq = sentence(50, 1);
        let cfg = MaskingConfig::default();
        let a = generate_masked_examples(&seq, 9, &cfg, &v, 64).unwrap();
        let b = generate_masked_examples(&seq, 9, &cfg, &v, 64).unwrap();
        assert_eq!(a, b);
        let sets: std::collections::HashSet<Vec<usize>> = a.iter().map(|e| e.labeled_positions().collect()).collect();
        assert!(sets.len() >= 2);
    }

    #[test]
    fn layout_and_label_positions() {
        let v = vocab();
        let seq = v.encode("uno dos tres");
        let ex = generate_masked_examples(&seq, 0, &MaskingConfig::default(), &v, 12).unwrap();
        for e in ex {
            assert_eq!(e.input_ids[0], CLS);
            assert_eq!(e.input_ids[seq.len() + 1], SEP);
            assert!(e.input_ids[seq.len() + 2..].iter().all(|&i| i == PAD));
            assert_eq!(e.active_len(), seq.len() + 2);
            for p in e.labeled_positions() {
                assert!(e.attention_mask[p] && p >= 1 && p <= seq.len());
            }
        }
    }

    #[test]
    fn empty_sequence_gives_no_examples() {
        let v = vocab();
        let ex = generate_masked_examples(&TokenizedText::default(), 0, &MaskingConfig::default(), &v, 16).unwrap();
        assert!(ex.is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = MaskingConfig::default();
        c.keep_original = 0.2;
        assert!(c.validate().is_err());
        let c = MaskingConfig {
            mask_rate: 0.0,
            ..MaskingConfig::default()
        };
        assert!(c.validate().is_err());
        let c = MaskingConfig {
            duplicates: 0,
            ..MaskingConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn documents_split_on_blank_lines() {
        let docs = split_documents("a b\nc d\n\n\ne f\n");
        assert_eq!(docs, vec![vec!["a b", "c d"], vec!["e f"]]);
    }
}
