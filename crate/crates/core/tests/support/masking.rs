//! Empirical statistics of whole-word masking over a generated corpus.

use std::collections::BTreeSet;

use mlmkit::dataprep::{generate_masked_examples, pack_sequences, MaskingConfig};
use mlmkit::tokenizer::{train_vocabulary, NormalizationConfig, MASK};

use super::corpus;

pub struct MaskingStats {
    pub examples: usize,
    /// Words with some but not all of their positions labeled.
    pub split_words: usize,
    /// Labeled words over all words.
    pub word_rate: f64,
    /// Among labeled positions: input is MASK, the original id, or other.
    pub mask_frac: f64,
    pub keep_frac: f64,
    pub random_frac: f64,
    /// Sequences whose duplicates all selected the same word set.
    pub identical_duplicate_sets: usize,
    /// Sequences that did not yield exactly `duplicates` examples.
    pub wrong_duplicate_counts: usize,
}

/// Packs a synthetic corpus into `max_len` sequences and masks
/// `sequences` of them `cfg.duplicates` times each.
pub fn masking_stats(sequences: usize, max_len: usize, cfg: &MaskingConfig) -> MaskingStats {
    let sentences = corpus::sentences((sequences * 30).max(3000), 2000, 17);
    let vocab = train_vocabulary(&sentences[..3000], &NormalizationConfig::default(), 3000, 0, 0).unwrap();
    let docs: Vec<Vec<_>> = sentences
        .chunks(30)
        .map(|c| c.iter().map(|s| vocab.encode(s)).collect())
        .collect();
    let packed = pack_sequences(docs, max_len).unwrap();
    assert!(packed.sequences.len() >= sequences, "corpus too small");

    let (mut words, mut labeled_words, mut split_words) = (0usize, 0usize, 0usize);
    let (mut masked, mut kept, mut other, mut positions) = (0usize, 0usize, 0usize, 0usize);
    let (mut examples, mut identical, mut wrong_counts) = (0usize, 0usize, 0usize);
    for (si, seq) in packed.sequences.iter().take(sequences).enumerate() {
        let out = generate_masked_examples(seq, si as u64, cfg, &vocab, max_len).unwrap();
        if out.len() != cfg.duplicates {
            wrong_counts += 1;
        }
        let spans = seq.word_spans();
        let mut sets = BTreeSet::new();
        for ex in &out {
            examples += 1;
            let mut selected = Vec::new();
            for (w, span) in spans.iter().enumerate() {
                // Example position p + 1 holds sequence token p.
                let n = span.clone().filter(|&p| ex.labels[p + 1].is_some()).count();
                words += 1;
                if n > 0 {
                    labeled_words += 1;
                    selected.push(w);
                    if n != span.len() {
                        split_words += 1;
                    }
                }
            }
            sets.insert(selected);
            for p in ex.labeled_positions() {
                positions += 1;
                let original = ex.labels[p].unwrap();
                match ex.input_ids[p] {
                    id if id == MASK => masked += 1,
                    id if id == original => kept += 1,
                    _ => other += 1,
                }
            }
        }
        if sets.len() < 2 {
            identical += 1;
        }
    }
    MaskingStats {
        examples,
        split_words,
        word_rate: labeled_words as f64 / words as f64,
        mask_frac: masked as f64 / positions as f64,
        keep_frac: kept as f64 / positions as f64,
        random_frac: other as f64 / positions as f64,
        identical_duplicate_sets: identical,
        wrong_duplicate_counts: wrong_counts,
    }
}
