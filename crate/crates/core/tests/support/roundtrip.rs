//! Vocabulary determinism and encode/decode identity on a generated corpus.

use mlmkit::tokenizer::{normalize, train_vocabulary, NormalizationConfig, UNK};

use super::corpus;

pub struct RoundTrip {
    pub sentences: usize,
    pub identical_files: bool,
    pub unk_tokens: usize,
    /// Sentences whose decoding differs from the original text. The
    /// corpus is already normalized, so none should.
    pub mismatches: usize,
}

pub fn round_trip(sentences: usize, subword_count: usize) -> RoundTrip {
    let text = corpus::sentences(sentences, 3000, 23);
    let cfg = NormalizationConfig::default();
    let a = train_vocabulary(&text, &cfg, subword_count, 100, 5).unwrap();
    let b = train_vocabulary(&text, &cfg, subword_count, 100, 5).unwrap();
    let (mut unk_tokens, mut mismatches) = (0, 0);
    for s in &text {
        let enc = a.encode(s);
        unk_tokens += enc.ids.iter().filter(|&&id| id == UNK).count();
        if normalize(s, &cfg) != *s || a.decode(&enc.ids).unwrap() != *s {
            mismatches += 1;
        }
    }
    RoundTrip {
        sentences,
        identical_files: a.to_file_string() == b.to_file_string(),
        unk_tokens,
        mismatches,
    }
}
