//! Byte-pair-encoding vocabulary with cased/uncased normalization and
//! word-boundary bookkeeping.

use std::path::PathBuf;

mod normalize;
mod train;
mod vocab;

pub use normalize::{normalize, normalize_bytes, NormalizationConfig, UnicodeForm};
pub use train::train_vocabulary;
pub use vocab::{
    Merge, Token, TokenKind, TokenizedText, VocabMeta, Vocabulary, CLS, CONTINUATION_MARKER, MASK, PAD, SEP,
    SPECIAL_TOKENS, UNK,
};

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Decode { offset: usize },
    #[error("corpus contains no words")]
    EmptyCorpus,
    #[error("subword_count {requested} is below the base alphabet size {required} (5 specials plus initial and continuation forms of every character)")]
    SubwordBudget { requested: usize, required: usize },
    #[error("token id {id} is outside the vocabulary (size {size})")]
    UnknownId { id: u32, size: usize },
    #[error("token id {0} is a reserved placeholder")]
    PlaceholderId(u32),
    #[error("vocabulary file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Encodes raw bytes: rejects invalid UTF-8, then behaves like
/// [`Vocabulary::encode`].
pub fn encode_bytes(bytes: &[u8], vocab: &Vocabulary) -> Result<TokenizedText, TokenizerError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TokenizerError::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(vocab.encode(text))
}
