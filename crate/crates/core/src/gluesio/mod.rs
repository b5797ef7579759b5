//! Readers and canonical writers for the GLUES task formats, plus the QA
//! answer-offset validator.

mod conll;
mod conllu;
mod squad;
mod tsv;

pub use conll::{parse_conll2002, read_conll2002, write_conll2002, ConllStats};
pub use conllu::{parse_conllu, read_conllu, write_conllu, ConlluSentence};
pub use squad::{
    parse_squad_json, read_squad_json, validate_and_repair_offsets, write_squad_json, Answer, QaExample, RepairReport,
};
pub use tsv::{
    parse_tsv_pairs, read_tsv_pairs, write_tsv_pairs, ClassificationRecord, Column, TsvSchema, MLDOC_LABELS,
    PAWSX_LABELS, XNLI_LABELS,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GluesError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {at}: {msg}", path.display())]
    Format {
        path: PathBuf,
        /// Line, row or JSON path of the problem.
        at: String,
        msg: String,
    },
}

pub(crate) fn read_text(path: &Path) -> Result<String, GluesError> {
    std::fs::read_to_string(path).map_err(|source| GluesError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn format_err(path: &Path, at: impl Into<String>, msg: impl Into<String>) -> GluesError {
    GluesError::Format {
        path: path.to_path_buf(),
        at: at.into(),
        msg: msg.into(),
    }
}

/// Words with one tag each (BIO entity tags or POS tags).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

/// A sentence with its gold dependency tree. `heads[i]` is the head of word
/// `i + 1`, 0 for the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepSentence {
    pub words: Vec<String>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    pub is_punct: Vec<bool>,
}
