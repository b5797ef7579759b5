use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::TokenizerError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnicodeForm {
    #[serde(rename = "NFC")]
    Nfc,
    #[serde(rename = "NFKC")]
    Nfkc,
}

impl UnicodeForm {
    pub fn name(self) -> &'static str {
        match self {
            UnicodeForm::Nfc => "NFC",
            UnicodeForm::Nfkc => "NFKC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NFC" => Some(UnicodeForm::Nfc),
            "NFKC" => Some(UnicodeForm::Nfkc),
            _ => None,
        }
    }

    fn apply(self, s: &str) -> String {
        match self {
            UnicodeForm::Nfc => s.nfc().collect(),
            UnicodeForm::Nfkc => s.nfkc().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationConfig {
    pub cased: bool,
    pub unicode_form: UnicodeForm,
    pub collapse_whitespace: bool,
    /// Remove combining marks after decomposition. Off by default: Spanish
    /// diacritics distinguish words (año / ano).
    #[serde(default)]
    pub strip_accents: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            cased: true,
            unicode_form: UnicodeForm::Nfc,
            collapse_whitespace: true,
            strip_accents: false,
        }
    }
}

impl NormalizationConfig {
    pub fn uncased() -> Self {
        Self {
            cased: false,
            ..Self::default()
        }
    }
}

fn pass(text: &str, cfg: &NormalizationConfig) -> String {
    let mut s = cfg.unicode_form.apply(text);
    if cfg.strip_accents {
        let stripped: String = s.nfd().filter(|c| !is_combining_mark(*c)).collect();
        s = cfg.unicode_form.apply(&stripped);
    }
    if !cfg.cased {
        s = cfg.unicode_form.apply(&s.to_lowercase());
    }
    if cfg.collapse_whitespace {
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    s
}

/// Unicode-normalizes, optionally lowercases and strips accents, and
/// optionally collapses whitespace runs (trimming the ends).
///
/// Compatibility decompositions can expose new uppercase letters after
/// lowercasing, so the pipeline is repeated until it reaches a fixed point.
pub fn normalize(text: &str, cfg: &NormalizationConfig) -> String {
    let mut current = pass(text, cfg);
    for _ in 0..4 {
        let next = pass(&current, cfg);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// [`normalize`] on raw bytes, rejecting invalid UTF-8.
pub fn normalize_bytes(bytes: &[u8], cfg: &NormalizationConfig) -> Result<String, TokenizerError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TokenizerError::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(normalize(text, cfg))
}
