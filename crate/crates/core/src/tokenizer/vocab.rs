//! The vocabulary: special tokens, subwords, merge rules and reserved
//! placeholder ids, plus the text file that stores them.
//!
//! File layout (UTF-8, `\n` line endings):
//!
//! ```text
//! mlmkit-vocab 1
//! cased <bool>
//! unicode_form <NFC|NFKC>
//! collapse_whitespace <bool>
//! strip_accents <bool>
//! subword_count <requested subword budget, specials included>
//! placeholder_count <n>
//! seed <u64>
//! size <total ids>
//! merges <number of merge rules>
//! tokens
//! <one token per line, id order>
//! merges
//! <left> <right>
//! ```
//!
//! Ids `0..5` are `[PAD] [UNK] [CLS] [SEP] [MASK]`; the last
//! `placeholder_count` ids are `[unused0] ..`. Every other line is a subword:
//! a word-continuation piece is written `##piece`; a word-initial piece is
//! written verbatim, with a leading `\` added when it would otherwise start
//! with `##` or `\`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use super::normalize::{normalize, NormalizationConfig, UnicodeForm};
use super::TokenizerError;
use crate::util::{sha256_hex, write_atomic};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

const MAGIC: &str = "mlmkit-vocab 1";
pub const CONTINUATION_MARKER: &str = "##";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Special,
    Placeholder,
    /// First piece of a word.
    Initial,
    /// Non-initial piece of a word.
    Continuation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
}

impl Token {
    /// The token as written in the vocabulary file.
    pub fn marked(&self) -> String {
        match self.kind {
            TokenKind::Continuation => format!("{CONTINUATION_MARKER}{}", self.surface),
            TokenKind::Initial if self.surface.starts_with(CONTINUATION_MARKER) || self.surface.starts_with('\\') => {
                format!("\\{}", self.surface)
            }
            _ => self.surface.clone(),
        }
    }

    fn parse_subword(line: &str) -> Token {
        if let Some(rest) = line.strip_prefix('\\') {
            Token {
                surface: rest.to_string(),
                kind: TokenKind::Initial,
            }
        } else if let Some(rest) = line.strip_prefix(CONTINUATION_MARKER) {
            Token {
                surface: rest.to_string(),
                kind: TokenKind::Continuation,
            }
        } else {
            Token {
                surface: line.to_string(),
                kind: TokenKind::Initial,
            }
        }
    }
}

/// Result of tokenizing a text: subword ids with their source words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
    /// Index of the source word of each token; non-decreasing, steps of 0 or 1.
    pub word_index: Vec<usize>,
    /// True iff the token continues the previous token's word.
    pub is_continuation: Vec<bool>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_index.last().map_or(0, |w| w + 1)
    }

    /// Token ranges `[start, end)` of each word.
    pub fn word_spans(&self) -> Vec<Range<usize>> {
        let mut spans: Vec<Range<usize>> = Vec::with_capacity(self.word_count());
        for (i, &cont) in self.is_continuation.iter().enumerate() {
            if cont {
                if let Some(last) = spans.last_mut() {
                    last.end = i + 1;
                }
            } else {
                spans.push(i..i + 1);
            }
        }
        spans
    }

    /// Appends `other`, renumbering its words after ours.
    pub fn append(&mut self, other: &TokenizedText) {
        let offset = self.word_count();
        self.ids.extend_from_slice(&other.ids);
        self.word_index.extend(other.word_index.iter().map(|w| w + offset));
        self.is_continuation.extend_from_slice(&other.is_continuation);
    }

    /// Tokens `range`, with word indices renumbered from zero. `range` must
    /// start on a word boundary.
    pub fn slice(&self, range: Range<usize>) -> TokenizedText {
        let base = self.word_index.get(range.start).copied().unwrap_or(0);
        TokenizedText {
            ids: self.ids[range.clone()].to_vec(),
            word_index: self.word_index[range.clone()].iter().map(|w| w - base).collect(),
            is_continuation: {
                let mut c = self.is_continuation[range].to_vec();
                if let Some(first) = c.first_mut() {
                    *first = false;
                }
                c
            },
        }
    }
}

/// Header values recorded alongside the tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabMeta {
    pub normalization: NormalizationConfig,
    pub subword_count: usize,
    pub placeholder_count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    pub merged: u32,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    meta: VocabMeta,
    tokens: Vec<Token>,
    merges: Vec<Merge>,
    lookup: HashMap<(TokenKind, String), u32>,
    merge_rank: HashMap<(u32, u32), (usize, u32)>,
    placeholders: Range<u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta && self.tokens == other.tokens && self.merges == other.merges
    }
}

impl Vocabulary {
    /// Assembles a vocabulary from its subword tokens (specials and
    /// placeholders are added here) and merge rules over those tokens.
    pub(crate) fn assemble(meta: VocabMeta, subwords: Vec<Token>, merges: Vec<Merge>) -> Result<Self, TokenizerError> {
        let mut tokens: Vec<Token> = SPECIAL_TOKENS
            .iter()
            .map(|s| Token {
                surface: s.to_string(),
                kind: TokenKind::Special,
            })
            .collect();
        tokens.extend(subwords);
        let start = tokens.len() as u32;
        for i in 0..meta.placeholder_count {
            tokens.push(Token {
                surface: format!("[unused{i}]"),
                kind: TokenKind::Placeholder,
            });
        }
        let placeholders = start..tokens.len() as u32;

        let mut lookup = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if lookup.insert((t.kind, t.surface.clone()), id as u32).is_some() {
                return Err(TokenizerError::Format {
                    line: 0,
                    msg: format!("duplicate token {:?}", t.marked()),
                });
            }
        }
        let mut merge_rank = HashMap::with_capacity(merges.len());
        for (rank, m) in merges.iter().enumerate() {
            merge_rank.entry((m.left, m.right)).or_insert((rank, m.merged));
        }
        Ok(Self {
            meta,
            tokens,
            merges,
            lookup,
            merge_rank,
            placeholders,
        })
    }

    pub fn meta(&self) -> &VocabMeta {
        &self.meta
    }

    pub fn normalization(&self) -> &NormalizationConfig {
        &self.meta.normalization
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn placeholder_range(&self) -> Range<u32> {
        self.placeholders.clone()
    }

    /// Ids of subword tokens: everything except specials and placeholders.
    pub fn subword_range(&self) -> Range<u32> {
        SPECIAL_TOKENS.len() as u32..self.placeholders.start
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    pub fn id_of(&self, kind: TokenKind, surface: &str) -> Option<u32> {
        self.lookup.get(&(kind, surface.to_string())).copied()
    }

    /// Subword ids for one already-normalized word, applying merges in rank
    /// order. Characters outside the alphabet become `[UNK]`.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut symbols: Vec<u32> = word
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let kind = if i == 0 {
                    TokenKind::Initial
                } else {
                    TokenKind::Continuation
                };
                let mut buf = [0u8; 4];
                self.lookup
                    .get(&(kind, c.encode_utf8(&mut buf).to_string()))
                    .copied()
                    .unwrap_or(UNK)
            })
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|r| (r.0, w[0], w[1])))
                .min();
            let Some((rank, left, right)) = best else { break };
            let merged = self.merge_rank[&(left, right)].1;
            debug_assert_eq!(self.merge_rank[&(left, right)].0, rank);
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = out;
        }
        symbols
    }

    /// Normalizes `text`, splits it on whitespace and encodes each word.
    pub fn encode(&self, text: &str) -> TokenizedText {
        let normalized = normalize(text, &self.meta.normalization);
        self.encode_normalized_words(normalized.split_whitespace())
    }

    /// Encodes words that are already normalized, one word per item.
    pub fn encode_normalized_words<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> TokenizedText {
        let mut out = TokenizedText::default();
        for (w, word) in words.into_iter().enumerate() {
            for (j, id) in self.encode_word(word).into_iter().enumerate() {
                out.ids.push(id);
                out.word_index.push(w);
                out.is_continuation.push(j > 0);
            }
        }
        out
    }

    /// Joins subwords back into whitespace-separated words.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let token = self
                .tokens
                .get(id as usize)
                .ok_or(TokenizerError::UnknownId { id, size: self.size() })?;
            match token.kind {
                TokenKind::Placeholder => return Err(TokenizerError::PlaceholderId(id)),
                TokenKind::Continuation if !out.is_empty() => out.push_str(&token.surface),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&token.surface);
                }
            }
        }
        Ok(out)
    }

    /// Serializes to the documented text layout.
    pub fn to_file_string(&self) -> String {
        let n = &self.meta.normalization;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "cased {}", n.cased);
        let _ = writeln!(s, "unicode_form {}", n.unicode_form.name());
        let _ = writeln!(s, "collapse_whitespace {}", n.collapse_whitespace);
        let _ = writeln!(s, "strip_accents {}", n.strip_accents);
        let _ = writeln!(s, "subword_count {}", self.meta.subword_count);
        let _ = writeln!(s, "placeholder_count {}", self.meta.placeholder_count);
        let _ = writeln!(s, "seed {}", self.meta.seed);
        let _ = writeln!(s, "size {}", self.size());
        let _ = writeln!(s, "merges {}", self.merges.len());
        s.push_str("tokens\n");
        for t in &self.tokens {
            s.push_str(&t.marked());
            s.push('\n');
        }
        s.push_str("merges\n");
        for m in &self.merges {
            let _ = writeln!(
                s,
                "{} {}",
                self.tokens[m.left as usize].marked(),
                self.tokens[m.right as usize].marked()
            );
        }
        s
    }

    /// SHA-256 of the serialized file; identifies the vocabulary in
    /// downstream artifacts.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| TokenizerError::Format {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let (ln, magic) = next("header")?;
        if magic != MAGIC {
            return Err(TokenizerError::Format {
                line: ln,
                msg: format!("expected {MAGIC:?}, found {magic:?}"),
            });
        }
        let mut field = |key: &str| -> Result<(usize, String), TokenizerError> {
            let (ln, line) = next(key)?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok((ln, v.to_string())),
                _ => Err(TokenizerError::Format {
                    line: ln,
                    msg: format!("expected field {key:?}, found {line:?}"),
                }),
            }
        };
        fn parse_val<V: std::str::FromStr>((ln, v): (usize, String)) -> Result<V, TokenizerError> {
            v.parse().map_err(|_| TokenizerError::Format {
                line: ln,
                msg: format!("cannot parse {v:?}"),
            })
        }
        let cased: bool = parse_val(field("cased")?)?;
        let (ln, form) = field("unicode_form")?;
        let unicode_form = UnicodeForm::parse(&form).ok_or(TokenizerError::Format {
            line: ln,
            msg: format!("unknown unicode form {form:?}"),
        })?;
        let collapse_whitespace: bool = parse_val(field("collapse_whitespace")?)?;
        let strip_accents: bool = parse_val(field("strip_accents")?)?;
        let subword_count: usize = parse_val(field("subword_count")?)?;
        let placeholder_count: usize = parse_val(field("placeholder_count")?)?;
        let seed: u64 = parse_val(field("seed")?)?;
        let size: usize = parse_val(field("size")?)?;
        let merge_count: usize = parse_val(field("merges")?)?;
        drop(field);

        let (ln, marker) = next("tokens")?;
        if marker != "tokens" {
            return Err(TokenizerError::Format {
                line: ln,
                msg: "expected \"tokens\"".into(),
            });
        }
        if size < SPECIAL_TOKENS.len() + placeholder_count {
            return Err(TokenizerError::Format {
                line: ln,
                msg: format!("size {size} too small for specials and placeholders"),
            });
        }
        let subword_end = size - placeholder_count;
        let mut subwords = Vec::new();
        for id in 0..size {
            let (ln, line) = next("token")?;
            if id < SPECIAL_TOKENS.len() {
                if line != SPECIAL_TOKENS[id] {
                    return Err(TokenizerError::Format {
                        line: ln,
                        msg: format!("expected special token {}", SPECIAL_TOKENS[id]),
                    });
                }
            } else if id < subword_end {
                if line.is_empty() {
                    return Err(TokenizerError::Format {
                        line: ln,
                        msg: "empty token".into(),
                    });
                }
                subwords.push(Token::parse_subword(line));
            } else {
                let expected = format!("[unused{}]", id - subword_end);
                if line != expected {
                    return Err(TokenizerError::Format {
                        line: ln,
                        msg: format!("expected placeholder {expected}"),
                    });
                }
            }
        }
        let (ln, marker) = next("merges")?;
        if marker != "merges" {
            return Err(TokenizerError::Format {
                line: ln,
                msg: "expected \"merges\"".into(),
            });
        }
        let meta = VocabMeta {
            normalization: NormalizationConfig {
                cased,
                unicode_form,
                collapse_whitespace,
                strip_accents,
            },
            subword_count,
            placeholder_count,
            seed,
        };
        let partial = Vocabulary::assemble(meta.clone(), subwords.clone(), Vec::new())?;
        let by_marked: HashMap<String, u32> = partial
            .subword_range()
            .map(|id| (partial.tokens[id as usize].marked(), id))
            .collect();
        let mut merges = Vec::with_capacity(merge_count);
        for _ in 0..merge_count {
            let (ln, line) = next("merge rule")?;
            let bad = |msg: String| TokenizerError::Format { line: ln, msg };
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("merge rule {line:?} is not \"left right\"")))?;
            let left = *by_marked.get(l).ok_or_else(|| bad(format!("unknown token {l:?}")))?;
            let right = *by_marked.get(r).ok_or_else(|| bad(format!("unknown token {r:?}")))?;
            let lt = &partial.tokens[left as usize];
            let rt = &partial.tokens[right as usize];
            if rt.kind != TokenKind::Continuation {
                return Err(bad(format!("right side {r:?} is not a continuation piece")));
            }
            let merged = partial
                .id_of(lt.kind, &format!("{}{}", lt.surface, rt.surface))
                .ok_or_else(|| bad(format!("merge result of {line:?} is not in the vocabulary")))?;
            merges.push(Merge { left, right, merged });
        }
        match lines.next() {
            None | Some((_, "")) => {}
            Some((ln, extra)) => {
                return Err(TokenizerError::Format {
                    line: ln,
                    msg: format!("trailing content {extra:?}"),
                })
            }
        }
        if let Some((ln, extra)) = lines.next() {
            return Err(TokenizerError::Format {
                line: ln,
                msg: format!("trailing content {extra:?}"),
            });
        }
        Vocabulary::assemble(meta, subwords, merges)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        write_atomic(path, self.to_file_string().as_bytes()).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}
