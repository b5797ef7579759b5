use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_err, read_text, GluesError, TaggedSentence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConllStats {
    pub sentences: usize,
    pub tokens: usize,
    /// `I-X` tags rewritten to `B-X` because no `X` chunk was open.
    pub bio_repairs: usize,
}

fn chunk_type(tag: &str) -> Option<&str> {
    tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-"))
}

/// Rewrites `I-X` that does not continue an `X` chunk as `B-X`.
fn repair_bio(tags: &mut [String]) -> usize {
    let mut fixed = 0;
    for i in 0..tags.len() {
        if let Some(ty) = tags[i].strip_prefix("I-") {
            let open = i > 0 && chunk_type(&tags[i - 1]) == Some(ty);
            if !open {
                tags[i] = format!("B-{ty}");
                fixed += 1;
            }
        }
    }
    fixed
}

/// Parses CoNLL-2002 text: one `word ... tag` line per token (first column
/// is the word, last the tag), blank lines between sentences, `-DOCSTART-`
/// lines ignored.
pub fn parse_conll2002(text: &str, path: &Path) -> Result<(Vec<TaggedSentence>, ConllStats), GluesError> {
    let mut out = Vec::new();
    let mut stats = ConllStats::default();
    let mut cur = TaggedSentence::default();
    let mut flush = |cur: &mut TaggedSentence, stats: &mut ConllStats| {
        if !cur.words.is_empty() {
            stats.bio_repairs += repair_bio(&mut cur.tags);
            stats.sentences += 1;
            stats.tokens += cur.words.len();
            out.push(std::mem::take(cur));
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut cur, &mut stats);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(format_err(
                path,
                format!("line {}", i + 1),
                format!("expected a word and a tag, found {} column(s)", cols.len()),
            ));
        }
        let tag = cols[cols.len() - 1];
        if tag != "O" && chunk_type(tag).map_or(true, str::is_empty) {
            return Err(format_err(
                path,
                format!("line {}", i + 1),
                format!("tag {tag:?} is not BIO"),
            ));
        }
        cur.words.push(cols[0].to_string());
        cur.tags.push(tag.to_string());
    }
    flush(&mut cur, &mut stats);
    Ok((out, stats))
}

pub fn read_conll2002(path: &Path) -> Result<(Vec<TaggedSentence>, ConllStats), GluesError> {
    parse_conll2002(&read_text(path)?, path)
}

/// Canonical form: `word tag` lines, one blank line after each sentence.
pub fn write_conll2002(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (w, t) in s.words.iter().zip(&s.tags) {
            out.push_str(w);
            out.push(' ');
            out.push_str(t);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
