use std::path::Path;

use super::{format_err, read_text, DepSentence, GluesError, TaggedSentence};
use crate::heads::validate_tree;

/// The columns of one CoNLL-U sentence that the tasks use. Multiword-token
/// range lines and empty nodes are not represented.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConlluSentence {
    pub words: Vec<String>,
    pub upos: Vec<String>,
    pub heads: Vec<usize>,
    pub deprels: Vec<String>,
}

impl ConlluSentence {
    pub fn to_pos(&self) -> TaggedSentence {
        TaggedSentence {
            words: self.words.clone(),
            tags: self.upos.clone(),
        }
    }

    pub fn to_dep(&self) -> DepSentence {
        DepSentence {
            words: self.words.clone(),
            heads: self.heads.clone(),
            labels: self.deprels.clone(),
            is_punct: self.upos.iter().map(|u| u == "PUNCT").collect(),
        }
    }
}

/// Parses CoNLL-U. Comment lines, multiword-token ranges (`1-2`) and empty
/// nodes (`1.1`) are skipped; every sentence's heads must form a tree.
pub fn parse_conllu(text: &str, path: &Path) -> Result<Vec<ConlluSentence>, GluesError> {
    let mut out = Vec::new();
    let mut cur = ConlluSentence::default();
    let mut start_line = 1;
    let check = |cur: &ConlluSentence, line: usize| -> Result<(), GluesError> {
        validate_tree(&cur.heads)
            .map_err(|m| format_err(path, format!("line {line}"), format!("invalid tree in sentence: {m}")))
    };
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.words.is_empty() {
                check(&cur, start_line)?;
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if cur.words.is_empty() {
            start_line = ln;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(format_err(
                path,
                format!("line {ln}"),
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| format_err(path, format!("line {ln}"), format!("bad word id {:?}", cols[0])))?;
        if id != cur.words.len() + 1 {
            return Err(format_err(
                path,
                format!("line {ln}"),
                format!("word id {id} out of sequence, expected {}", cur.words.len() + 1),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| format_err(path, format!("line {ln}"), format!("non-integer head {:?}", cols[6])))?;
        cur.words.push(cols[1].to_string());
        cur.upos.push(cols[3].to_string());
        cur.heads.push(head);
        cur.deprels.push(cols[7].to_string());
    }
    if !cur.words.is_empty() {
        check(&cur, start_line)?;
        out.push(cur);
    }
    Ok(out)
}

pub fn read_conllu(path: &Path) -> Result<Vec<ConlluSentence>, GluesError> {
    parse_conllu(&read_text(path)?, path)
}

/// Canonical CoNLL-U with unused columns set to `_`.
pub fn write_conllu(sentences: &[ConlluSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for i in 0..s.words.len() {
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                s.words[i],
                s.upos[i],
                s.heads[i],
                s.deprels[i]
            ));
        }
        out.push('\n');
    }
    out
}
