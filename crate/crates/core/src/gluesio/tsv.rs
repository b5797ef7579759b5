use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_err, read_text, GluesError};

pub const XNLI_LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];
pub const PAWSX_LABELS: [&str; 2] = ["0", "1"];
pub const MLDOC_LABELS: [&str; 4] = ["CCAT", "ECAT", "GCAT", "MCAT"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: String,
}

/// A column by 0-based index or, when the file has a header, by name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsvSchema {
    pub header: bool,
    pub text_a: Column,
    #[serde(default)]
    pub text_b: Option<Column>,
    pub label: Column,
    pub labels: Vec<String>,
}

impl TsvSchema {
    fn named(a: &str, b: Option<&str>, label: &str, labels: &[&str]) -> Self {
        Self {
            header: true,
            text_a: Column::Name(a.into()),
            text_b: b.map(|b| Column::Name(b.into())),
            label: Column::Name(label.into()),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// XNLI dev/test layout.
    pub fn xnli() -> Self {
        Self::named("sentence1", Some("sentence2"), "gold_label", &XNLI_LABELS)
    }

    /// PAWS-X layout (`id sentence1 sentence2 label`).
    pub fn pawsx() -> Self {
        Self::named("sentence1", Some("sentence2"), "label", &PAWSX_LABELS)
    }

    /// MLDoc layout: `label<TAB>text`, no header.
    pub fn mldoc() -> Self {
        Self {
            header: false,
            text_a: Column::Index(1),
            text_b: None,
            label: Column::Index(0),
            labels: MLDOC_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The layout produced by [`write_tsv_pairs`].
    pub fn canonical(pair: bool, labels: &[String]) -> Self {
        Self {
            header: true,
            text_a: Column::Name("text_a".into()),
            text_b: pair.then(|| Column::Name("text_b".into())),
            label: Column::Name("label".into()),
            labels: labels.to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "xnli" => Some(Self::xnli()),
            "pawsx" | "paws-x" => Some(Self::pawsx()),
            "mldoc" => Some(Self::mldoc()),
            _ => None,
        }
    }
}

fn resolve(col: &Column, header: Option<&[&str]>, path: &Path) -> Result<usize, GluesError> {
    match (col, header) {
        (Column::Index(i), _) => Ok(*i),
        (Column::Name(n), Some(h)) => h
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| format_err(path, "row 1", format!("header has no column {n:?}"))),
        (Column::Name(n), None) => Err(format_err(
            path,
            "schema",
            format!("column {n:?} is named but the schema has no header"),
        )),
    }
}

/// Parses tab-separated classification rows. Rows are numbered from 1
/// counting the header; blank lines are skipped.
pub fn parse_tsv_pairs(text: &str, schema: &TsvSchema, path: &Path) -> Result<Vec<ClassificationRecord>, GluesError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header: Option<Vec<&str>> = if schema.header {
        let (_, h) = lines
            .next()
            .ok_or_else(|| format_err(path, "row 1", "missing header"))?;
        Some(h.trim_end_matches('\r').split('\t').collect())
    } else {
        None
    };
    let a = resolve(&schema.text_a, header.as_deref(), path)?;
    let b = match &schema.text_b {
        Some(c) => Some(resolve(c, header.as_deref(), path)?),
        None => None,
    };
    let l = resolve(&schema.label, header.as_deref(), path)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = format!("row {}", i + 1);
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let get = |c: usize, what: &str| -> Result<String, GluesError> {
            match cols.get(c) {
                Some(v) if !v.trim().is_empty() => Ok(v.to_string()),
                _ => Err(format_err(path, row.clone(), format!("missing {what} in column {c}"))),
            }
        };
        let label = get(l, "label")?;
        if !schema.labels.iter().any(|x| *x == label) {
            return Err(format_err(
                path,
                row.clone(),
                format!("unknown label {label:?}, expected one of {:?}", schema.labels),
            ));
        }
        out.push(ClassificationRecord {
            text_a: get(a, "text_a")?,
            text_b: match b {
                Some(b) => Some(get(b, "text_b")?),
                None => None,
            },
            label,
        });
    }
    Ok(out)
}

pub fn read_tsv_pairs(path: &Path, schema: &TsvSchema) -> Result<Vec<ClassificationRecord>, GluesError> {
    parse_tsv_pairs(&read_text(path)?, schema, path)
}

/// Canonical layout: header `text_a[ text_b] label`.
pub fn write_tsv_pairs(records: &[ClassificationRecord]) -> String {
    let pair = records.first().is_some_and(|r| r.text_b.is_some());
    let mut out = String::from(if pair {
        "text_a\ttext_b\tlabel\n"
    } else {
        "text_a\tlabel\n"
    });
    for r in records {
        out.push_str(&r.text_a);
        out.push('\t');
        if let Some(b) = &r.text_b {
            out.push_str(b);
            out.push('\t');
        }
        out.push_str(&r.label);
        out.push('\n');
    }
    out
}
