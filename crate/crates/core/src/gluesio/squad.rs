use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{format_err, read_text, GluesError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character (not byte) offset into the context.
    pub char_start: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<Answer>,
}

fn field<'a>(v: &'a Value, key: &str, at: &str, path: &Path) -> Result<&'a Value, GluesError> {
    v.get(key)
        .ok_or_else(|| format_err(path, format!("{at}.{key}"), "missing field"))
}

fn array<'a>(v: &'a Value, key: &str, at: &str, path: &Path) -> Result<&'a Vec<Value>, GluesError> {
    field(v, key, at, path)?
        .as_array()
        .ok_or_else(|| format_err(path, format!("{at}.{key}"), "expected an array"))
}

fn string(v: &Value, key: &str, at: &str, path: &Path) -> Result<String, GluesError> {
    field(v, key, at, path)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format_err(path, format!("{at}.{key}"), "expected a string"))
}

/// Loads a SQuAD v1.1 file (`data[].paragraphs[].qas[].answers[]`).
/// Offsets are taken as given; see [`validate_and_repair_offsets`].
pub fn parse_squad_json(text: &str, path: &Path) -> Result<Vec<QaExample>, GluesError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| format_err(path, format!("line {}", e.line()), e.to_string()))?;
    let mut out = Vec::new();
    for (di, doc) in array(&root, "data", "$", path)?.iter().enumerate() {
        let at = format!("$.data[{di}]");
        for (pi, para) in array(doc, "paragraphs", &at, path)?.iter().enumerate() {
            let at = format!("{at}.paragraphs[{pi}]");
            let context = string(para, "context", &at, path)?;
            for (qi, qa) in array(para, "qas", &at, path)?.iter().enumerate() {
                let at = format!("{at}.qas[{qi}]");
                let id = match field(qa, "id", &at, path)? {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    _ => return Err(format_err(path, format!("{at}.id"), "expected a string")),
                };
                let question = string(qa, "question", &at, path)?;
                let mut answers = Vec::new();
                for (ai, a) in array(qa, "answers", &at, path)?.iter().enumerate() {
                    let at = format!("{at}.answers[{ai}]");
                    let text = string(a, "text", &at, path)?;
                    let char_start = field(a, "answer_start", &at, path)?.as_u64().ok_or_else(|| {
                        format_err(path, format!("{at}.answer_start"), "expected a non-negative integer")
                    })? as usize;
                    answers.push(Answer { text, char_start });
                }
                out.push(QaExample {
                    id,
                    question,
                    context: context.clone(),
                    answers,
                });
            }
        }
    }
    Ok(out)
}

pub fn read_squad_json(path: &Path) -> Result<Vec<QaExample>, GluesError> {
    parse_squad_json(&read_text(path)?, path)
}

/// Canonical SQuAD JSON: one document, one paragraph per example.
pub fn write_squad_json(examples: &[QaExample]) -> String {
    let paragraphs: Vec<Value> = examples
        .iter()
        .map(|e| {
            json!({
                "context": e.context,
                "qas": [{
                    "id": e.id,
                    "question": e.question,
                    "answers": e.answers.iter().map(|a| json!({
                        "text": a.text,
                        "answer_start": a.char_start,
                    })).collect::<Vec<_>>(),
                }],
            })
        })
        .collect();
    let doc = json!({ "version": "1.1", "data": [{ "title": "", "paragraphs": paragraphs }] });
    serde_json::to_string_pretty(&doc).expect("json serializes") + "\n"
}

/// Answer-offset validation counts, per answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub valid: usize,
    pub repaired: usize,
    pub dropped: usize,
    pub repaired_exact: usize,
    pub repaired_case_insensitive: usize,
    pub repaired_whitespace: usize,
    /// Answers dropped because the text occurs more than once.
    pub dropped_ambiguous: usize,
    /// Answers dropped because the text does not occur.
    pub dropped_absent: usize,
    /// Examples left without any answer.
    pub examples_dropped: usize,
}

fn fold(c: char) -> impl Iterator<Item = char> {
    c.to_lowercase()
}

/// Start positions (in chars) where `needle` occurs, under `eq`.
fn occurrences(hay: &[char], needle: &[char], eq: impl Fn(char, char) -> bool) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| needle.iter().zip(&hay[i..]).all(|(&a, &b)| eq(a, b)))
        .collect()
}

/// Matches `needle` with every whitespace run standing for any non-empty
/// whitespace run, case-insensitively. Returns `(start, end)` char ranges.
fn whitespace_occurrences(hay: &[char], needle: &str) -> Vec<(usize, usize)> {
    let parts: Vec<Vec<char>> = needle.split_whitespace().map(|p| p.chars().collect()).collect();
    if parts.is_empty() {
        return Vec::new();
    }
    let eq = |a: char, b: char| fold(a).eq(fold(b));
    let at = |pos: usize, part: &[char]| -> bool {
        pos + part.len() <= hay.len() && part.iter().zip(&hay[pos..]).all(|(&a, &b)| eq(a, b))
    };
    let mut out = Vec::new();
    for start in 0..hay.len() {
        let mut pos = start;
        let mut ok = true;
        for (k, part) in parts.iter().enumerate() {
            if k > 0 {
                let ws = hay[pos..].iter().take_while(|c| c.is_whitespace()).count();
                if ws == 0 {
                    ok = false;
                    break;
                }
                pos += ws;
            }
            if !at(pos, part) {
                ok = false;
                break;
            }
            pos += part.len();
        }
        if ok {
            out.push((start, pos));
        }
    }
    out
}

/// Checks that every answer's text sits at its offset. Otherwise searches
/// the context (exact, then case-insensitive, then with whitespace runs
/// normalized) and repairs the offset when exactly one match exists; for
/// the inexact strategies the answer text becomes the matched context
/// span. Answers with zero or several matches are dropped. With `strict`,
/// repaired answers are counted but dropped as well.
pub fn validate_and_repair_offsets(examples: &[QaExample], strict: bool) -> (Vec<QaExample>, RepairReport) {
    let mut report = RepairReport::default();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let ctx: Vec<char> = ex.context.chars().collect();
        let mut kept = Vec::new();
        for a in &ex.answers {
            let ans: Vec<char> = a.text.chars().collect();
            let end = a.char_start + ans.len();
            if !ans.is_empty() && end <= ctx.len() && ctx[a.char_start..end] == ans[..] {
                report.valid += 1;
                kept.push(a.clone());
                continue;
            }
            let exact = occurrences(&ctx, &ans, |x, y| x == y);
            let repaired = if exact.len() == 1 {
                report.repaired_exact += 1;
                Some((exact[0], exact[0] + ans.len()))
            } else if !exact.is_empty() {
                None
            } else {
                let ci = occurrences(&ctx, &ans, |x, y| fold(x).eq(fold(y)));
                if ci.len() == 1 {
                    report.repaired_case_insensitive += 1;
                    Some((ci[0], ci[0] + ans.len()))
                } else if !ci.is_empty() {
                    None
                } else {
                    let ws = whitespace_occurrences(&ctx, &a.text);
                    if ws.len() == 1 {
                        report.repaired_whitespace += 1;
                        Some(ws[0])
                    } else {
                        if ws.is_empty() {
                            report.dropped_absent += 1;
                        }
                        report.dropped += 1;
                        if !ws.is_empty() {
                            report.dropped_ambiguous += 1;
                        }
                        continue;
                    }
                }
            };
            match repaired {
                Some((s, e)) => {
                    report.repaired += 1;
                    if !strict {
                        kept.push(Answer {
                            text: ctx[s..e].iter().collect(),
                            char_start: s,
                        });
                    }
                }
                None => {
                    report.dropped += 1;
                    report.dropped_ambiguous += 1;
                }
            }
        }
        if kept.is_empty() {
            report.examples_dropped += 1;
        } else {
            out.push(QaExample {
                answers: kept,
                ..ex.clone()
            });
        }
    }
    (out, report)
}
