use std::collections::VecDeque;
use std::ops::Range;

/// Best `(start, end, score)` with `start <= end`, `end - start < max_len`
/// and both ends inside `allowed`, maximizing `start_logits[start] +
/// end_logits[end]`. Ties go to the smaller end, then the smaller start.
pub fn best_span(
    start_logits: &[f64],
    end_logits: &[f64],
    allowed: Range<usize>,
    max_len: usize,
) -> Option<(usize, usize, f64)> {
    let hi = allowed.end.min(start_logits.len()).min(end_logits.len());
    if max_len == 0 || allowed.start >= hi {
        return None;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    // Candidate starts in the window (e - max_len, e], front holds the max.
    let mut dq: VecDeque<usize> = VecDeque::new();
    for e in allowed.start..hi {
        while dq.back().is_some_and(|&b| start_logits[b] < start_logits[e]) {
            dq.pop_back();
        }
        dq.push_back(e);
        while dq.front().is_some_and(|&f| f + max_len <= e) {
            dq.pop_front();
        }
        let s = *dq.front().unwrap();
        let score = start_logits[s] + end_logits[e];
        if best.map_or(true, |(_, _, b)| score > b) {
            best = Some((s, e, score));
        }
    }
    best
}

/// Logits of one QA window, with the token positions that belong to the
/// context and each position's index into the whole context's tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkLogits {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub context: Range<usize>,
    /// Context token index of row position `context.start`.
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanChoice {
    pub chunk: usize,
    /// Context token indices (inclusive end).
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Best span across overlapping windows; the earliest window wins ties.
pub fn select_span(chunks: &[ChunkLogits], max_len: usize) -> Option<SpanChoice> {
    let mut best: Option<SpanChoice> = None;
    for (i, c) in chunks.iter().enumerate() {
        if let Some((s, e, score)) = best_span(&c.start, &c.end, c.context.clone(), max_len) {
            if best.map_or(true, |b| score > b.score) {
                best = Some(SpanChoice {
                    chunk: i,
                    start: s - c.context.start + c.offset,
                    end: e - c.context.start + c.offset,
                    score,
                });
            }
        }
    }
    best
}

/// Splits text into words for span extraction: maximal runs of
/// alphanumeric characters, and every other non-space character alone.
/// Offsets are character (not byte) positions, end-exclusive.
pub fn qa_words(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out: Vec<(String, Range<usize>)> = Vec::new();
    let mut run: Option<(String, usize)> = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_alphanumeric() {
            match &mut run {
                Some((s, _)) => s.push(c),
                None => run = Some((c.to_string(), i)),
            }
            continue;
        }
        if let Some((s, st)) = run.take() {
            out.push((s, st..i));
        }
        if !c.is_whitespace() {
            out.push((c.to_string(), i..i + 1));
        }
    }
    if let Some((s, st)) = run {
        out.push((s, st..n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_recovers_span() {
        let mut s = vec![0.0; 8];
        let mut e = vec![0.0; 8];
        s[2] = 10.0;
        e[5] = 10.0;
        assert_eq!(best_span(&s, &e, 0..8, 30), Some((2, 5, 20.0)));
    }

    #[test]
    fn reversed_pair_rejected() {
        let s = [0.0, 0.0, 0.0, 0.0, 5.0, 0.0];
        let e = [0.0, 4.0, 0.0, 0.0, 0.0, 1.0];
        // Best unconstrained pair (4, 1) has end < start.
        assert_eq!(best_span(&s, &e, 0..6, 6), Some((4, 5, 6.0)));
    }

    #[test]
    fn length_and_range_limits() {
        let s = [9.0, 0.0, 0.0, 0.0];
        let e = [0.0, 0.0, 0.0, 9.0];
        assert_eq!(best_span(&s, &e, 0..4, 3), Some((0, 0, 9.0)));
        assert_eq!(best_span(&s, &e, 1..4, 4), Some((1, 3, 9.0)));
        assert_eq!(best_span(&s, &e, 2..2, 4), None);
    }

    #[test]
    fn words_and_offsets() {
        let w = qa_words("¿Dónde  vive el gato?");
        let got: Vec<_> = w.iter().map(|(s, r)| (s.as_str(), r.start, r.end)).collect();
        assert_eq!(
            got,
            vec![
                ("¿", 0, 1),
                ("Dónde", 1, 6),
                ("vive", 8, 12),
                ("el", 13, 15),
                ("gato", 16, 20),
                ("?", 20, 21)
            ]
        );
        assert!(qa_words("   ").is_empty());
    }
}
