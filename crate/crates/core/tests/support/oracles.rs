//! Brute-force reference implementations used to cross-check the library.
#![allow(dead_code)]

/// Every head vector over `n` words, in lexicographic order.
fn all_head_vectors(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    loop {
        out.push(cur.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] <= n {
                break;
            }
            cur[i] = 0;
        }
    }
}

/// True when following heads from every word reaches the root.
pub fn is_arborescence(heads: &[usize]) -> bool {
    let n = heads.len();
    (1..=n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            if v == 0 {
                return true;
            }
            if heads[v - 1] == v {
                return false;
            }
            v = heads[v - 1];
        }
        false
    })
}

/// Highest-scoring arborescence by exhaustive enumeration; the first in
/// lexicographic order wins ties. `scores[h][d - 1]`.
pub fn brute_mst(scores: &[Vec<f64>], single_root: bool) -> (Vec<usize>, f64) {
    let n = scores[0].len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for heads in all_head_vectors(n) {
        if !is_arborescence(&heads) {
            continue;
        }
        if single_root && heads.iter().filter(|&&h| h == 0).count() != 1 {
            continue;
        }
        let s: f64 = heads.iter().enumerate().map(|(d, &h)| scores[h][d]).sum();
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((heads, s));
        }
    }
    best.expect("at least one tree")
}

/// Number of arborescences over `n` words (with or without the single-root
/// restriction).
pub fn count_trees(n: usize, single_root: bool) -> usize {
    all_head_vectors(n)
        .into_iter()
        .filter(|h| is_arborescence(h) && (!single_root || h.iter().filter(|&&x| x == 0).count() == 1))
        .count()
}

/// Exhaustive span search over windows: `(window, start, end, score)` with
/// start/end in window-local row positions. Windows are visited in order,
/// ends ascending, starts ascending; only strictly better scores replace.
pub fn brute_span(
    windows: &[(Vec<f64>, Vec<f64>, std::ops::Range<usize>)],
    max_len: usize,
) -> Option<(usize, usize, usize, f64)> {
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for (w, (st, en, range)) in windows.iter().enumerate() {
        for e in range.clone() {
            for s in range.clone() {
                if s > e || e - s >= max_len {
                    continue;
                }
                let score = st[s] + en[e];
                if best.map_or(true, |b| score > b.3) {
                    best = Some((w, s, e, score));
                }
            }
        }
    }
    best
}

/// Entity spans `(type, start, end_exclusive)` of a BIO sequence, found by
/// checking every span for being a maximal chunk. `I-X` without an open
/// `X` chunk starts a new chunk.
pub fn brute_chunks(tags: &[String]) -> Vec<(String, usize, usize)> {
    let n = tags.len();
    let ty = |t: &str| t.get(2..).unwrap_or("").to_string();
    let begins = |i: usize| -> bool {
        let t = &tags[i];
        if t.starts_with("B-") {
            return true;
        }
        if t.starts_with("I-") {
            return i == 0 || tags[i - 1] == "O" || ty(&tags[i - 1]) != ty(t);
        }
        false
    };
    let mut out = Vec::new();
    for s in 0..n {
        for e in s + 1..=n {
            if !begins(s) {
                continue;
            }
            let t = ty(&tags[s]);
            let inside = (s + 1..e).all(|i| tags[i] == format!("I-{t}"));
            let closed = e == n || tags[e] != format!("I-{t}");
            if inside && closed {
                out.push((t, s, e));
            }
        }
    }
    out.sort();
    out
}
