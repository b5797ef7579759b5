//! Synthetic QA examples whose answers occur exactly once in the context.
#![allow(dead_code)]

use mlmkit::gluesio::{Answer, QaExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn count_occurrences(hay: &[char], needle: &[char]) -> usize {
    if needle.len() > hay.len() {
        return 0;
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .count()
}

pub struct Synth {
    pub examples: Vec<QaExample>,
    /// Correct offsets, parallel to `examples` (one answer each).
    pub truth: Vec<usize>,
    pub corrupted: usize,
}

/// `n` examples; each answer's offset is moved elsewhere with probability
/// `rate`.
pub fn offset_corpus(n: usize, rate: f64, seed: u64) -> Synth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sents = super::corpus::sentences(n * 4, 3000, seed ^ 77);
    let mut examples = Vec::new();
    let mut truth = Vec::new();
    let mut corrupted = 0;
    let mut k = 0;
    while examples.len() < n {
        let context = format!(
            "{}. {}. {}.",
            sents[k % sents.len()],
            sents[(k + 1) % sents.len()],
            sents[(k + 2) % sents.len()]
        );
        k += 3;
        let ctx: Vec<char> = context.chars().collect();
        let words: Vec<(usize, usize)> = {
            let mut v = Vec::new();
            let mut i = 0;
            while i < ctx.len() {
                if ctx[i].is_alphanumeric() {
                    let s = i;
                    while i < ctx.len() && ctx[i].is_alphanumeric() {
                        i += 1;
                    }
                    v.push((s, i));
                } else {
                    i += 1;
                }
            }
            v
        };
        let mut found = None;
        for _ in 0..20 {
            let a = rng.gen_range(0..words.len());
            let b = (a + rng.gen_range(0..3)).min(words.len() - 1);
            let (s, e) = (words[a].0, words[b].1);
            if count_occurrences(&ctx, &ctx[s..e]) == 1 {
                found = Some((s, e));
                break;
            }
        }
        let Some((s, e)) = found else { continue };
        let text: String = ctx[s..e].iter().collect();
        let mut start = s;
        if rng.gen_bool(rate) {
            while start == s {
                start = rng.gen_range(0..ctx.len());
            }
            corrupted += 1;
        }
        examples.push(QaExample {
            id: format!("q{}", examples.len()),
            question: format!("¿qué dice {}?", examples.len()),
            context,
            answers: vec![Answer {
                text,
                char_start: start,
            }],
        });
        truth.push(s);
    }
    Synth {
        examples,
        truth,
        corrupted,
    }
}
