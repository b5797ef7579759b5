//! Deterministic Spanish-looking synthetic text.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONSETS: &[&str] = &[
    "", "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "ll", "ñ", "br", "tr", "pl", "gr",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "á", "é", "í", "ó", "ú", "ue", "ie"];
const CODAS: &[&str] = &["", "", "", "n", "s", "r", "l"];
const FUNCTION_WORDS: &[&str] = &[
    "el", "la", "los", "las", "de", "en", "y", "que", "un", "una", "con", "por", "para", "se",
];

pub struct Lexicon {
    pub words: Vec<String>,
    weights: WeightedIndex<f64>,
}

impl Lexicon {
    /// `size` content words with Zipf-like frequencies, plus function words.
    pub fn new(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = words.iter().cloned().collect();
        while words.len() < size + FUNCTION_WORDS.len() {
            let syllables = rng.gen_range(1..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
                w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
                w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let weights = WeightedIndex::new((0..words.len()).map(|r| 1.0 / (r as f64 + 2.0))).unwrap();
        Self { words, weights }
    }

    pub fn sentence(&self, rng: &mut ChaCha8Rng, min_words: usize, max_words: usize) -> String {
        let n = rng.gen_range(min_words..=max_words);
        let mut out: Vec<String> = (0..n).map(|_| self.words[self.weights.sample(rng)].clone()).collect();
        let mut first = out[0].chars();
        if let Some(c) = first.next() {
            out[0] = c.to_uppercase().collect::<String>() + first.as_str();
        }
        if n > 4 && rng.gen_bool(0.3) {
            let i = rng.gen_range(1..n - 1);
            out[i].push(',');
        }
        let end = [".", ".", ".", "?", "!"][rng.gen_range(0..5)];
        out.last_mut().unwrap().push_str(end);
        out.join(" ")
    }
}

pub fn sentences(count: usize, lexicon_size: usize, seed: u64) -> Vec<String> {
    let lex = Lexicon::new(lexicon_size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    (0..count).map(|_| lex.sentence(&mut rng, 6, 18)).collect()
}
