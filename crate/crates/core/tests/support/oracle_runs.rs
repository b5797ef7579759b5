#![allow(dead_code)]

use mlmkit::gluesio::DepSentence;
use mlmkit::heads::{best_span, decode_mst, select_span, tree_score, validate_tree, ChunkLogits, DependencyTree};
use mlmkit::metrics::{chunk_f1, extract_chunks, uas_las};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{brute_chunks, brute_mst, brute_span};

/// Random real score matrices with n = 1..=6 words, decoded in both root modes
/// and compared head for head with enumeration.
pub fn mst_real(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for i in 0..instances {
        let n = 1 + i % 6;
        let scores: Vec<Vec<f64>> = (0..=n)
            .map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        for single in [true, false] {
            if decode_mst(&scores, single) != brute_mst(&scores, single).0 {
                bad += 1;
            }
        }
    }
    bad
}

/// Integer scores produce ties, so only the tree score is compared.
pub fn mst_integer(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for i in 0..instances {
        let n = 1 + i % 6;
        let scores: Vec<Vec<f64>> = (0..=n)
            .map(|_| (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect())
            .collect();
        let got = decode_mst(&scores, true);
        if validate_tree(&got).is_err() || tree_score(&scores, &got) != brute_mst(&scores, true).1 {
            bad += 1;
        }
    }
    bad
}

/// One to three windows with integer logits and a random context range.
pub fn span(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let windows: Vec<_> = (0..rng.gen_range(1..4))
            .map(|_| {
                let len = rng.gen_range(1..12);
                let lo = rng.gen_range(0..len);
                let hi = rng.gen_range(lo..=len);
                let draw =
                    |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-4..=4) as f64).collect() };
                (draw(&mut rng), draw(&mut rng), lo..hi)
            })
            .collect();
        let max_len = rng.gen_range(1..8);
        let chunks: Vec<ChunkLogits> = windows
            .iter()
            .map(|(s, e, r)| ChunkLogits {
                start: s.clone(),
                end: e.clone(),
                context: r.clone(),
                offset: 100,
            })
            .collect();
        let got = select_span(&chunks, max_len).map(|c| {
            let r = &windows[c.chunk].2;
            (c.chunk, c.start - 100 + r.start, c.end - 100 + r.start, c.score)
        });
        let want = brute_span(&windows, max_len);
        if got != want {
            bad += 1;
        } else if windows.len() == 1 {
            let (s, e, r) = &windows[0];
            if best_span(s, e, r.clone(), max_len) != want.map(|b| (b.1, b.2, b.3)) {
                bad += 1;
            }
        }
    }
    bad
}

fn random_tags(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let pool = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "I-MISC"];
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].to_string()).collect()
}

/// Random gold tag sequences with 30% of tags perturbed for the prediction;
/// chunks and corpus-level counts and scores are compared with enumeration.
pub fn chunks(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let sents = rng.gen_range(1..4);
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
        let mut ok = true;
        for _ in 0..sents {
            let n = rng.gen_range(0..9);
            let g = random_tags(&mut rng, n);
            let p: Vec<String> = g
                .iter()
                .map(|t| {
                    if rng.gen_bool(0.3) {
                        random_tags(&mut rng, 1).remove(0)
                    } else {
                        t.clone()
                    }
                })
                .collect();
            let bp = brute_chunks(&p);
            let bg = brute_chunks(&g);
            tp += bp.iter().filter(|c| bg.contains(c)).count();
            np += bp.len();
            ng += bg.len();
            let mut lib: Vec<_> = extract_chunks(&p)
                .unwrap()
                .into_iter()
                .map(|c| (c.ty, c.start, c.end))
                .collect();
            lib.sort();
            ok &= lib == bp;
            pred.push(p);
            gold.push(g);
        }
        let s = chunk_f1(&pred, &gold).unwrap();
        let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
        let r = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ok &= (s.tp, s.fp, s.fn_) == (tp, np - tp, ng - tp);
        ok &= (s.precision, s.recall, s.f1) == (p, r, f);
        if !ok {
            bad += 1;
        }
    }
    bad
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    // Attach words in a random order to an already attached node.
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut heads = vec![0; n];
    for (k, &w) in order.iter().enumerate() {
        heads[w - 1] = if k == 0 { 0 } else { order[rng.gen_range(0..k)] };
    }
    heads
}

/// Random gold and predicted trees; counts pairs where LAS exceeds UAS or
/// UAS leaves [0, 1], with and without punctuation.
pub fn las_over_uas(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ["nsubj", "obj", "det", "root"];
    let mut bad = 0;
    for _ in 0..instances {
        let n = rng.gen_range(1..10);
        let gold = DepSentence {
            words: vec!["w".into(); n],
            heads: random_tree(&mut rng, n),
            labels: (0..n).map(|_| labels[rng.gen_range(0..4)].to_string()).collect(),
            is_punct: (0..n).map(|_| rng.gen_bool(0.2)).collect(),
        };
        let pred = DependencyTree {
            heads: random_tree(&mut rng, n),
            labels: (0..n).map(|_| labels[rng.gen_range(0..4)].to_string()).collect(),
        };
        if pred.validate().is_err() {
            bad += 1;
            continue;
        }
        for ex in [false, true] {
            if let Ok((u, l)) = uas_las(&pred, &gold, ex) {
                if l > u || !(0.0..=1.0).contains(&u) {
                    bad += 1;
                }
            }
        }
    }
    bad
}
