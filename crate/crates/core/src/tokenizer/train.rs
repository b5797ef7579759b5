use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use super::normalize::{normalize, NormalizationConfig};
use super::vocab::{Merge, Token, TokenKind, VocabMeta, Vocabulary, SPECIAL_TOKENS};
use super::TokenizerError;

struct Word {
    symbols: Vec<u32>,
    count: i64,
}

/// Working token table; ids here are offset by the special tokens so they
/// coincide with final vocabulary ids.
struct Table {
    tokens: Vec<Token>,
    marked: Vec<String>,
    lookup: HashMap<(TokenKind, String), u32>,
}

impl Table {
    fn new() -> Self {
        let mut t = Table {
            tokens: Vec::new(),
            marked: Vec::new(),
            lookup: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            t.insert(Token {
                surface: s.to_string(),
                kind: TokenKind::Special,
            });
        }
        t
    }

    fn insert(&mut self, token: Token) -> u32 {
        if let Some(&id) = self.lookup.get(&(token.kind, token.surface.clone())) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.lookup.insert((token.kind, token.surface.clone()), id);
        self.marked.push(token.marked());
        self.tokens.push(token);
        id
    }
}

type HeapEntry = (i64, Reverse<(String, String)>, u32, u32);

fn pairs(symbols: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    symbols.windows(2).map(|w| (w[0], w[1]))
}

/// Trains a BPE vocabulary.
///
/// Lines are normalized and split on whitespace. The base alphabet holds
/// every corpus character in both word-initial and continuation form; the
/// most frequent adjacent pair is then merged repeatedly (ties go to the
/// lexicographically smaller pair of marked strings) until `subword_count`
/// ids, specials included, exist or no pair remains. `placeholder_count`
/// reserved ids follow. Training is fully deterministic; `seed` is recorded
/// in the vocabulary header only.
pub fn train_vocabulary<I, S>(
    corpus: I,
    cfg: &NormalizationConfig,
    subword_count: usize,
    placeholder_count: usize,
    seed: u64,
) -> Result<Vocabulary, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<String, i64> = BTreeMap::new();
    for line in corpus {
        let normalized = normalize(line.as_ref(), cfg);
        for w in normalized.split_whitespace() {
            *word_counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut alphabet: Vec<char> = word_counts
        .keys()
        .flat_map(|w| w.chars())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    alphabet.sort_unstable();
    let required = SPECIAL_TOKENS.len() + 2 * alphabet.len();
    if subword_count < required {
        return Err(TokenizerError::SubwordBudget {
            requested: subword_count,
            required,
        });
    }

    let mut table = Table::new();
    for &c in &alphabet {
        for kind in [TokenKind::Initial, TokenKind::Continuation] {
            table.insert(Token {
                surface: c.to_string(),
                kind,
            });
        }
    }
    let char_id = |table: &Table, c: char, initial: bool| {
        let kind = if initial {
            TokenKind::Initial
        } else {
            TokenKind::Continuation
        };
        table.lookup[&(kind, c.to_string())]
    };

    let mut words: Vec<Word> = word_counts
        .into_iter()
        .map(|(w, count)| Word {
            symbols: w.chars().enumerate().map(|(i, c)| char_id(&table, c, i == 0)).collect(),
            count,
        })
        .collect();

    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in pairs(&w.symbols) {
            *counts.entry(p).or_insert(0) += w.count;
            where_.entry(p).or_default().insert(wi);
        }
    }
    let entry = |table: &Table, p: (u32, u32), c: i64| -> HeapEntry {
        (
            c,
            Reverse((table.marked[p.0 as usize].clone(), table.marked[p.1 as usize].clone())),
            p.0,
            p.1,
        )
    };
    let mut heap: BinaryHeap<HeapEntry> = counts.iter().map(|(&p, &c)| entry(&table, p, c)).collect();

    let mut merges = Vec::new();
    while table.tokens.len() < subword_count {
        let Some((c, _, l, r)) = heap.pop() else { break };
        let pair = (l, r);
        if c <= 0 || counts.get(&pair).copied() != Some(c) {
            continue;
        }
        let (lt, rt) = (&table.tokens[l as usize], &table.tokens[r as usize]);
        let merged_token = Token {
            surface: format!("{}{}", lt.surface, rt.surface),
            kind: lt.kind,
        };
        let merged = table.insert(merged_token);
        merges.push(Merge {
            left: l,
            right: r,
            merged,
        });

        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let word = &mut words[wi];
            for p in pairs(&word.symbols) {
                *counts.get_mut(&p).expect("pair counted") -= word.count;
                touched.insert(p);
                if p != pair {
                    if let Some(set) = where_.get_mut(&p) {
                        set.remove(&wi);
                    }
                }
            }
            let mut out = Vec::with_capacity(word.symbols.len());
            let mut i = 0;
            while i < word.symbols.len() {
                if i + 1 < word.symbols.len() && word.symbols[i] == l && word.symbols[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(word.symbols[i]);
                    i += 1;
                }
            }
            word.symbols = out;
            for p in pairs(&word.symbols) {
                *counts.entry(p).or_insert(0) += word.count;
                where_.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
        }
        counts.remove(&pair);
        let mut touched: Vec<_> = touched.into_iter().filter(|p| *p != pair).collect();
        touched.sort_unstable();
        for p in touched {
            match counts.get(&p).copied() {
                Some(c) if c > 0 => heap.push(entry(&table, p, c)),
                _ => {
                    counts.remove(&p);
                    where_.remove(&p);
                }
            }
        }
    }

    let subwords = table.tokens.split_off(SPECIAL_TOKENS.len());
    Vocabulary::assemble(
        VocabMeta {
            normalization: *cfg,
            subword_count,
            placeholder_count,
            seed,
        },
        subwords,
        merges,
    )
}
