/// Checks that `heads` (entry `d - 1` is the head of word `d`, 0 is the
/// root) forms a tree with exactly one word attached to the root.
pub fn validate_tree(heads: &[usize]) -> Result<(), String> {
    let n = heads.len();
    let mut roots = 0;
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(format!("word {} has head {h} beyond {n} words", i + 1));
        }
        if h == i + 1 {
            return Err(format!("word {} is its own head", i + 1));
        }
        roots += (h == 0) as usize;
    }
    if roots != 1 {
        return Err(format!("{roots} words attach to the root, expected 1"));
    }
    // 0 unvisited, 1 on the current path, 2 reaches the root.
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = heads[v - 1];
        }
        if state[v] == 1 {
            return Err(format!("cycle through word {v}"));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// Sum of `scores[h][d-1]` over the arcs of `heads`.
pub fn tree_score(scores: &[Vec<f64>], heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(d, &h)| scores[h][d]).sum()
}

/// Maximum spanning arborescence (Chu-Liu/Edmonds) over nodes `0..=n`,
/// rooted at 0. `score[h][d]` is the weight of arc h -> d; entries for
/// `d == 0` and `h == d` are ignored. Ties prefer the smaller head.
fn chu_liu_edmonds(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let mut head = vec![0usize; n];
    for d in 1..n {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for (h, row) in score.iter().enumerate() {
            if h != d && (row[d] > best || arg == usize::MAX) {
                best = row[d];
                arg = h;
            }
        }
        head[d] = arg;
    }
    let Some(cycle) = find_cycle(&head) else {
        return head;
    };
    let in_cycle: Vec<bool> = (0..n).map(|v| cycle.contains(&v)).collect();
    // Contracted graph: the cycle becomes the last node.
    let outside: Vec<usize> = (0..n).filter(|&v| !in_cycle[v]).collect();
    let m = outside.len() + 1;
    let c = m - 1;
    let mut sub = vec![vec![f64::NEG_INFINITY; m]; m];
    let mut enter = vec![usize::MAX; m];
    let mut leave = vec![usize::MAX; m];
    for (i, &u) in outside.iter().enumerate() {
        for (j, &w) in outside.iter().enumerate() {
            sub[i][j] = score[u][w];
        }
        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            let gain = score[u][v] - score[head[v]][v];
            if enter[i] == usize::MAX || gain > best {
                best = gain;
                enter[i] = v;
            }
        }
        sub[i][c] = best;
    }
    for (j, &w) in outside.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            if leave[j] == usize::MAX || score[v][w] > best {
                best = score[v][w];
                leave[j] = v;
            }
        }
        sub[c][j] = best;
    }
    let sub_head = chu_liu_edmonds(&sub);
    let mut out = head.clone();
    for (j, &w) in outside.iter().enumerate().skip(1) {
        let h = sub_head[j];
        out[w] = if h == c { leave[j] } else { outside[h] };
    }
    let from = sub_head[c];
    out[enter[from]] = outside[from];
    out
}

fn find_cycle(head: &[usize]) -> Option<Vec<usize>> {
    let n = head.len();
    let mut state = vec![0u8; n];
    state[0] = 2;
    for start in 1..n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = head[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).unwrap();
            let mut cycle = path[pos..].to_vec();
            cycle.sort_unstable();
            return Some(cycle);
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Decodes a dependency tree from arc scores `[n + 1][n]` (row = head,
/// 0 = root; column = dependent word `d - 1`). With `single_root`, exactly
/// one word attaches to the root. Returns the head of each word.
pub fn decode_mst(arc_scores: &[Vec<f64>], single_root: bool) -> Vec<usize> {
    let n = arc_scores.first().map_or(0, |r| r.len());
    if n == 0 {
        return Vec::new();
    }
    // Square matrix over nodes 0..=n.
    let mut score = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    for (h, row) in arc_scores.iter().enumerate().take(n + 1) {
        for d in 1..=n {
            if h != d {
                score[h][d] = row[d - 1];
            }
        }
    }
    if single_root {
        // Every arborescence has at least one root arc; a penalty larger than
        // any achievable score gap per arc makes the optimum use exactly one.
        let finite = arc_scores.iter().flatten().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((0.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let penalty = (hi - lo + 1.0) * (n as f64 + 1.0);
        for d in 1..=n {
            score[0][d] -= penalty;
        }
    }
    chu_liu_edmonds(&score)[1..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(validate_tree(&[0]).is_ok());
        assert!(validate_tree(&[2, 0, 2]).is_ok());
        assert!(validate_tree(&[0, 0]).is_err());
        assert!(validate_tree(&[2, 1]).is_err());
        assert!(validate_tree(&[0, 3, 2]).is_err());
        assert!(validate_tree(&[1]).is_err());
        assert!(validate_tree(&[0, 5]).is_err());
    }

    #[test]
    fn one_word_attaches_to_root() {
        assert_eq!(decode_mst(&[vec![-3.0], vec![7.0]], true), vec![0]);
    }

    #[test]
    fn single_root_forces_attachment() {
        // Both words prefer the root; only one may take it.
        let s = vec![vec![10.0, 9.0], vec![0.0, 1.0], vec![2.0, 0.0]];
        assert_eq!(decode_mst(&s, false), vec![0, 0]);
        // Candidates: [0,1] = 10+1, [2,0] = 2+9.
        assert_eq!(decode_mst(&s, true), vec![0, 1]);
    }

    #[test]
    fn greedy_cycle_is_broken() {
        // Greedy heads: 1 <- 2 and 2 <- 1 form a cycle.
        let s = vec![
            vec![1.0, 0.0, 2.0],
            vec![0.0, 10.0, 0.0],
            vec![10.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        let heads = decode_mst(&s, true);
        validate_tree(&heads).unwrap();
        assert_eq!(heads, vec![3, 1, 0]);
        assert_eq!(tree_score(&s, &heads), 13.0);
    }
}
