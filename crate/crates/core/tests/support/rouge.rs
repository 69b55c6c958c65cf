//! Brute-force and independent reference ROUGE ingredients.

use std::collections::{BTreeMap, HashMap};

pub const ALPHABET: u32 = 5;
pub const MAX_TOTAL: usize = 8;

pub fn sequence(mut index: usize, len: usize) -> Vec<u32> {
    (0..len)
        .map(|_| {
            let d = (index % ALPHABET as usize) as u32;
            index /= ALPHABET as usize;
            d
        })
        .collect()
}

/// Maximum matching of equal symbols by exhaustive pairing.
pub fn brute_overlap(r: &[u32], h: &[u32]) -> usize {
    let mut used = vec![false; r.len()];
    let mut hits = 0;
    for x in h {
        if let Some(i) = (0..r.len()).find(|&i| !used[i] && r[i] == *x) {
            used[i] = true;
            hits += 1;
        }
    }
    hits
}

pub fn is_subsequence(needle: &[u32], hay: &[u32]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn brute_lcs(a: &[u32], b: &[u32]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let ones = mask.count_ones() as usize;
        if ones <= best {
            continue;
        }
        let sub: Vec<u32> = (0..a.len()).filter(|&i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = ones;
        }
    }
    best
}

/// Exact rationals for P, R and F1 (β = 1) under the empty-side convention.
pub fn expected(m: usize, r: usize, h: usize) -> (f64, f64, f64) {
    match (r, h) {
        (0, 0) => (1.0, 1.0, 1.0),
        (0, _) | (_, 0) => (0.0, 0.0, 0.0),
        _ => (m as f64 / h as f64, m as f64 / r as f64, (2 * m) as f64 / (r + h) as f64),
    }
}

/// Clipped counts through ordered maps.
pub fn reference_overlap(r: &[u32], h: &[u32]) -> usize {
    let count = |s: &[u32]| {
        let mut m = BTreeMap::new();
        for &x in s {
            *m.entry(x).or_insert(0usize) += 1;
        }
        m
    };
    let (cr, ch) = (count(r), count(h));
    ch.iter().map(|(k, &c)| c.min(*cr.get(k).unwrap_or(&0))).sum()
}

/// Top-down memoized LCS recursion.
pub fn reference_lcs(a: &[u32], b: &[u32]) -> usize {
    fn go(a: &[u32], b: &[u32], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

