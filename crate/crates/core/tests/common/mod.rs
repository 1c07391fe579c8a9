//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random directed graph on `n` nodes named `n0..`, without self-loops.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, density: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    edges
}

pub fn name(i: usize) -> String {
    format!("n{i}")
}

pub fn named(edges: &[(usize, usize)]) -> Vec<(String, String)> {
    edges.iter().map(|&(a, b)| (name(a), name(b))).collect()
}

/// Per-node counts of simple cycles through `r`, indexed `[node][length]`,
/// found by unpruned depth-first enumeration of every simple path from `r`.
pub fn cycle_counts(n: usize, edges: &[(usize, usize)], r: usize, k: usize) -> Vec<Vec<u64>> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
    }
    let mut counts = vec![vec![0u64; k + 1]; n];
    let mut path = vec![r];
    fn walk(adj: &[Vec<bool>], r: usize, k: usize, path: &mut Vec<usize>, counts: &mut [Vec<u64>]) {
        let last = *path.last().unwrap();
        if path.len() >= 2 && adj[last][r] {
            for &v in path.iter() {
                counts[v][path.len()] += 1;
            }
        }
        if path.len() == k {
            return;
        }
        for next in 0..adj.len() {
            if adj[last][next] && !path.contains(&next) {
                path.push(next);
                walk(adj, r, k, path, counts);
                path.pop();
            }
        }
    }
    walk(&adj, r, k, &mut path, &mut counts);
    counts
}

pub fn cycle_scores(counts: &[Vec<u64>], weight: impl Fn(usize) -> f64) -> Vec<f64> {
    counts
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(l, &c)| c as f64 * weight(l))
                .sum()
        })
        .collect()
}

/// Personalized PageRank as the solution of `(I - d M) x = (1 - d) v`,
/// where column `u` of `M` spreads `u`'s mass over its out-links, or over
/// the sources when `u` has none.
pub fn ppr_dense(n: usize, edges: &[(usize, usize)], sources: &[usize], d: f64) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &s in sources {
        v[s] = 1.0 / sources.len() as f64;
    }
    let mut out = vec![Vec::new(); n];
    for &(a, b) in edges {
        if !out[a].contains(&b) {
            out[a].push(b);
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for u in 0..n {
        if out[u].is_empty() {
            for t in 0..n {
                m[(t, u)] = v[t];
            }
        } else {
            for &t in &out[u] {
                m[(t, u)] += 1.0 / out[u].len() as f64;
            }
        }
    }
    let a = DMatrix::identity(n, n) - m * d;
    a.lu().solve(&(v * (1.0 - d))).expect("nonsingular")
}

/// Ordinary least squares with intercept via the normal equations.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len();
    let p = x[0].len();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[i][j] } else { 1.0 });
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * yv;
    let beta = xtx.cholesky().expect("full rank").solve(&xty);
    (beta.iter().take(p).copied().collect(), beta[p])
}

/// Textbook single-pass Pearson formula.
pub fn pearson_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}
