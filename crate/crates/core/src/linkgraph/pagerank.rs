//! Personalized PageRank by exact power iteration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ranking::{RankMethod, RankParams, RankingResult};
use super::LinkGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    /// Probability of following a link rather than teleporting.
    pub damping: f64,
    /// Convergence threshold on the L1 change between iterates.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Stationary distribution of a random walk that follows out-links with
/// probability `damping` and otherwise restarts uniformly at one of
/// `sources`. Mass on dangling nodes restarts the same way.
pub fn ppagerank<S: AsRef<str>>(g: &LinkGraph, sources: &[S], cfg: &PageRankConfig) -> Result<RankingResult> {
    if !(cfg.damping > 0.0 && cfg.damping < 1.0) {
        return Err(Error::InvalidArgument(format!("damping must lie in (0, 1), got {}", cfg.damping)));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {}", cfg.tolerance)));
    }
    let mut ids = sources
        .iter()
        .map(|s| g.require(s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::InvalidArgument("personalized pagerank needs at least one source".into()));
    }

    let n = g.node_count();
    let d = cfg.damping;
    let mut teleport = vec![0.0; n];
    for &s in &ids {
        teleport[s as usize] = 1.0 / ids.len() as f64;
    }

    let mut x = teleport.clone();
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    loop {
        let mut dangling = 0.0;
        next.iter_mut().for_each(|v| *v = 0.0);
        for u in 0..n {
            let out = g.successors(u as u32);
            if out.is_empty() {
                dangling += x[u];
            } else {
                let share = d * x[u] / out.len() as f64;
                for &w in out {
                    next[w as usize] += share;
                }
            }
        }
        let restart = 1.0 - d + d * dangling;
        for &s in &ids {
            next[s as usize] += restart * teleport[s as usize];
        }
        let residual: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        residuals.push(residual);
        if residual < cfg.tolerance {
            break;
        }
        if residuals.len() >= cfg.max_iterations {
            return Err(Error::NonConvergence {
                iterations: residuals.len(),
                residual,
            });
        }
    }

    let scores: BTreeMap<String, f64> = x
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(v, &s)| (g.title(v as u32).to_string(), s))
        .collect();
    Ok(RankingResult {
        method: RankMethod::PPageRank,
        reference: ids.iter().map(|&s| g.title(s).to_string()).collect(),
        scores,
        params: RankParams::PPageRank {
            damping: d,
            tolerance: cfg.tolerance,
            max_iterations: cfg.max_iterations,
            iterations: residuals.len(),
            residuals,
        },
    })
}
