//! CycleRank: score pages by how often they sit on short simple cycles
//! through a reference page.
//!
//! Every simple cycle of length `l <= K` through the reference contributes
//! `sigma(l)` to each of its `l` nodes. With the default `sigma(l) = 1/l`
//! each cycle hands out one unit of score, split evenly across its nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ranking::{RankMethod, RankParams, RankingResult};
use super::{LinkGraph, NodeId};
use crate::error::{Error, Result};

/// Per-node contribution of a cycle as a function of its length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleScoring {
    /// `1 / l`
    #[default]
    InverseLength,
    /// `exp(-l)`
    ExpDecay,
}

impl CycleScoring {
    pub fn weight(self, length: usize) -> f64 {
        match self {
            CycleScoring::InverseLength => 1.0 / length as f64,
            CycleScoring::ExpDecay => (-(length as f64)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRankConfig {
    /// Longest cycle counted, in edges (= nodes).
    pub max_length: usize,
    pub scoring: CycleScoring,
    /// Upper bound accepted for `max_length`; enumeration is exponential in it.
    pub max_length_cap: usize,
}

impl Default for CycleRankConfig {
    fn default() -> Self {
        Self {
            max_length: 4,
            scoring: CycleScoring::InverseLength,
            max_length_cap: 8,
        }
    }
}

/// Subgraph of nodes that can lie on a cycle of length `<= k` through the
/// root, relabelled densely with the root at index 0.
struct Pruned {
    nodes: Vec<NodeId>,
    succ: Vec<Vec<usize>>,
    back: Vec<usize>,
}

fn prune(g: &LinkGraph, root: NodeId, k: usize) -> Pruned {
    let depth = (k - 1) as u32;
    let fwd = g.bfs_distances(root, false, Some(depth));
    let bwd = g.bfs_distances(root, true, Some(depth));
    let mut local = vec![usize::MAX; g.node_count()];
    let mut nodes = vec![root];
    local[root as usize] = 0;
    // Node ids are visited in ascending order so the relabelling, and with it
    // the enumeration order, is deterministic.
    for v in 0..g.node_count() {
        if v == root as usize {
            continue;
        }
        if let (Some(f), Some(b)) = (fwd[v], bwd[v]) {
            if (f + b) as usize <= k {
                local[v] = nodes.len();
                nodes.push(v as NodeId);
            }
        }
    }
    let succ = nodes
        .iter()
        .map(|&v| {
            g.successors(v)
                .iter()
                .filter_map(|&w| (local[w as usize] != usize::MAX).then_some(local[w as usize]))
                .collect()
        })
        .collect();
    let back = nodes.iter().map(|&v| bwd[v as usize].unwrap() as usize).collect();
    Pruned { nodes, succ, back }
}

struct Search<'a> {
    graph: &'a Pruned,
    k: usize,
    path: Vec<usize>,
    on_path: Vec<bool>,
    /// `counts[v * (k + 1) + l]` = number of cycles of length `l` through `v`.
    counts: Vec<u64>,
}

impl Search<'_> {
    fn extend(&mut self, u: usize) {
        for i in 0..self.graph.succ[u].len() {
            let w = self.graph.succ[u][i];
            let len = self.path.len();
            if w == 0 {
                for &v in &self.path {
                    self.counts[v * (self.k + 1) + len] += 1;
                }
            } else if !self.on_path[w] && len + self.graph.back[w] <= self.k {
                self.on_path[w] = true;
                self.path.push(w);
                self.extend(w);
                self.path.pop();
                self.on_path[w] = false;
            }
        }
    }
}

/// Rank every node of `g` by its participation in simple cycles through
/// `reference` of length at most `cfg.max_length`.
pub fn cyclerank(g: &LinkGraph, reference: &str, cfg: &CycleRankConfig) -> Result<RankingResult> {
    let k = cfg.max_length;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("cycle length bound must be >= 2, got {k}")));
    }
    if k > cfg.max_length_cap {
        return Err(Error::InvalidArgument(format!(
            "cycle length bound {k} exceeds the configured cap {}",
            cfg.max_length_cap
        )));
    }
    let root = g.require(reference)?;
    let pruned = prune(g, root, k);
    let m = pruned.nodes.len();
    let mut search = Search {
        graph: &pruned,
        k,
        path: vec![0],
        on_path: vec![false; m],
        counts: vec![0; m * (k + 1)],
    };
    search.on_path[0] = true;
    search.extend(0);

    let counts = search.counts;
    let cycles: u64 = counts[..=k].iter().sum();
    let mut scores = BTreeMap::new();
    for (local, &node) in pruned.nodes.iter().enumerate() {
        let row = &counts[local * (k + 1)..(local + 1) * (k + 1)];
        let score: f64 = row
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(len, &c)| c as f64 * cfg.scoring.weight(len))
            .sum();
        if score > 0.0 {
            scores.insert(g.title(node).to_string(), score);
        }
    }
    Ok(RankingResult {
        method: RankMethod::CycleRank,
        reference: vec![g.title(root).to_string()],
        scores,
        params: RankParams::CycleRank {
            max_length: k,
            scoring: cfg.scoring,
            cycles,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> CycleRankConfig {
        CycleRankConfig {
            max_length: k,
            ..Default::default()
        }
    }

    #[test]
    fn two_two_cycles() {
        let (g, _) = LinkGraph::from_edges([("A", "B"), ("B", "A"), ("A", "C"), ("C", "A")]);
        let r = cyclerank(&g, "A", &cfg(3)).unwrap();
        assert_eq!(r.score("A"), 1.0);
        assert_eq!(r.score("B"), 0.5);
        assert_eq!(r.score("C"), 0.5);
        assert_eq!(r.params, RankParams::CycleRank { max_length: 3, scoring: CycleScoring::InverseLength, cycles: 2 });
    }

    #[test]
    fn acyclic_graph_scores_zero() {
        let (g, _) = LinkGraph::from_edges([("A", "B")]);
        let r = cyclerank(&g, "A", &cfg(4)).unwrap();
        assert_eq!(r.score("A"), 0.0);
        assert_eq!(r.score("B"), 0.0);
        assert!(r.scores.is_empty());
    }

    #[test]
    fn length_bound_excludes_long_cycles() {
        // A->B->C->A is a 3-cycle; A<->D a 2-cycle.
        let (g, _) = LinkGraph::from_edges([("A", "B"), ("B", "C"), ("C", "A"), ("A", "D"), ("D", "A")]);
        let r2 = cyclerank(&g, "A", &cfg(2)).unwrap();
        assert_eq!(r2.score("B"), 0.0);
        assert_eq!(r2.score("D"), 0.5);
        let r3 = cyclerank(&g, "A", &cfg(3)).unwrap();
        assert!((r3.score("B") - 1.0 / 3.0).abs() < 1e-15);
        assert!((r3.score("A") - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn exponential_scoring() {
        let (g, _) = LinkGraph::from_edges([("A", "B"), ("B", "A")]);
        let r = cyclerank(
            &g,
            "A",
            &CycleRankConfig { scoring: CycleScoring::ExpDecay, ..cfg(3) },
        )
        .unwrap();
        assert_eq!(r.score("B"), (-2.0f64).exp());
    }

    #[test]
    fn rejects_bad_arguments() {
        let (g, _) = LinkGraph::from_edges([("A", "B")]);
        assert!(matches!(cyclerank(&g, "A", &cfg(1)), Err(Error::InvalidArgument(_))));
        assert!(matches!(cyclerank(&g, "A", &cfg(9)), Err(Error::InvalidArgument(_))));
        assert!(matches!(cyclerank(&g, "Q", &cfg(3)), Err(Error::UnknownTitle(_))));
    }
}
