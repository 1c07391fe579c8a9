//! Directed Wikipedia link graph and the node rankings computed on it.
//!
//! Pages are nodes, wiki links are directed edges. Titles are matched
//! exactly (case-sensitive) after spaces are replaced by underscores, the
//! convention used by the Wikimedia dumps.

mod cyclerank;
mod pagerank;
mod ranking;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cyclerank::{cyclerank, CycleRankConfig, CycleScoring};
pub use pagerank::{ppagerank, PageRankConfig};
pub use ranking::{read_ranking_csv, write_ranking_csv, RankMethod, RankParams, RankingResult};

/// Dense node identifier, assigned in order of first appearance.
pub type NodeId = u32;

/// How malformed edge-list lines are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadMode {
    /// Abort on the first malformed line.
    #[default]
    Strict,
    /// Skip and count malformed lines.
    Lenient,
}

/// Bookkeeping from building a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub self_loops: u64,
    pub duplicates: u64,
    pub malformed: u64,
    /// Line numbers (1-based) of the first malformed lines, capped at 100.
    pub malformed_lines: Vec<u64>,
}

/// Replace spaces by underscores, the canonical form used in dumps.
pub fn normalize_title(title: &str) -> String {
    title.replace(' ', "_")
}

/// Immutable directed graph with both forward and reverse adjacency.
#[derive(Debug, Clone, Default)]
pub struct LinkGraph {
    titles: Vec<String>,
    index: HashMap<String, NodeId>,
    succ: Vec<Vec<NodeId>>,
    pred: Vec<Vec<NodeId>>,
    edges: usize,
}

#[derive(Default)]
struct GraphBuilder {
    titles: Vec<String>,
    index: HashMap<String, NodeId>,
    seen: HashSet<(NodeId, NodeId)>,
    edges: Vec<(NodeId, NodeId)>,
    stats: LoadStats,
}

impl GraphBuilder {
    fn node(&mut self, title: &str) -> NodeId {
        let title = normalize_title(title);
        if let Some(&id) = self.index.get(&title) {
            return id;
        }
        let id = self.titles.len() as NodeId;
        self.titles.push(title.clone());
        self.index.insert(title, id);
        id
    }

    fn edge(&mut self, source: &str, target: &str) {
        let s = self.node(source);
        let t = self.node(target);
        if s == t {
            self.stats.self_loops += 1;
        } else if !self.seen.insert((s, t)) {
            self.stats.duplicates += 1;
        } else {
            self.edges.push((s, t));
        }
    }

    fn finish(self) -> (LinkGraph, LoadStats) {
        let n = self.titles.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            succ[s as usize].push(t);
            pred[t as usize].push(s);
        }
        for list in succ.iter_mut().chain(pred.iter_mut()) {
            list.sort_unstable();
        }
        let graph = LinkGraph {
            titles: self.titles,
            index: self.index,
            succ,
            pred,
            edges: self.edges.len(),
        };
        (graph, self.stats)
    }
}

impl LinkGraph {
    /// Build from `(source, target)` title pairs, dropping self-loops and
    /// duplicates. Endpoints of dropped self-loops still become nodes.
    pub fn from_edges<I, S, T>(edges: I) -> (Self, LoadStats)
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut b = GraphBuilder::default();
        for (s, t) in edges {
            b.edge(s.as_ref(), t.as_ref());
        }
        b.finish()
    }

    /// Load a `source<TAB>target` edge list. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn load_edge_list(path: impl AsRef<Path>, mode: LoadMode) -> Result<(Self, LoadStats)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_edge_list(BufReader::new(file), path, mode)
    }

    pub fn read_edge_list<R: BufRead>(
        reader: R,
        source_name: impl AsRef<Path>,
        mode: LoadMode,
    ) -> Result<(Self, LoadStats)> {
        let source_name = source_name.as_ref();
        let mut b = GraphBuilder::default();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx as u64 + 1;
            let line = line.map_err(|e| Error::io(source_name, e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(t), None) if !s.is_empty() && !t.is_empty() => b.edge(s, t),
                _ => {
                    if mode == LoadMode::Strict {
                        return Err(Error::Parse {
                            path: source_name.to_path_buf(),
                            line: lineno,
                            message: "expected `source<TAB>target`".into(),
                        });
                    }
                    b.stats.malformed += 1;
                    if b.stats.malformed_lines.len() < 100 {
                        b.stats.malformed_lines.push(lineno);
                    }
                }
            }
        }
        Ok(b.finish())
    }

    pub fn node_count(&self) -> usize {
        self.titles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    /// Node id of a title (normalized before lookup).
    pub fn id(&self, title: &str) -> Option<NodeId> {
        self.index.get(normalize_title(title).as_str()).copied()
    }

    pub(crate) fn require(&self, title: &str) -> Result<NodeId> {
        self.id(title).ok_or_else(|| Error::UnknownTitle(title.to_string()))
    }

    pub fn title(&self, id: NodeId) -> &str {
        &self.titles[id as usize]
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.titles.iter().map(String::as_str)
    }

    /// Sorted out-neighbours.
    pub fn successors(&self, id: NodeId) -> &[NodeId] {
        &self.succ[id as usize]
    }

    /// Sorted in-neighbours.
    pub fn predecessors(&self, id: NodeId) -> &[NodeId] {
        &self.pred[id as usize]
    }

    pub fn has_edge(&self, source: NodeId, target: NodeId) -> bool {
        self.succ[source as usize].binary_search(&target).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(s, ts)| ts.iter().map(move |&t| (s as NodeId, t)))
    }

    /// Hop distances from `from` following edges forward (or backward when
    /// `reverse` is set), optionally stopping at `max_depth`.
    pub fn bfs_distances(&self, from: NodeId, reverse: bool, max_depth: Option<u32>) -> Vec<Option<u32>> {
        let adj = if reverse { &self.pred } else { &self.succ };
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::new();
        dist[from as usize] = Some(0);
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize].unwrap();
            if max_depth.is_some_and(|m| du >= m) {
                continue;
            }
            for &v in &adj[u as usize] {
                if dist[v as usize].is_none() {
                    dist[v as usize] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Directed hop count from `from` to `to`; `None` when unreachable.
    pub fn shortest_path_distance(&self, from: &str, to: &str) -> Result<Option<u32>> {
        let s = self.require(from)?;
        let t = self.require(to)?;
        if s == t {
            return Ok(Some(0));
        }
        Ok(self.bfs_distances(s, false, None)[t as usize])
    }
}

/// Shortest-path distance bucketed the way predictor tables report it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "class", content = "hops")]
pub enum DistanceClass {
    /// 0 to 3 hops.
    Hops(u32),
    /// Reachable in more than three hops.
    Beyond(u32),
    Unreachable,
}

impl DistanceClass {
    pub fn from_distance(d: Option<u32>) -> Self {
        match d {
            Some(h) if h <= 3 => DistanceClass::Hops(h),
            Some(h) => DistanceClass::Beyond(h),
            None => DistanceClass::Unreachable,
        }
    }

    /// Table label: `0`..`3`, otherwise `> 3` (unreachable included).
    pub fn table_label(&self) -> String {
        match self {
            DistanceClass::Hops(h) => h.to_string(),
            DistanceClass::Beyond(_) | DistanceClass::Unreachable => "> 3".to_string(),
        }
    }

    pub fn hops(&self) -> Option<u32> {
        match *self {
            DistanceClass::Hops(h) | DistanceClass::Beyond(h) => Some(h),
            DistanceClass::Unreachable => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, mode: LoadMode) -> Result<(LinkGraph, LoadStats)> {
        LinkGraph::read_edge_list(text.as_bytes(), "mem", mode)
    }

    #[test]
    fn three_lines_three_edges() {
        let (g, stats) = parse("A\tB\nB\tA\nA\tC\n", LoadMode::Strict).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(stats, LoadStats::default());
    }

    #[test]
    fn self_loop_dropped_and_counted() {
        let (g, stats) = parse("A\tA\n", LoadMode::Strict).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 1);
        assert_eq!(stats.self_loops, 1);
    }

    #[test]
    fn duplicate_deduplicated() {
        let (g, stats) = parse("A\tB\nA\tB\n", LoadMode::Strict).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(stats.duplicates, 1);
    }

    #[test]
    fn comments_and_blank_lines() {
        let (g, _) = parse("# header\n\nA\tB\r\n", LoadMode::Strict).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.title(g.id("B").unwrap()), "B");
    }

    #[test]
    fn malformed_strict_reports_line() {
        let err = parse("A\tB\nonly-one-field\n", LoadMode::Strict).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lenient_counts() {
        let (g, stats) = parse("A\tB\nbad\nx\ty\tz\n\tB\n", LoadMode::Lenient).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(stats.malformed, 3);
        assert_eq!(stats.malformed_lines, vec![2, 3, 4]);
    }

    #[test]
    fn spaces_normalized_to_underscores() {
        let (g, stats) = LinkGraph::from_edges([("Swine flu", "Swine_flu"), ("Swine_flu", "Fever")]);
        assert_eq!(stats.self_loops, 1);
        assert_eq!(g.node_count(), 2);
        assert!(g.id("Swine flu").is_some());
        assert!(g.id("swine_flu").is_none());
    }

    #[test]
    fn shortest_paths() {
        let (g, _) = LinkGraph::from_edges([("A", "B"), ("B", "C")]);
        assert_eq!(g.shortest_path_distance("A", "A").unwrap(), Some(0));
        assert_eq!(g.shortest_path_distance("A", "C").unwrap(), Some(2));
        assert_eq!(g.shortest_path_distance("C", "A").unwrap(), None);
        assert!(matches!(
            g.shortest_path_distance("A", "Z"),
            Err(Error::UnknownTitle(_))
        ));
    }

    #[test]
    fn unreachable_reports_as_beyond_three_in_tables() {
        let (g, _) = LinkGraph::from_edges([("A", "B")]);
        let d = g.shortest_path_distance("B", "A").unwrap();
        let class = DistanceClass::from_distance(d);
        assert_eq!(class, DistanceClass::Unreachable);
        assert_eq!(class.table_label(), "> 3");
        assert_eq!(DistanceClass::from_distance(Some(5)).table_label(), "> 3");
        assert_eq!(DistanceClass::from_distance(Some(3)).table_label(), "3");
    }
}
