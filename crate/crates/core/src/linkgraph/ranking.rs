use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cyclerank::CycleScoring;
use crate::error::{Error, Result};
use crate::meta::OutputMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMethod {
    #[serde(rename = "cyclerank")]
    CycleRank,
    #[serde(rename = "ppagerank")]
    PPageRank,
}

/// Parameters a ranking was computed with, plus what the run observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RankParams {
    CycleRank {
        max_length: usize,
        scoring: CycleScoring,
        /// Simple cycles found through the reference.
        cycles: u64,
    },
    PPageRank {
        damping: f64,
        tolerance: f64,
        max_iterations: usize,
        iterations: usize,
        /// L1 change after each iteration.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        residuals: Vec<f64>,
    },
}

/// Node scores relative to one or more reference pages. Only strictly
/// positive scores are stored; absent titles score 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub method: RankMethod,
    pub reference: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub params: RankParams,
}

impl RankingResult {
    pub fn score(&self, title: &str) -> f64 {
        self.scores.get(title).copied().unwrap_or(0.0)
    }

    /// All scored titles, highest first; ties in lexicographic title order.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.scores.iter().map(|(t, &s)| (t.as_str(), s)).collect();
        // BTreeMap iteration is already title-ordered, so a stable sort on
        // score alone keeps the title tie-break.
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }

    /// The `n` best non-zero titles that are not in `exclude`.
    pub fn top_n(&self, n: usize, exclude: &HashSet<String>) -> Vec<String> {
        self.ranked()
            .into_iter()
            .filter(|(t, s)| *s > 0.0 && !exclude.contains(*t))
            .take(n)
            .map(|(t, _)| t.to_string())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    method: RankMethod,
    reference: Vec<String>,
    params: RankParams,
}

const HEADER_TAG: &str = "# ranking ";

/// Write `rank,title,score` CSV with 12 significant digits. The method,
/// reference and parameters go into a `# ranking {json}` comment line.
pub fn write_ranking_csv(path: impl AsRef<Path>, r: &RankingResult, meta: Option<&OutputMeta>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut params = r.params.clone();
    if let RankParams::PPageRank { residuals, .. } = &mut params {
        residuals.clear();
    }
    let header = Header {
        method: r.method,
        reference: r.reference.clone(),
        params,
    };
    let io = |e| Error::io(path, e);
    if let Some(meta) = meta {
        writeln!(w, "{}", meta.comment()).map_err(io)?;
    }
    writeln!(w, "{HEADER_TAG}{}", serde_json::to_string(&header)?).map_err(io)?;
    writeln!(w, "rank,title,score").map_err(io)?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for (i, (title, score)) in r.ranked().into_iter().enumerate() {
        csv.write_record([(i + 1).to_string(), title.to_string(), format!("{score:.11e}")])?;
    }
    csv.flush().map_err(io)?;
    Ok(())
}

pub fn read_ranking_csv(path: impl AsRef<Path>) -> Result<RankingResult> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(json) = line.strip_prefix(HEADER_TAG) {
            header = Some(serde_json::from_str::<Header>(json)?);
        } else if !line.starts_with('#') {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "missing `# ranking` header line".into(),
    })?;
    let mut scores = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed = (rec.get(1), rec.get(2).and_then(|s| s.parse::<f64>().ok()));
        match parsed {
            (Some(t), Some(s)) if s.is_finite() && s >= 0.0 => {
                scores.insert(t.to_string(), s);
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: "expected rank,title,score with a non-negative score".into(),
                })
            }
        }
    }
    Ok(RankingResult {
        method: header.method,
        reference: header.reference,
        scores,
        params: header.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(scores: &[(&str, f64)]) -> RankingResult {
        RankingResult {
            method: RankMethod::CycleRank,
            reference: vec!["A".into()],
            scores: scores.iter().map(|(t, s)| (t.to_string(), *s)).collect(),
            params: RankParams::CycleRank {
                max_length: 3,
                scoring: CycleScoring::InverseLength,
                cycles: 2,
            },
        }
    }

    #[test]
    fn top_n_orders_and_breaks_ties_by_title() {
        let r = result(&[("C", 0.5), ("B", 0.5), ("A", 1.0)]);
        let exclude = HashSet::from(["A".to_string()]);
        assert_eq!(r.top_n(2, &exclude), vec!["B", "C"]);
        assert_eq!(r.top_n(10, &HashSet::new()), vec!["A", "B", "C"]);
    }

    #[test]
    fn top_n_drops_zero_scores_and_excluded() {
        let r = result(&[("A", 1.0), ("Z", 0.0)]);
        assert_eq!(r.top_n(5, &HashSet::new()), vec!["A"]);
        let all: HashSet<String> = ["A", "Z"].iter().map(|s| s.to_string()).collect();
        assert!(r.top_n(5, &all).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = result(&[("A", 1.0), ("B", 1.0 / 3.0)]);
        let meta = OutputMeta::new("abc");
        write_ranking_csv(&path, &r, Some(&meta)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("rank,title,score\n1,A,1.00000000000e0\n2,B,3.33333333333e-1\n"));
        let back = read_ranking_csv(&path).unwrap();
        assert_eq!(back.params, r.params);
        assert_eq!(back.score("A"), 1.0);
        assert!((back.score("B") - 1.0 / 3.0).abs() < 1e-12);
    }
}
