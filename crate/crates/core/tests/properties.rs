use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use proptest::prelude::*;

use wikiflu::evaluate::pearson;
use wikiflu::featureset::forward_fill;
use wikiflu::ingest::{aggregate_weekly, merge_datasets, DumpRecord, Provenance, SeriesSet, WeekPoint, WeeklySeries};
use wikiflu::linkgraph::{cyclerank, ppagerank, CycleRankConfig, LinkGraph, PageRankConfig, RankParams};
use wikiflu::regress::{fit_lasso, lambda_max, LassoConfig};
use wikiflu::IsoWeek;

fn edges_strategy(max_nodes: usize) -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0..max_nodes as u8, 0..max_nodes as u8), 1..40)
}

fn graph(edges: &[(u8, u8)]) -> LinkGraph {
    LinkGraph::from_edges(edges.iter().map(|(a, b)| (format!("v{a}"), format!("v{b}")))).0
}

fn series_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_is_symmetric((a, b) in series_pair()) {
        let ab = pearson(&a, &b).unwrap();
        let ba = pearson(&b, &a).unwrap();
        prop_assert!((ab.r - ba.r).abs() < 1e-12);
        prop_assert!(ab.r.abs() <= 1.0);
    }

    #[test]
    fn pearson_is_affine_invariant((a, b) in series_pair(), scale in 0.01..100.0f64, shift in -50.0..50.0f64, flip in any::<bool>()) {
        let s = if flip { -scale } else { scale };
        let moved: Vec<f64> = a.iter().map(|v| s * v + shift).collect();
        let r0 = pearson(&a, &b).unwrap();
        let r1 = pearson(&moved, &b).unwrap();
        prop_assume!(!r0.constant_input);
        prop_assert!((r1.r - s.signum() * r0.r).abs() < 1e-9);
    }

    #[test]
    fn weekly_aggregation_ignores_record_order(
        recs in prop::collection::vec((0u8..4, 0i64..2000, 0u64..1000), 1..200),
        seed in any::<u64>(),
    ) {
        let start = NaiveDate::from_ymd_opt(2015, 12, 20).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let records: Vec<_> = recs
            .iter()
            .map(|&(p, h, c)| {
                (start + Duration::hours(h), DumpRecord { project: "it".into(), title: format!("P{p}"), requests: c, bytes: 0 })
            })
            .collect();
        let a = aggregate_weekly(records.iter().map(|(t, r)| (*t, r)), Provenance::Pageviews);
        let mut shuffled: Vec<usize> = (0..records.len()).collect();
        let mut x = seed;
        for i in (1..shuffled.len()).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (x >> 33) as usize % (i + 1));
        }
        let b = aggregate_weekly(shuffled.iter().map(|&i| (records[i].0, &records[i].1)), Provenance::Pageviews);
        prop_assert_eq!(&a, &b);
        let total: u64 = recs.iter().map(|r| r.2).sum();
        prop_assert_eq!(a.values().map(|s| s.total()).sum::<f64>(), total as f64);
    }

    #[test]
    fn bfs_distances_obey_triangle_inequality(edges in edges_strategy(8)) {
        let g = graph(&edges);
        let n = g.node_count() as u32;
        let d: Vec<Vec<Option<u32>>> = (0..n).map(|v| g.bfs_distances(v, false, None)).collect();
        for a in 0..n as usize {
            prop_assert_eq!(d[a][a], Some(0));
            for b in 0..n as usize {
                for c in 0..n as usize {
                    if let (Some(ab), Some(bc)) = (d[a][b], d[b][c]) {
                        prop_assert!(d[a][c].is_some_and(|ac| ac <= ab + bc));
                    }
                }
            }
        }
    }

    #[test]
    fn cyclerank_mass_counts_cycles(edges in edges_strategy(7), k in 2usize..6) {
        let g = graph(&edges);
        let reference = g.title(0).to_string();
        let r = cyclerank(&g, &reference, &CycleRankConfig { max_length: k, ..Default::default() }).unwrap();
        let RankParams::CycleRank { cycles, .. } = r.params else { unreachable!() };
        let mass: f64 = r.scores.values().sum();
        prop_assert!((mass - cycles as f64).abs() < 1e-9);
        let top = r.scores.values().cloned().fold(0.0, f64::max);
        prop_assert_eq!(r.score(&reference), top);
        let again = cyclerank(&g, &reference, &CycleRankConfig { max_length: k, ..Default::default() }).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn ppagerank_is_a_distribution(edges in edges_strategy(9), damping in 0.1..0.9f64) {
        let g = graph(&edges);
        let reference = g.title(0).to_string();
        let r = ppagerank(&g, &[reference], &PageRankConfig { damping, max_iterations: 5000, ..Default::default() }).unwrap();
        prop_assert!(r.scores.values().all(|&s| s >= 0.0));
        prop_assert!((r.scores.values().sum::<f64>() - 1.0).abs() < 1e-9);
        let RankParams::PPageRank { residuals, .. } = r.params else { unreachable!() };
        for w in residuals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn lasso_l1_norm_shrinks_with_lambda(
        data in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 5), 12..30),
        noise in prop::collection::vec(-1.0..1.0f64, 30),
    ) {
        let n = data.len();
        let x = Array2::from_shape_fn((n, 5), |(i, j)| data[i][j]);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * data[i][0] - data[i][2] + noise[i]).collect();
        let top = lambda_max(x.view(), &y);
        prop_assume!(top > 1e-6);
        let cfg = LassoConfig { tolerance: 1e-12, max_epochs: 200_000, ..LassoConfig::default() };
        let mut prev = 0.0;
        for frac in [1.0, 0.5, 0.2, 0.05, 0.01] {
            let fit = fit_lasso(x.view(), &y, top * frac, &cfg).unwrap();
            let l1: f64 = fit.weights.iter().map(|w| w.abs()).sum();
            prop_assert!(l1 >= prev - 1e-7, "l1 {} after {}", l1, prev);
            prev = l1;
        }
    }

    #[test]
    fn forward_fill_takes_latest_observation(obs in prop::collection::btree_map(1u32..=52, 0.0..100.0f64, 0..20)) {
        let mut s = WeeklySeries::new("P");
        for (&w, &v) in &obs {
            s.points.insert(IsoWeek { year: 2017, week: w }, WeekPoint { count: v, provenance: Provenance::Pageviews });
        }
        let axis: Vec<IsoWeek> = (1..=52).map(|w| IsoWeek { year: 2017, week: w }).collect();
        let filled = forward_fill(&s, &axis);
        for (i, w) in (1..=52u32).enumerate() {
            let want = obs.range(..=w).next_back().map(|(_, v)| *v).unwrap_or(0.0);
            prop_assert_eq!(filled[i], want);
        }
    }

    #[test]
    fn merged_provenance_follows_cutover(cut in 1u32..=52) {
        let cutover = IsoWeek { year: 2016, week: cut };
        let weeks: Vec<IsoWeek> = (1..=52).map(|w| IsoWeek { year: 2016, week: w }).collect();
        let mk = |p: Provenance| -> SeriesSet {
            let mut s = WeeklySeries::new("P");
            for w in &weeks {
                s.points.insert(*w, WeekPoint { count: 1.0, provenance: p });
            }
            [("P".to_string(), s)].into_iter().collect()
        };
        let merged = merge_datasets(&mk(Provenance::Pagecounts), &mk(Provenance::Pageviews), cutover);
        for (w, p) in &merged["P"].points {
            let want = if *w < cutover { Provenance::Pagecounts } else { Provenance::Pageviews };
            prop_assert_eq!(p.provenance, want);
        }
        prop_assert_eq!(merged["P"].points.len(), 52);
    }
}
