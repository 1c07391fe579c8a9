use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::lasso::{fit_lasso_from, LassoFit};
use super::{LambdaGrid, LassoConfig};
use crate::error::{Error, Result};

/// Smallest lambda at which every weight is zero:
/// `max_j |X_j . (y - mean(y))| / n`.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    x.columns()
        .into_iter()
        .map(|c| c.iter().zip(y).map(|(a, b)| a * (b - ybar)).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Candidate lambdas, largest first.
pub fn lambda_grid(x: ArrayView2<'_, f64>, y: &[f64], grid: &LambdaGrid) -> Vec<f64> {
    let mut values = match grid {
        LambdaGrid::Explicit { values } => values.clone(),
        LambdaGrid::Auto { points, min_ratio } => {
            let top = lambda_max(x, y);
            let top = if top > 0.0 { top } else { 1.0 };
            if *points == 1 {
                vec![top]
            } else {
                (0..*points)
                    .map(|i| top * min_ratio.powf(i as f64 / (*points - 1) as f64))
                    .collect()
            }
        }
    };
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    values
}

/// Fits along a descending grid, each warm-started from the previous one.
pub(crate) fn fit_path(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    grid: &[f64],
    cfg: &LassoConfig,
    seed: u64,
) -> Result<Vec<LassoFit>> {
    let mut out: Vec<LassoFit> = Vec::with_capacity(grid.len());
    for (k, &lam) in grid.iter().enumerate() {
        let init = out.last().map(|f| (f.weights.as_slice(), f.intercept));
        out.push(fit_lasso_from(x, y, lam, cfg, init, seed.wrapping_add(k as u64))?);
    }
    Ok(out)
}

fn select_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    /// Grid, largest first.
    pub grid: Vec<f64>,
    /// Mean validation MSE per grid value (empty on fallback).
    pub mean_mse: Vec<f64>,
    /// True when fewer than two folds were available.
    pub fallback: bool,
}

/// Leave-one-fold-out CV over the lambda grid. `folds[i]` labels row `i`
/// (seasons). The lowest mean validation MSE wins; ties go to the larger
/// lambda.
pub fn cross_validate_lambda(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    folds: &[usize],
    cfg: &LassoConfig,
) -> Result<CvResult> {
    cfg.validate()?;
    if folds.len() != y.len() || x.nrows() != y.len() {
        return Err(Error::InvalidArgument("fold labels, rows and targets must have equal length".into()));
    }
    let grid = lambda_grid(x, y, &cfg.lambda_grid);
    let labels: BTreeSet<usize> = folds.iter().copied().collect();
    if labels.len() < 2 {
        let top = lambda_max(x, y);
        let lambda = if top > 0.0 { top * cfg.fallback_ratio } else { grid[0] };
        log::warn!("single training season: cross-validation skipped, lambda fixed at {lambda:e}");
        return Ok(CvResult {
            lambda,
            grid,
            mean_mse: Vec::new(),
            fallback: true,
        });
    }

    let mut total = vec![0.0; grid.len()];
    for (k, &label) in labels.iter().enumerate() {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != label).collect();
        let valid: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == label).collect();
        let xt = select_rows(x, &train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = select_rows(x, &valid);
        let path = fit_path(xt.view(), &yt, &grid, cfg, cfg.seed.wrapping_add(1000 * k as u64))?;
        for (g, fit) in path.iter().enumerate() {
            let mse = xv
                .rows()
                .into_iter()
                .zip(&valid)
                .map(|(row, &i)| {
                    let pred = row.iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>() + fit.intercept;
                    (y[i] - pred).powi(2)
                })
                .sum::<f64>()
                / valid.len() as f64;
            total[g] += mse;
        }
    }
    let mean_mse: Vec<f64> = total.iter().map(|t| t / labels.len() as f64).collect();
    let mut best = 0;
    for g in 1..grid.len() {
        let tie_band = 1e-12 * mean_mse[best].abs().max(f64::MIN_POSITIVE);
        if mean_mse[g] < mean_mse[best] - tie_band {
            best = g;
        }
    }
    Ok(CvResult {
        lambda: grid[best],
        grid,
        mean_mse,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn auto_grid_is_log_spaced_from_kill_threshold() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        let y = [1.0, 2.0, 3.0, 0.0];
        let g = lambda_grid(x.view(), &y, &LambdaGrid::default());
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], lambda_max(x.view(), &y));
        assert!((g[49] / g[0] - 1e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn single_huge_lambda_is_chosen() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [2.0, 1.0], [1.0, 2.0]];
        let y = [1.0, 2.0, 3.0, 0.0, 4.0, 5.0];
        let cfg = LassoConfig { lambda_grid: LambdaGrid::Explicit { values: vec![1e6] }, ..Default::default() };
        let cv = cross_validate_lambda(x.view(), &y, &[0, 0, 1, 1, 2, 2], &cfg).unwrap();
        assert_eq!(cv.lambda, 1e6);
        let fit = super::super::fit_lasso(x.view(), &y, cv.lambda, &cfg).unwrap();
        assert!(fit.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn ties_go_to_larger_lambda() {
        // Both lambdas kill every weight, so both validation curves are equal.
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = [1.0, 1.0, 2.0, 2.0];
        let cfg = LassoConfig { lambda_grid: LambdaGrid::Explicit { values: vec![50.0, 100.0] }, ..Default::default() };
        let cv = cross_validate_lambda(x.view(), &y, &[0, 1, 0, 1], &cfg).unwrap();
        assert_eq!(cv.mean_mse[0], cv.mean_mse[1]);
        assert_eq!(cv.lambda, 100.0);
    }

    #[test]
    fn single_fold_falls_back() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = [1.0, 2.0, 3.5];
        let cv = cross_validate_lambda(x.view(), &y, &[4, 4, 4], &LassoConfig::default()).unwrap();
        assert!(cv.fallback);
        assert!((cv.lambda - 0.01 * lambda_max(x.view(), &y)).abs() < 1e-15);
    }
}
