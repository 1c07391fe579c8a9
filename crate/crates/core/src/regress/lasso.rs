use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{soft_threshold, LassoConfig, Optimizer, OptimizerTrace};
use crate::error::{Error, Result};

/// Coefficients from one fit at a fixed lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub trace: OptimizerTrace,
}

/// `(1/2n) * ||y - Xw - b||^2 + lambda * |w|_1`
pub fn objective(x: ArrayView2<'_, f64>, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let sse: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let r = yi - b - row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            r * r
        })
        .sum();
    sse / (2.0 * n) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn check_inputs(x: ArrayView2<'_, f64>, y: &[f64], lambda: f64) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidArgument(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidArgument("LASSO needs at least 2 rows".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design matrix or targets contain non-finite values".into()));
    }
    Ok(())
}

fn target_scale(y: &[f64]) -> f64 {
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    if rms > 0.0 {
        rms
    } else {
        1.0
    }
}

/// Fit from a zero start.
pub fn fit_lasso(x: ArrayView2<'_, f64>, y: &[f64], lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    fit_lasso_from(x, y, lambda, cfg, None, cfg.seed)
}

/// Fit starting from `init` (weights, intercept), e.g. the solution at a
/// neighbouring lambda. `seed` drives the SGD shuffles.
pub fn fit_lasso_from(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
    init: Option<(&[f64], f64)>,
    seed: u64,
) -> Result<LassoFit> {
    check_inputs(x, y, lambda)?;
    let p = x.ncols();
    let (w0, b0) = match init {
        Some((w, b)) if w.len() == p => (w.to_vec(), b),
        Some((w, _)) => return Err(Error::DimensionMismatch { expected: p, got: w.len() }),
        None => (vec![0.0; p], y.iter().sum::<f64>() / y.len() as f64),
    };
    match cfg.optimizer {
        Optimizer::CoordinateDescent => Ok(coordinate_descent(x, y, lambda, cfg, w0, b0)),
        Optimizer::ProximalSgd => proximal_svrg(x, y, lambda, cfg, w0, b0, seed),
    }
}

fn coordinate_descent(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
    mut w: Vec<f64>,
    mut b: f64,
) -> LassoFit {
    let n = y.len();
    let nf = n as f64;
    let p = x.ncols();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).to_vec()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut r: Vec<f64> = (0..n)
        .map(|i| y[i] - b - cols.iter().zip(&w).map(|(c, wj)| c[i] * wj).sum::<f64>())
        .collect();
    let scale = target_scale(y);
    let obj = |r: &[f64], w: &[f64]| {
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * nf) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    };

    // Sweeps alternate between all coordinates and the current non-zero
    // ones; convergence is only declared after a full sweep.
    let all: Vec<usize> = (0..p).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut full = true;
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epochs += 1;
        let shift = r.iter().sum::<f64>() / nf;
        b += shift;
        r.iter_mut().for_each(|v| *v -= shift);
        let mut max_delta = shift.abs();
        let coords = if full { &all } else { &active };
        for &j in coords {
            if sq[j] == 0.0 {
                w[j] = 0.0;
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nf + sq[j] * w[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (ri, xi) in r.iter_mut().zip(col) {
                    *ri -= xi * delta;
                }
                w[j] = new;
                max_delta = max_delta.max(delta.abs() * sq[j].sqrt());
            }
        }
        let f = obj(&r, &w);
        debug_assert!(
            objectives.last().is_none_or(|&prev: &f64| f <= prev + 1e-12 * prev.abs().max(1.0)),
            "coordinate descent objective increased"
        );
        objectives.push(f);
        let settled = max_delta <= cfg.tolerance * scale;
        if full && settled {
            converged = true;
            break;
        }
        if full || settled {
            full = !full;
            if !full {
                active = (0..p).filter(|&j| w[j] != 0.0).collect();
            }
        }
    }
    if !converged {
        log::warn!("coordinate descent did not converge in {} sweeps (lambda {lambda:e})", cfg.max_epochs);
    }
    LassoFit {
        weights: w,
        intercept: b,
        lambda,
        trace: OptimizerTrace {
            optimizer: Optimizer::CoordinateDescent,
            epochs,
            final_objective: *objectives.last().unwrap_or(&f64::NAN),
            converged,
            objectives,
        },
    }
}

/// Proximal stochastic gradient with SVRG variance reduction: each epoch
/// takes a full-gradient snapshot, then one shuffled pass of mini-batch
/// proximal steps.
fn proximal_svrg(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
    mut w: Vec<f64>,
    mut b: f64,
    seed: u64,
) -> Result<LassoFit> {
    let n = y.len();
    let nf = n as f64;
    let p = x.ncols();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let lipschitz = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0, f64::max);
    let step = cfg.step_size.unwrap_or(1.0 / (3.0 * lipschitz));
    let scale = target_scale(y);
    let resid = |row: &[f64], yi: f64, w: &[f64], b: f64| row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b - yi;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut epochs = 0;
    let mut grad = vec![0.0; p];
    while epochs < cfg.max_epochs {
        epochs += 1;
        let snap_w = w.clone();
        let snap_b = b;
        let snap_r: Vec<f64> = (0..n).map(|i| resid(&rows[i], y[i], &snap_w, snap_b)).collect();
        let mut mu_w = vec![0.0; p];
        for (row, &ri) in rows.iter().zip(&snap_r) {
            for (m, v) in mu_w.iter_mut().zip(row) {
                *m += ri * v / nf;
            }
        }
        let mu_b = snap_r.iter().sum::<f64>() / nf;

        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bf = batch.len() as f64;
            grad.copy_from_slice(&mu_w);
            let mut grad_b = mu_b;
            for &i in batch {
                let d = (resid(&rows[i], y[i], &w, b) - snap_r[i]) / bf;
                if d != 0.0 {
                    for (g, v) in grad.iter_mut().zip(&rows[i]) {
                        *g += d * v;
                    }
                }
                grad_b += d;
            }
            for j in 0..p {
                w[j] = soft_threshold(w[j] - step * grad[j], step * lambda);
            }
            b -= step * grad_b;
        }

        let f = objective(x, y, &w, b, lambda);
        if !f.is_finite() {
            return Err(Error::Diverged {
                epoch: epochs,
                objective: f,
                step_size: step,
            });
        }
        objectives.push(f);
        let max_delta = w
            .iter()
            .zip(&snap_w)
            .map(|(a, c)| (a - c).abs())
            .fold((b - snap_b).abs(), f64::max);
        if max_delta <= cfg.tolerance * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("proximal SGD did not converge in {} epochs (lambda {lambda:e})", cfg.max_epochs);
    }
    Ok(LassoFit {
        weights: w,
        intercept: b,
        lambda,
        trace: OptimizerTrace {
            optimizer: Optimizer::ProximalSgd,
            epochs,
            final_objective: *objectives.last().unwrap_or(&f64::NAN),
            converged,
            objectives,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn cd() -> LassoConfig {
        LassoConfig::default()
    }

    #[test]
    fn kill_threshold_gives_exact_zero_model() {
        let x = array![[1.0, 0.5], [2.0, -1.0], [3.0, 0.0], [4.0, 2.0]];
        let y = [1.0, 3.0, 2.0, 6.0];
        let ybar = 3.0;
        let lmax = (0..2)
            .map(|j| x.column(j).iter().zip(&y).map(|(a, b)| a * (b - ybar)).sum::<f64>().abs() / 4.0)
            .fold(0.0, f64::max);
        for lam in [lmax, 2.0 * lmax] {
            let fit = fit_lasso(x.view(), &y, lam, &cd()).unwrap();
            assert_eq!(fit.weights, [0.0, 0.0]);
            assert_eq!(fit.intercept, ybar);
        }
        let fit = fit_lasso(x.view(), &y, 0.9 * lmax, &cd()).unwrap();
        assert!(fit.weights.iter().any(|w| *w != 0.0));
    }

    #[test]
    fn objective_never_increases() {
        let x = Array2::from_shape_fn((30, 6), |(i, j)| ((i * 7 + j * 13) % 11) as f64 - 5.0 + (i as f64 * 0.1).sin());
        let y: Vec<f64> = (0..30).map(|i| (i as f64).cos() * 3.0 + x[[i, 1]]).collect();
        let fit = fit_lasso(x.view(), &y, 0.05, &cd()).unwrap();
        assert!(fit.trace.converged);
        assert!(fit.trace.objectives.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = array![[1.0], [2.0]];
        assert!(fit_lasso(x.view(), &[1.0], 0.1, &cd()).is_err());
        assert!(fit_lasso(x.view(), &[1.0, f64::NAN], 0.1, &cd()).is_err());
        assert!(fit_lasso(x.view(), &[1.0, 2.0], -1.0, &cd()).is_err());
        let one = array![[1.0]];
        assert!(fit_lasso(one.view(), &[1.0], 0.1, &cd()).is_err());
    }

    #[test]
    fn huge_step_diverges_with_guidance() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 1.0]];
        let y = [1.0, 2.0, 3.0, 4.0];
        let cfg = LassoConfig {
            optimizer: Optimizer::ProximalSgd,
            step_size: Some(1e3),
            max_epochs: 2000,
            ..Default::default()
        };
        let err = fit_lasso(x.view(), &y, 0.01, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert!(err.to_string().contains("reduce the step size"));
    }

    #[test]
    fn epoch_cap_returns_unconverged_model() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i + 1) * (j + 2)) as f64 % 7.0);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let cfg = LassoConfig { max_epochs: 1, tolerance: 1e-15, ..Default::default() };
        let fit = fit_lasso(x.view(), &y, 1e-3, &cfg).unwrap();
        assert!(!fit.trace.converged);
        assert_eq!(fit.trace.epochs, 1);
    }

    #[test]
    fn sgd_is_seed_deterministic() {
        let x = Array2::from_shape_fn((40, 4), |(i, j)| ((i * 3 + j * 5) % 9) as f64 - 4.0);
        let y: Vec<f64> = (0..40).map(|i| x[[i, 0]] * 2.0 - x[[i, 3]] + 1.0).collect();
        let cfg = LassoConfig { optimizer: Optimizer::ProximalSgd, seed: 11, ..Default::default() };
        let a = fit_lasso(x.view(), &y, 0.01, &cfg).unwrap();
        let b = fit_lasso(x.view(), &y, 0.01, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
