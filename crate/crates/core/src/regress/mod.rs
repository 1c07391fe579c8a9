//! LASSO linear regression and the leave-one-season-out protocol.
//!
//! The fitted objective is
//!
//! ```text
//! (1 / 2n) * sum_i (y_i - w . x_i - b)^2  +  lambda * |w|_1
//! ```
//!
//! with an unpenalized intercept `b`. Coordinate descent is the
//! deterministic reference solver; proximal SGD (variance reduced) is the
//! stochastic alternative.

mod cv;
mod lasso;
mod loso;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::week::IsoWeek;

pub use cv::{cross_validate_lambda, lambda_grid, lambda_max, CvResult};
pub use lasso::{fit_lasso, fit_lasso_from, objective, LassoFit};
pub use loso::{loso_protocol, LosoFold, LosoOutcome, ReadAudit, Targets};

/// `sign(z) * max(|z| - t, 0)`, the proximal operator of `t * |.|`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    CoordinateDescent,
    ProximalSgd,
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::CoordinateDescent => "coordinate-descent",
            Optimizer::ProximalSgd => "proximal-sgd",
        })
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinate-descent" | "cd" => Ok(Optimizer::CoordinateDescent),
            "proximal-sgd" | "sgd" => Ok(Optimizer::ProximalSgd),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

/// Regularization strengths tried by cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LambdaGrid {
    /// `points` values log-spaced from the kill threshold down to
    /// `min_ratio` times it.
    Auto { points: usize, min_ratio: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            points: 50,
            min_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub lambda_grid: LambdaGrid,
    pub optimizer: Optimizer,
    pub max_epochs: usize,
    /// SGD step size; derived from the data when absent.
    pub step_size: Option<f64>,
    /// SGD mini-batch size.
    pub batch_size: usize,
    /// Stop when no coefficient moves by more than `tolerance` times the
    /// RMS of the targets during a sweep or epoch.
    pub tolerance: f64,
    pub seed: u64,
    /// Used when a training set has a single season and CV is impossible:
    /// lambda = `fallback_ratio` * kill threshold.
    pub fallback_ratio: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda_grid: LambdaGrid::default(),
            optimizer: Optimizer::CoordinateDescent,
            max_epochs: 5000,
            step_size: None,
            batch_size: 8,
            tolerance: 1e-4,
            seed: 0,
            fallback_ratio: 1e-2,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be > 0".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("max_epochs and batch_size must be >= 1".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("step_size must be > 0".into()));
            }
        }
        match &self.lambda_grid {
            LambdaGrid::Auto { points, min_ratio } => {
                if *points == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(Error::InvalidArgument("auto lambda grid needs points >= 1 and 0 < min_ratio <= 1".into()));
                }
            }
            LambdaGrid::Explicit { values } => {
                if values.is_empty() || values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidArgument("lambda grid must be non-empty and positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// What an optimizer run did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Objective after every sweep or epoch.
    #[serde(skip)]
    pub objectives: Vec<f64>,
}

/// A LASSO model bound to named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub column_names: Vec<String>,
    /// Leading columns that are pages; the rest are week indicators.
    pub n_pages: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub nonzero_count: usize,
    pub training_rows: Vec<IsoWeek>,
    pub seed: u64,
    pub trace: OptimizerTrace,
}

impl TrainedModel {
    pub fn new(fit: LassoFit, column_names: Vec<String>, n_pages: usize, training_rows: Vec<IsoWeek>, seed: u64) -> Self {
        let nonzero_count = fit.weights.iter().filter(|w| **w != 0.0).count();
        Self {
            column_names,
            n_pages,
            weights: fit.weights,
            intercept: fit.intercept,
            lambda: fit.lambda,
            nonzero_count,
            training_rows,
            seed,
            trace: fit.trace,
        }
    }

    /// Page columns with a non-zero weight.
    pub fn selected_pages(&self) -> impl Iterator<Item = (&str, f64)> {
        self.column_names[..self.n_pages]
            .iter()
            .zip(&self.weights[..self.n_pages])
            .filter(|(_, w)| **w != 0.0)
            .map(|(n, w)| (n.as_str(), *w))
    }
}

/// Raw linear predictions and the same values clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw: Vec<f64>,
    pub reported: Vec<f64>,
}

pub fn predict(m: &TrainedModel, x: ndarray::ArrayView2<'_, f64>) -> Result<Prediction> {
    if x.ncols() != m.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: m.weights.len(),
            got: x.ncols(),
        });
    }
    let raw: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&m.weights).map(|(a, b)| a * b).sum::<f64>() + m.intercept)
        .collect();
    let reported = raw.iter().map(|&v| v.max(0.0)).collect();
    Ok(Prediction { raw, reported })
}
