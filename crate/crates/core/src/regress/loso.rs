//! Leave-one-season-out training: one model per held-out season, trained
//! on every other season.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate_lambda, fit_path, CvResult};
use super::lasso::fit_lasso_from;
use super::{predict, LassoConfig, Prediction, TrainedModel};
use crate::error::{Error, Result};
use crate::featureset::{RawFeatures, Scaler, Scaling};

/// Row indices whose targets were handed out.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadAudit {
    pub rows: BTreeSet<usize>,
}

/// Regression targets that can only be read through [`Targets::gather`],
/// which logs every row it returns.
#[derive(Debug)]
pub struct Targets {
    values: Vec<f64>,
    reads: Vec<AtomicU64>,
}

impl Targets {
    pub fn new(values: Vec<f64>) -> Self {
        let reads = values.iter().map(|_| AtomicU64::new(0)).collect();
        Self { values, reads }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn gather(&self, rows: &[usize], audit: &mut ReadAudit) -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                self.reads[i].fetch_add(1, Ordering::Relaxed);
                audit.rows.insert(i);
                self.values[i]
            })
            .collect()
    }

    /// Total reads of row `i` over the lifetime of this value.
    pub fn read_count(&self, i: usize) -> u64 {
        self.reads[i].load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub season: String,
    pub season_index: usize,
    pub test_rows: Vec<usize>,
    pub model: TrainedModel,
    pub scaler: Scaler,
    pub cv: CvResult,
    pub prediction: Prediction,
    /// Target rows read while training this fold's model.
    pub audit: ReadAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoOutcome {
    pub folds: Vec<LosoFold>,
    pub scaling: Scaling,
}

/// Train one model per season, each seeing only the other seasons'
/// targets. `season_of_row[i]` indexes into `seasons`.
pub fn loso_protocol(
    raw: &RawFeatures,
    targets: &Targets,
    season_of_row: &[usize],
    seasons: &[String],
    cfg: &LassoConfig,
    scaling: Scaling,
) -> Result<LosoOutcome> {
    cfg.validate()?;
    let n = raw.n_rows();
    if targets.len() != n || season_of_row.len() != n {
        return Err(Error::InvalidArgument("features, targets and season labels differ in length".into()));
    }
    if seasons.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-season-out needs at least 2 seasons".into()));
    }
    if let Some(&bad) = season_of_row.iter().find(|&&s| s >= seasons.len()) {
        return Err(Error::InvalidArgument(format!("season index {bad} out of range")));
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let mut folds = Vec::with_capacity(seasons.len());
    for (s, label) in seasons.iter().enumerate() {
        let train: Vec<usize> = all_rows.iter().copied().filter(|&i| season_of_row[i] != s).collect();
        let test: Vec<usize> = all_rows.iter().copied().filter(|&i| season_of_row[i] == s).collect();
        if test.is_empty() || train.len() < 2 {
            return Err(Error::Data(format!("season {label} leaves too few rows to train or test")));
        }
        let fit_rows = match scaling {
            Scaling::TrainOnly => &train,
            Scaling::Global => &all_rows,
        };
        let matrix = raw.standardize(fit_rows)?;
        let x_train = matrix.values.select(Axis(0), &train);
        let x_test = matrix.values.select(Axis(0), &test);

        let mut audit = ReadAudit::default();
        let y_train = targets.gather(&train, &mut audit);
        let fold_labels: Vec<usize> = train.iter().map(|&i| season_of_row[i]).collect();
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = cfg.seed.wrapping_add(0x9e37_79b9 * (s as u64 + 1));
        let cv = cross_validate_lambda(x_train.view(), &y_train, &fold_labels, &fold_cfg)?;

        let fit = if cv.fallback {
            fit_lasso_from(x_train.view(), &y_train, cv.lambda, &fold_cfg, None, fold_cfg.seed)?
        } else {
            let upto = cv.grid.iter().position(|&l| l == cv.lambda).unwrap_or(0);
            fit_path(x_train.view(), &y_train, &cv.grid[..=upto], &fold_cfg, fold_cfg.seed)?
                .pop()
                .expect("non-empty path")
        };
        let training_rows = train.iter().map(|&i| raw.rows[i]).collect();
        let model = TrainedModel::new(fit, matrix.column_names.clone(), matrix.n_pages, training_rows, fold_cfg.seed);
        let prediction = predict(&model, x_test.view())?;
        folds.push(LosoFold {
            season: label.clone(),
            season_index: s,
            test_rows: test,
            model,
            scaler: matrix.scaler,
            cv,
            prediction,
            audit,
        });
    }
    Ok(LosoOutcome { folds, scaling })
}
