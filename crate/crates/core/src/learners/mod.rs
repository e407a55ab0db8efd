//! Probability learners: penalized logistic regressions, a random forest,
//! gradient-boosted trees, and the Platt score-to-probability map.

mod boost;
mod forest;
mod logit;
mod platt;
mod standardize;
mod tree;

pub use boost::{fit_gradient_boosting, gb_score, BoostModel, BoostParams};
pub use forest::{fit_random_forest, rf_score, ForestModel, ForestParams};
pub use logit::{
    fit_logit_l1, fit_logit_l2, fit_logit_l2_from, logistic, logit_objective, predict_proba,
    FitDiagnostics, LogitModel, Penalty, ScaledLogit, PROB_CLAMP,
};
pub use platt::{calibrate, fit_platt, fit_platt_with, CalibrationMap, ScoreScale, VOTE_FLOOR};
pub use standardize::{standardize_fit, StandardizationParams};
pub use boost::Stage;
pub use tree::{Node, Tree};

use serde::{Deserialize, Serialize};

use crate::error::{MspiError, Result};

/// Dense row-major matrix of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Matrix> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(MspiError::DimensionMismatch {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    /// Matrix with `n_rows` rows and no columns.
    pub fn empty_columns(n_rows: usize) -> Matrix {
        Matrix {
            n_rows,
            n_cols: 0,
            data: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            n_rows: end - start,
            n_cols: self.n_cols,
            data: self.data[start * self.n_cols..end * self.n_cols].to_vec(),
        }
    }

    /// Columns in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Matrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            data,
        }
    }
}

pub(crate) fn check_targets(x: &Matrix, y: &[bool]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(MspiError::DimensionMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(MspiError::EmptySeries("no training rows".into()));
    }
    Ok(())
}

pub(crate) fn both_classes(y: &[bool]) -> bool {
    y.iter().any(|&v| v) && y.iter().any(|&v| !v)
}

/// Laplace-smoothed event rate `(k + 1) / (n + 2)`.
pub fn laplace_rate(y: &[bool]) -> f64 {
    let k = y.iter().filter(|&&v| v).count();
    (k as f64 + 1.0) / (y.len() as f64 + 2.0)
}
