use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{MspiError, Result};

/// Column means and population standard deviations from a training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub n_inputs: usize,
    /// Input column index of each retained feature.
    pub retained: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Constant columns, left out of the transformed rows.
    pub dropped: Vec<usize>,
}

pub fn standardize_fit(x: &Matrix) -> Result<StandardizationParams> {
    if x.n_rows() < 2 {
        return Err(MspiError::InsufficientHistory {
            needed: 2,
            have: x.n_rows(),
        });
    }
    let n = x.n_rows() as f64;
    let mut params = StandardizationParams {
        n_inputs: x.n_cols(),
        retained: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        dropped: Vec::new(),
    };
    for j in 0..x.n_cols() {
        let col = || x.rows().map(move |r| r[j]);
        let (lo, hi) = col().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let mean = col().sum::<f64>() / n;
        let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if lo == hi || std == 0.0 {
            params.dropped.push(j);
        } else {
            params.retained.push(j);
            params.mean.push(mean);
            params.std.push(std);
        }
    }
    if params.retained.is_empty() {
        return Err(MspiError::Numeric(
            "every feature has zero variance in the training window".into(),
        ));
    }
    Ok(params)
}

impl StandardizationParams {
    pub fn n_retained(&self) -> usize {
        self.retained.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_inputs {
            return Err(MspiError::DimensionMismatch {
                expected: self.n_inputs,
                got: x.len(),
            });
        }
        Ok(self
            .retained
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&j, (m, s))| (x[j] - m) / s)
            .collect())
    }

    pub fn apply_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let rows = x.rows().map(|r| self.apply(r)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::empty_columns(0));
        }
        Matrix::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_column() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let p = standardize_fit(&x).unwrap();
        assert_eq!(p.mean, [2.0]);
        assert_eq!(p.std, [1.0]);
        assert_eq!(p.dropped, [1]);
        assert_eq!(p.apply(&[1.0, 5.0]).unwrap(), [-1.0]);
        assert_eq!(p.apply(&[3.0, 9.0]).unwrap(), [1.0]);
    }

    #[test]
    fn training_rows_centered() {
        let rows: Vec<[f64; 3]> = (0..57)
            .map(|i| {
                let t = i as f64;
                [t.sin() * 3.0 + 10.0, (t * 0.37).cos(), t * t * 1e-3]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let p = standardize_fit(&x).unwrap();
        let z = p.apply_matrix(&x).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = z.rows().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_constant_rejected() {
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert!(standardize_fit(&x).is_err());
        let one = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(standardize_fit(&one).is_err());
    }
}
