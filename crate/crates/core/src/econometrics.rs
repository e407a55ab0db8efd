//! OLS with Newey–West standard errors and the regressions built on MSPI:
//! predictive volatility, next-month crash indicators, MSPI innovations and
//! local projections of outcomes on those innovations.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backtest::{ForecastSeries, ModelKind};
use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};
use crate::features::FeatureMatrix;
use crate::io;
use crate::labels::LabelSeries;
use crate::learners::{fit_logit_l2, LogitModel, Matrix};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Newey–West standard errors.
    pub se: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub r2: f64,
    pub n: usize,
    pub hac_lag: usize,
}

impl RegressionResult {
    pub fn coef_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.coef[i] / self.se[i])
    }
}

fn to_dmatrix(x: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(x.n_rows(), x.n_cols(), |i, j| x.get(i, j))
}

/// OLS of `y` on the columns of `x` (which should include the intercept),
/// with Bartlett-kernel Newey–West covariance at `hac_lag`. Lag 0 is White's
/// heteroskedasticity-robust form.
pub fn ols_hac(y: &[f64], x: &Matrix, hac_lag: usize) -> Result<RegressionResult> {
    let names: Vec<String> = (0..x.n_cols()).map(|j| format!("x{j}")).collect();
    ols_hac_named(y, x, &names, hac_lag)
}

pub fn ols_hac_named(y: &[f64], x: &Matrix, names: &[String], hac_lag: usize) -> Result<RegressionResult> {
    let n = x.n_rows();
    let k = x.n_cols();
    if y.len() != n {
        return Err(MspiError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if names.len() != k {
        return Err(MspiError::DimensionMismatch {
            expected: k,
            got: names.len(),
        });
    }
    if k == 0 || n <= k {
        return Err(MspiError::InsufficientHistory {
            needed: k + 1,
            have: n,
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MspiError::Numeric("non-finite dependent variable".into()));
    }
    let xm = to_dmatrix(x);
    let qr = xm.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..k {
        if !(r[(j, j)].abs() > RANK_TOL * scale) {
            return Err(MspiError::RankDeficient(format!(
                "column `{}` is a linear combination of the preceding columns",
                names[j]
            )));
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| MspiError::Numeric("singular triangular factor".into()))?;
    let fitted = &xm * &beta;
    let resid = &yv - &fitted;

    // (X'X)^{-1} = R^{-1} R^{-T}
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| MspiError::Numeric("singular triangular factor".into()))?;
    let bread = &r_inv * r_inv.transpose();

    let mut meat = DMatrix::<f64>::zeros(k, k);
    let scores: Vec<DVector<f64>> = (0..n)
        .map(|t| xm.row(t).transpose() * resid[t])
        .collect();
    for s in &scores {
        meat += s * s.transpose();
    }
    for l in 1..=hac_lag.min(n - 1) {
        let w = 1.0 - l as f64 / (hac_lag as f64 + 1.0);
        let mut g = DMatrix::<f64>::zeros(k, k);
        for t in l..n {
            g += &scores[t] * scores[t - l].transpose();
        }
        meat += (&g + g.transpose()) * w;
    }
    let cov = &bread * meat * &bread;
    let cov = (&cov + cov.transpose()) * 0.5;

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let r2 = if sst > 0.0 {
        1.0 - ssr / sst
    } else if ssr == 0.0 {
        1.0
    } else {
        0.0
    };

    Ok(RegressionResult {
        names: names.to_vec(),
        coef: beta.iter().copied().collect(),
        se: (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        cov: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        residuals: resid.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        r2,
        n,
        hac_lag,
    })
}

/// Smallest eigenvalue of the coefficient covariance.
pub fn min_cov_eigenvalue(result: &RegressionResult) -> f64 {
    let k = result.cov.len();
    let m = DMatrix::from_fn(k, k, |i, j| result.cov[i][j]);
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Month-indexed control variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    pub names: Vec<String>,
    pub values: BTreeMap<YearMonth, Vec<f64>>,
}

impl Controls {
    pub fn none() -> Controls {
        Controls::default()
    }

    /// `(R_mkt, sigma_mkt)` of each month.
    pub fn market(labels: &LabelSeries) -> Controls {
        Controls {
            names: vec!["R_mkt".into(), "sigma_mkt".into()],
            values: labels
                .rows()
                .iter()
                .map(|r| (r.month, vec![r.r_mkt, r.sigma_mkt]))
                .collect(),
        }
    }

    fn get(&self, month: YearMonth) -> Option<&[f64]> {
        if self.names.is_empty() {
            Some(&[])
        } else {
            self.values.get(&month).map(Vec::as_slice)
        }
    }
}

/// Builds `[1, first..., controls...]` rows and runs OLS.
fn regress(
    y: &[f64],
    rows: &[Vec<f64>],
    names: Vec<String>,
    hac_lag: usize,
) -> Result<RegressionResult> {
    let x = if rows.is_empty() {
        Matrix::empty_columns(0)
    } else {
        Matrix::from_rows(rows)?
    };
    ols_hac_named(y, &x, &names, hac_lag)
}

fn with_intercept(names: &[&str], controls: &Controls) -> Vec<String> {
    std::iter::once("const".to_string())
        .chain(names.iter().map(|s| s.to_string()))
        .chain(controls.names.iter().cloned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolRegression {
    pub model: ModelKind,
    pub full: RegressionResult,
    pub controls_only: RegressionResult,
    /// R² gained by adding MSPI to the controls.
    pub delta_r2: f64,
}

/// `sigma_{t+1} = α + γ MSPI_t + φ'Z_t + η_{t+1}`.
pub fn predictive_vol_regression(
    series: &ForecastSeries,
    model: ModelKind,
    controls: &Controls,
    hac_lag: usize,
) -> Result<VolRegression> {
    let mut y = Vec::new();
    let mut full_rows = Vec::new();
    let mut ctrl_rows = Vec::new();
    for r in series.for_model(model) {
        let (Some(v), Some(z)) = (r.next_vol, controls.get(r.month)) else {
            continue;
        };
        y.push(v);
        full_rows.push([&[1.0, r.probability][..], z].concat());
        ctrl_rows.push([&[1.0][..], z].concat());
    }
    let full = regress(&y, &full_rows, with_intercept(&["MSPI"], controls), hac_lag)?;
    let controls_only = regress(&y, &ctrl_rows, with_intercept(&[], controls), hac_lag)?;
    Ok(VolRegression {
        model,
        delta_r2: full.r2 - controls_only.r2,
        full,
        controls_only,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRegression {
    pub model: ModelKind,
    pub cutoff: f64,
    pub crash_rate: f64,
    /// Linear probability model.
    pub lpm: RegressionResult,
    /// Unpenalized logit on the same regressors (intercept implicit).
    pub logit: Option<LogitModel>,
    pub logit_skipped: Option<String>,
}

/// `Crash_{t+1}(c) = 1{R_{t+1} <= c}` on MSPI_t and controls.
pub fn crash_regression(
    series: &ForecastSeries,
    model: ModelKind,
    controls: &Controls,
    cutoff: f64,
    hac_lag: usize,
) -> Result<CrashRegression> {
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for r in series.for_model(model) {
        let (Some(ret), Some(z)) = (r.next_ret, controls.get(r.month)) else {
            continue;
        };
        y.push(ret <= cutoff);
        rows.push([&[1.0, r.probability][..], z].concat());
    }
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
    let lpm = regress(&yf, &rows, with_intercept(&["MSPI"], controls), hac_lag)?;
    let crashes = y.iter().filter(|&&v| v).count();
    let (logit, logit_skipped) = if crashes == 0 || crashes == y.len() {
        let why = format!("crash indicator at cutoff {cutoff} has a single class; logit skipped");
        log::warn!("{why}");
        (None, Some(why))
    } else {
        let slopes: Vec<Vec<f64>> = rows.iter().map(|r| r[1..].to_vec()).collect();
        let x = Matrix::from_rows(&slopes)?;
        (Some(fit_logit_l2(&x, &y, 0.0)?), None)
    };
    Ok(CrashRegression {
        model,
        cutoff,
        crash_rate: crashes as f64 / y.len() as f64,
        lpm,
        logit,
        logit_skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationSeries {
    pub model: ModelKind,
    pub months: Vec<YearMonth>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Regressors left out because they were constant over the sample.
    pub dropped: Vec<String>,
    pub regression: RegressionResult,
}

impl InnovationSeries {
    pub fn get(&self, month: YearMonth) -> Option<f64> {
        self.months
            .binary_search(&month)
            .ok()
            .map(|i| self.residuals[i])
    }
}

/// `MSPI_t = δ0 + δ1 MSPI_{t-1} + Δ'Z_{t-1} + u_t`.
pub fn mspi_innovations(
    series: &ForecastSeries,
    model: ModelKind,
    controls: &Controls,
    hac_lag: usize,
) -> Result<InnovationSeries> {
    let recs = series.for_model(model);
    let mut months = Vec::new();
    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for w in recs.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        if prev.month.succ() != cur.month {
            continue;
        }
        let Some(z) = controls.get(prev.month) else {
            continue;
        };
        months.push(cur.month);
        y.push(cur.probability);
        rows.push([&[prev.probability][..], z].concat());
    }
    if y.len() < 2 {
        return Err(MspiError::InsufficientHistory {
            needed: 2,
            have: y.len(),
        });
    }
    let all_names: Vec<String> = std::iter::once("MSPI_lag".to_string())
        .chain(controls.names.iter().map(|n| format!("{n}_lag")))
        .collect();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in all_names.iter().enumerate() {
        let first = rows[0][j];
        if rows.iter().all(|r| r[j] == first) {
            dropped.push(name.clone());
        } else {
            keep.push(j);
        }
    }
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| std::iter::once(1.0).chain(keep.iter().map(|&j| r[j])).collect())
        .collect();
    let names: Vec<String> = std::iter::once("const".to_string())
        .chain(keep.iter().map(|&j| all_names[j].clone()))
        .collect();
    let regression = regress(&y, &design, names, hac_lag)?;
    Ok(InnovationSeries {
        model,
        months,
        fitted: regression.fitted.clone(),
        residuals: regression.residuals.clone(),
        dropped,
        regression,
    })
}

/// Outcome variable for a local projection, dated by its own month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// Realized market volatility of the month.
    Volatility,
    /// `1{R_mkt <= cutoff}` for the month.
    Crash { cutoff: f64 },
    /// One of the monthly fragility features.
    Feature { name: String },
}

pub fn outcome_series(
    outcome: &Outcome,
    labels: &LabelSeries,
    features: Option<&FeatureMatrix>,
) -> Result<BTreeMap<YearMonth, f64>> {
    Ok(match outcome {
        Outcome::Volatility => labels.rows().iter().map(|r| (r.month, r.sigma_mkt)).collect(),
        Outcome::Crash { cutoff } => labels
            .rows()
            .iter()
            .map(|r| (r.month, f64::from(u8::from(r.r_mkt <= *cutoff))))
            .collect(),
        Outcome::Feature { name } => {
            let f = features.ok_or_else(|| {
                MspiError::config("lp.outcome", "a feature outcome needs the feature matrix")
            })?;
            let col = f
                .column(name)
                .ok_or_else(|| MspiError::config("lp.outcome", format!("unknown feature `{name}`")))?;
            f.months().iter().copied().zip(col).collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpHorizon {
    pub h: usize,
    pub b: f64,
    pub se: f64,
    pub n: usize,
    pub hac_lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalProjectionResult {
    pub horizons: Vec<LpHorizon>,
    pub omitted: Vec<usize>,
}

/// `y_{t+h} = a_h + b_h u_t + Γ_h'W_{t-1} + ε_{t+h}` for `h = 0..=max_h`,
/// each with HAC lag `h + 1`.
pub fn local_projections(
    u: &InnovationSeries,
    y: &BTreeMap<YearMonth, f64>,
    w: &Controls,
    max_h: usize,
) -> Result<LocalProjectionResult> {
    let mut horizons = Vec::new();
    let mut omitted = Vec::new();
    let names = with_intercept(&["u"], w);
    for h in 0..=max_h {
        let mut ys = Vec::new();
        let mut rows = Vec::new();
        for (&m, &ut) in u.months.iter().zip(&u.residuals) {
            let mut target = m;
            for _ in 0..h {
                target = target.succ();
            }
            let (Some(&yv), Some(z)) = (y.get(&target), w.get(m.pred())) else {
                continue;
            };
            ys.push(yv);
            rows.push([&[1.0, ut][..], z].concat());
        }
        if ys.len() <= names.len() {
            log::warn!("local projection horizon {h} omitted: {} usable months", ys.len());
            omitted.push(h);
            continue;
        }
        let r = regress(&ys, &rows, names.clone(), h + 1)?;
        horizons.push(LpHorizon {
            h,
            b: r.coef[1],
            se: r.se[1],
            n: r.n,
            hac_lag: h + 1,
        });
    }
    if horizons.is_empty() {
        return Err(MspiError::InsufficientHistory {
            needed: names.len() + 1,
            have: u.months.len(),
        });
    }
    Ok(LocalProjectionResult { horizons, omitted })
}

pub const LP_COLUMNS: [&str; 4] = ["h", "b_h", "se_h", "N_h"];

pub fn write_lp_csv(path: &Path, lp: &LocalProjectionResult, comment: Option<&str>) -> Result<()> {
    let mut wr = io::create_csv(path, comment)?;
    wr.write_record(LP_COLUMNS)
        .map_err(|e| io::write_err(path, e))?;
    for h in &lp.horizons {
        wr.write_record([h.h.to_string(), h.b.to_string(), h.se.to_string(), h.n.to_string()])
            .map_err(|e| io::write_err(path, e))?;
    }
    io::finish_csv(path, wr)
}
