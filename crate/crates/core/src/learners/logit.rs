//! Penalized logistic regression.
//!
//! Both penalties minimize the *mean* negative Bernoulli log-likelihood plus
//! the penalty on the slope coefficients; the intercept is never penalized.
//! A penalty weight `lambda_mean` here corresponds to `n * lambda_mean` in the
//! summed-likelihood form.
//!
//! * L1: accelerated proximal gradient (FISTA) with backtracking line search,
//!   soft-thresholding on the slopes and a plain gradient step on the
//!   intercept, restarting momentum whenever a step reverses direction.
//! * L2: damped Newton iterations on the smooth, strictly convex objective.
//!   With `lambda = 0` this is the unpenalized maximum-likelihood fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{both_classes, check_targets, laplace_rate, Matrix, StandardizationParams};
use crate::error::{MspiError, Result};

/// Probabilities used for scoring are kept within `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

const L1_MAX_ITER: usize = 10_000;
const L1_DECREASE_TOL: f64 = 1e-8;
const L1_RESIDUAL_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// Training targets had a single class; the model is the smoothed base rate.
    pub base_rate_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub penalty: Penalty,
    pub lambda: f64,
    pub diagnostics: FitDiagnostics,
}

/// Logistic function, evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn logit_of(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn linear(x: &Matrix, b0: f64, beta: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = b0
            + x.row(i)
                .iter()
                .zip(beta)
                .map(|(a, b)| a * b)
                .sum::<f64>();
    }
}

fn mean_nll(eta: &[f64], y: &[bool]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| softplus(e) - if yi { e } else { 0.0 })
        .sum::<f64>()
        / eta.len() as f64
}

fn penalty_value(beta: &[f64], penalty: Penalty, lambda: f64) -> f64 {
    match penalty {
        Penalty::L1 => lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
        Penalty::L2 => lambda * beta.iter().map(|b| b * b).sum::<f64>(),
    }
}

/// Mean negative log-likelihood plus penalty at `(b0, beta)`.
pub fn logit_objective(
    x: &Matrix,
    y: &[bool],
    b0: f64,
    beta: &[f64],
    penalty: Penalty,
    lambda: f64,
) -> f64 {
    let mut eta = vec![0.0; x.n_rows()];
    linear(x, b0, beta, &mut eta);
    mean_nll(&eta, y) + penalty_value(beta, penalty, lambda)
}

/// Gradient of the mean negative log-likelihood: `(d/db0, d/dbeta)`.
fn nll_gradient(x: &Matrix, y: &[bool], eta: &[f64], g0: &mut f64, g: &mut [f64]) {
    let n = eta.len() as f64;
    *g0 = 0.0;
    g.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..eta.len() {
        let r = logistic(eta[i]) - f64::from(u8::from(y[i]));
        *g0 += r;
        for (gj, xj) in g.iter_mut().zip(x.row(i)) {
            *gj += r * xj;
        }
    }
    *g0 /= n;
    g.iter_mut().for_each(|v| *v /= n);
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(MspiError::config("lambda", "must be finite and >= 0"))
    }
}

fn base_rate_model(x: &Matrix, y: &[bool], penalty: Penalty, lambda: f64) -> LogitModel {
    log::debug!("single-class training targets; using the smoothed base rate");
    let b0 = logit_of(laplace_rate(y));
    let beta = vec![0.0; x.n_cols()];
    LogitModel {
        intercept: b0,
        diagnostics: FitDiagnostics {
            iterations: 0,
            objective: logit_objective(x, y, b0, &beta, penalty, lambda),
            converged: true,
            base_rate_fallback: true,
        },
        coef: beta,
        penalty,
        lambda,
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Lasso-logit fit on (already standardized) rows.
pub fn fit_logit_l1(x: &Matrix, y: &[bool], lambda: f64) -> Result<LogitModel> {
    check_targets(x, y)?;
    validate_lambda(lambda)?;
    if !both_classes(y) {
        return Ok(base_rate_model(x, y, Penalty::L1, lambda));
    }
    let n = x.n_rows();
    let p = x.n_cols();
    let rate = y.iter().filter(|&&v| v).count() as f64 / n as f64;

    // current iterate, previous iterate, extrapolated point
    let mut b0 = logit_of(rate);
    let mut beta = vec![0.0; p];
    let mut prev_b0 = b0;
    let mut prev_beta = beta.clone();
    let mut momentum = 1.0f64;

    let mut eta = vec![0.0; n];
    let mut eta_new = vec![0.0; n];
    let mut g = vec![0.0; p];
    let mut g0 = 0.0;
    let mut z = vec![0.0; p];
    let mut step = 1.0f64;

    linear(x, b0, &beta, &mut eta);
    let mut obj = mean_nll(&eta, y) + penalty_value(&beta, Penalty::L1, lambda);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < L1_MAX_ITER {
        iterations += 1;
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let w = (momentum - 1.0) / next_momentum;
        let y0 = b0 + w * (b0 - prev_b0);
        let yb: Vec<f64> = beta
            .iter()
            .zip(&prev_beta)
            .map(|(b, pb)| b + w * (b - pb))
            .collect();

        linear(x, y0, &yb, &mut eta);
        let f_y = mean_nll(&eta, y);
        nll_gradient(x, y, &eta, &mut g0, &mut g);

        // backtracking on the quadratic upper bound at the extrapolated point,
        // starting from a slightly longer step than last time
        step = (step * 1.5).min(1e6);
        let (new_b0, f_new) = loop {
            let cand_b0 = y0 - step * g0;
            for j in 0..p {
                z[j] = soft_threshold(yb[j] - step * g[j], step * lambda);
            }
            linear(x, cand_b0, &z, &mut eta_new);
            let f_z = mean_nll(&eta_new, y);
            let mut lin = (cand_b0 - y0) * g0;
            let mut sq = (cand_b0 - y0) * (cand_b0 - y0);
            for j in 0..p {
                let d = z[j] - yb[j];
                lin += d * g[j];
                sq += d * d;
            }
            if f_z <= f_y + lin + sq / (2.0 * step) + 1e-15 * f_y.abs() || step < 1e-20 {
                break (cand_b0, f_z);
            }
            step *= 0.5;
        };
        if !f_new.is_finite() {
            return Err(MspiError::Numeric(format!(
                "lasso-logit objective non-finite at iteration {iterations}"
            )));
        }
        let obj_new = f_new + penalty_value(&z, Penalty::L1, lambda);

        // optimality residual of the proximal step
        let mut residual = ((y0 - new_b0) / step).abs();
        for j in 0..p {
            residual = residual.max(((yb[j] - z[j]) / step).abs());
        }

        // restart momentum when the step points against the last move
        let mut along = (y0 - new_b0) * (new_b0 - b0);
        for j in 0..p {
            along += (yb[j] - z[j]) * (z[j] - beta[j]);
        }
        let decrease = obj - obj_new;
        prev_b0 = b0;
        prev_beta.copy_from_slice(&beta);
        b0 = new_b0;
        beta.copy_from_slice(&z);
        obj = obj_new;
        momentum = if along > 0.0 { 1.0 } else { next_momentum };

        if decrease.abs() < L1_DECREASE_TOL && residual < L1_RESIDUAL_TOL {
            converged = true;
            break;
        }
    }

    Ok(LogitModel {
        intercept: b0,
        coef: beta,
        penalty: Penalty::L1,
        lambda,
        diagnostics: FitDiagnostics {
            iterations,
            objective: obj,
            converged,
            base_rate_fallback: false,
        },
    })
}

/// Ridge-logit fit on (already standardized) rows.
pub fn fit_logit_l2(x: &Matrix, y: &[bool], lambda: f64) -> Result<LogitModel> {
    check_targets(x, y)?;
    if !both_classes(y) {
        validate_lambda(lambda)?;
        return Ok(base_rate_model(x, y, Penalty::L2, lambda));
    }
    let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    fit_logit_l2_from(x, y, lambda, logit_of(rate), &vec![0.0; x.n_cols()])
}

/// Ridge-logit fit started from a given point. Single-class targets are an
/// error here rather than a fallback.
pub fn fit_logit_l2_from(
    x: &Matrix,
    y: &[bool],
    lambda: f64,
    init_intercept: f64,
    init_coef: &[f64],
) -> Result<LogitModel> {
    check_targets(x, y)?;
    validate_lambda(lambda)?;
    if !both_classes(y) {
        return Err(MspiError::SingleClass("ridge-logit training targets"));
    }
    if init_coef.len() != x.n_cols() {
        return Err(MspiError::DimensionMismatch {
            expected: x.n_cols(),
            got: init_coef.len(),
        });
    }
    let n = x.n_rows();
    let p = x.n_cols();
    let k = p + 1;
    let nf = n as f64;

    let mut theta = DVector::from_fn(k, |i, _| {
        if i == 0 {
            init_intercept
        } else {
            init_coef[i - 1]
        }
    });
    let objective = |t: &DVector<f64>| {
        let beta: Vec<f64> = t.iter().skip(1).copied().collect();
        logit_objective(x, y, t[0], &beta, Penalty::L2, lambda)
    };
    let mut obj = objective(&theta);
    let mut iterations = 0;
    let mut converged = false;
    let mut eta = vec![0.0; n];

    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let beta: Vec<f64> = theta.iter().skip(1).copied().collect();
        linear(x, theta[0], &beta, &mut eta);
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        let mut row = vec![0.0; k];
        for i in 0..n {
            let pi = logistic(eta[i]);
            let r = pi - f64::from(u8::from(y[i]));
            let w = pi * (1.0 - pi);
            row[0] = 1.0;
            row[1..].copy_from_slice(x.row(i));
            for a in 0..k {
                grad[a] += r * row[a];
                for b in 0..=a {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        grad /= nf;
        hess /= nf;
        for a in 0..k {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        for j in 1..k {
            grad[j] += 2.0 * lambda * theta[j];
            hess[(j, j)] += 2.0 * lambda;
        }
        if grad.amax() < NEWTON_TOL {
            converged = true;
            break;
        }
        let direction = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess
                .clone()
                .lu()
                .solve(&grad)
                .ok_or_else(|| MspiError::Numeric("singular logit Hessian".into()))?,
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta - t * &direction;
            let c = objective(&cand);
            if c.is_finite() && c <= obj + 1e-4 * t * (-grad.dot(&direction)).min(0.0) {
                accepted = Some((cand, c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, c)) = accepted else {
            converged = grad.amax() < 1e-9;
            break;
        };
        let moved = (&cand - &theta).amax();
        theta = cand;
        obj = c;
        if !obj.is_finite() {
            return Err(MspiError::Numeric(format!(
                "logit objective non-finite at Newton iteration {iterations}"
            )));
        }
        if moved < NEWTON_TOL {
            converged = true;
            break;
        }
    }

    Ok(LogitModel {
        intercept: theta[0],
        coef: theta.iter().skip(1).copied().collect(),
        penalty: Penalty::L2,
        lambda,
        diagnostics: FitDiagnostics {
            iterations,
            objective: obj,
            converged,
            base_rate_fallback: false,
        },
    })
}

impl LogitModel {
    pub fn linear_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(MspiError::DimensionMismatch {
                expected: self.coef.len(),
                got: x.len(),
            });
        }
        Ok(self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn n_nonzero(&self) -> usize {
        self.coef.iter().filter(|c| **c != 0.0).count()
    }
}

/// `Λ(β₀ + x·β)`, clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_proba(model: &LogitModel, x: &[f64]) -> Result<f64> {
    model.linear_score(x).map(|z| clamp_prob(logistic(z)))
}

/// A logit model together with the standardization of its training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledLogit {
    pub scaler: StandardizationParams,
    pub model: LogitModel,
}

impl ScaledLogit {
    pub fn fit(x: &Matrix, y: &[bool], penalty: Penalty, lambda: f64) -> Result<ScaledLogit> {
        check_targets(x, y)?;
        let scaler = super::standardize_fit(x)?;
        let z = scaler.apply_matrix(x)?;
        let model = match penalty {
            Penalty::L1 => fit_logit_l1(&z, y, lambda)?,
            Penalty::L2 => fit_logit_l2(&z, y, lambda)?,
        };
        Ok(ScaledLogit { scaler, model })
    }

    /// Linear predictor on raw (unstandardized) features.
    pub fn raw_score(&self, x: &[f64]) -> Result<f64> {
        let z = self.scaler.apply(x)?;
        self.model.linear_score(&z)
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        let z = self.scaler.apply(x)?;
        predict_proba(&self.model, &z)
    }
}
