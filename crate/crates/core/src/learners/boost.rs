//! Gradient-boosted trees for the Bernoulli log-likelihood.
//!
//! Each stage fits a regression tree to the residuals `y - p` and fills its
//! leaves with a one-step Newton estimate `sum(r) / sum(p (1 - p))`. The stage
//! is added with step `ν`, halved while it would raise the training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logit::logistic;
use super::tree::{grow, GrowParams, Presorted};
use super::{both_classes, check_targets, Matrix, Tree};
use crate::error::{MspiError, Result};

const MAX_HALVINGS: usize = 20;
const MAX_LEAF_STEP: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_stages: 100,
            learning_rate: 0.1,
            max_depth: 2,
            min_leaf: 5,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(MspiError::config("boost.learning_rate", "must lie in [0, 1]"));
        }
        if self.max_depth == 0 {
            return Err(MspiError::config("boost.max_depth", "must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(MspiError::config("boost.min_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub tree: Tree,
    /// Multiplier applied to the tree output; `ν` unless halved.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub n_features: usize,
    pub f0: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub stages: Vec<Stage>,
    /// Mean training log loss after `F0` and after each stage.
    pub train_loss: Vec<f64>,
}

fn mean_log_loss(f: &[f64], y: &[bool]) -> f64 {
    f.iter()
        .zip(y)
        .map(|(&z, &yi)| {
            let s = if yi { -z } else { z };
            // log(1 + e^s)
            if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            }
        })
        .sum::<f64>()
        / f.len() as f64
}

pub fn fit_gradient_boosting(x: &Matrix, y: &[bool], params: &BoostParams) -> Result<BoostModel> {
    check_targets(x, y)?;
    params.validate()?;
    if !both_classes(y) {
        return Err(MspiError::SingleClass("gradient-boosting training targets"));
    }
    let n = x.n_rows();
    let rate = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let f0 = (rate / (1.0 - rate)).ln();
    let mut f = vec![f0; n];
    let mut loss = mean_log_loss(&f, y);
    let mut model = BoostModel {
        n_features: x.n_cols(),
        f0,
        learning_rate: params.learning_rate,
        max_depth: params.max_depth,
        stages: Vec::new(),
        train_loss: vec![loss],
    };
    if params.learning_rate == 0.0 {
        return Ok(model);
    }

    let pre = Presorted::new(x);
    let weight = vec![1.0; n];
    let grow_params = GrowParams {
        max_depth: Some(params.max_depth),
        min_leaf: params.min_leaf as f64,
        mtry: x.n_cols(),
    };
    // all features are tried at every node, so this stream is never drawn from
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut prob = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut cand = vec![0.0; n];

    for m in 1..=params.n_stages {
        for i in 0..n {
            prob[i] = logistic(f[i]);
            resid[i] = f64::from(u8::from(y[i])) - prob[i];
        }
        let leaf = |rows: &[usize]| {
            let (mut num, mut den) = (0.0, 0.0);
            for &i in rows {
                num += resid[i];
                den += prob[i] * (1.0 - prob[i]);
            }
            if den <= 0.0 {
                0.0
            } else {
                (num / den).clamp(-MAX_LEAF_STEP, MAX_LEAF_STEP)
            }
        };
        let tree = grow(x, &pre, &resid, &weight, grow_params, &mut unused, leaf);
        for (o, r) in out.iter_mut().zip(x.rows()) {
            *o = tree.predict(r);
        }

        let mut step = params.learning_rate;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..n {
                cand[i] = f[i] + step * out[i];
            }
            let c = mean_log_loss(&cand, y);
            if !c.is_finite() {
                return Err(MspiError::Numeric(format!(
                    "boosting training loss non-finite at stage {m}"
                )));
            }
            if c <= loss {
                accepted = Some(c);
                break;
            }
            step *= 0.5;
        }
        let step = if let Some(c) = accepted {
            f.copy_from_slice(&cand);
            loss = c;
            step
        } else {
            0.0
        };
        model.stages.push(Stage { tree, step });
        model.train_loss.push(loss);
    }
    Ok(model)
}

impl BoostModel {
    /// The same model stopped after its first `m` stages.
    pub fn truncated(&self, m: usize) -> BoostModel {
        let m = m.min(self.stages.len());
        BoostModel {
            stages: self.stages[..m].to_vec(),
            train_loss: self.train_loss[..=m].to_vec(),
            ..self.clone()
        }
    }
}

/// `F_M(x)`, on the log-odds scale.
pub fn gb_score(model: &BoostModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features {
        return Err(MspiError::DimensionMismatch {
            expected: model.n_features,
            got: x.len(),
        });
    }
    Ok(model
        .stages
        .iter()
        .fold(model.f0, |acc, s| acc + s.step * s.tree.predict(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Matrix, Vec<bool>) {
        let rows: Vec<[f64; 1]> = (0..40).map(|i| [i as f64 / 4.0]).collect();
        let y = (0..40).map(|i| i >= 25).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn zero_stages_is_base_rate() {
        let (x, y) = separable();
        let params = BoostParams {
            n_stages: 0,
            ..BoostParams::default()
        };
        let m = fit_gradient_boosting(&x, &y, &params).unwrap();
        let want = (15.0f64 / 25.0).ln();
        assert!((gb_score(&m, &[3.0]).unwrap() - want).abs() < 1e-15);
        let frozen = BoostParams {
            learning_rate: 0.0,
            ..BoostParams::default()
        };
        let z = fit_gradient_boosting(&x, &y, &frozen).unwrap();
        assert_eq!(z.stages, m.stages);
        assert_eq!(z.f0, m.f0);
    }

    #[test]
    fn separable_loss_goes_to_zero_monotonically() {
        let (x, y) = separable();
        let params = BoostParams {
            n_stages: 100,
            learning_rate: 0.1,
            max_depth: 1,
            min_leaf: 1,
        };
        let m = fit_gradient_boosting(&x, &y, &params).unwrap();
        assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0]));
        assert!(*m.train_loss.last().unwrap() < 0.05);
        assert!(m.stages.iter().all(|s| s.tree.depth() <= 1));
    }

    #[test]
    fn bad_learning_rate() {
        let (x, y) = separable();
        let params = BoostParams {
            learning_rate: 1.5,
            ..BoostParams::default()
        };
        assert!(matches!(
            fit_gradient_boosting(&x, &y, &params),
            Err(MspiError::InvalidConfig { .. })
        ));
    }
}
