use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowParams, Presorted};
use super::{both_classes, check_targets, Matrix, Tree};
use crate::error::{MspiError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Turning this off trains every tree on the full sample.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            max_depth: Some(8),
            min_leaf: 5,
            mtry: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(MspiError::config("forest.n_trees", "must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(MspiError::config("forest.min_leaf", "must be at least 1"));
        }
        if self.mtry == Some(0) {
            return Err(MspiError::config("forest.mtry", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub mtry: usize,
    pub seed: u64,
    pub params: ForestParams,
    /// Leaves hold the stress frequency of the training rows reaching them.
    pub trees: Vec<Tree>,
}

pub fn fit_random_forest(
    x: &Matrix,
    y: &[bool],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    check_targets(x, y)?;
    params.validate()?;
    if !both_classes(y) {
        return Err(MspiError::SingleClass("random-forest training targets"));
    }
    let n = x.n_rows();
    let p = x.n_cols();
    let mtry = params
        .mtry
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p.max(1));
    let target: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
    let pre = Presorted::new(x);
    let grow_params = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf as f64,
        mtry,
    };

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, &[b as u64]);
            let mut weight = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    weight[r.gen_range(0..n)] += 1.0;
                }
            } else {
                weight.iter_mut().for_each(|w| *w = 1.0);
            }
            let leaf = |rows: &[usize]| {
                let (mut w, mut s) = (0.0, 0.0);
                for &i in rows {
                    w += weight[i];
                    s += weight[i] * target[i];
                }
                s / w
            };
            grow(x, &pre, &target, &weight, grow_params, &mut r, leaf)
        })
        .collect();

    Ok(ForestModel {
        n_features: p,
        mtry,
        seed,
        params: params.clone(),
        trees,
    })
}

/// Average of the tree votes, in `[0, 1]`.
pub fn rf_score(model: &ForestModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features {
        return Err(MspiError::DimensionMismatch {
            expected: model.n_features,
            got: x.len(),
        });
    }
    let s: f64 = model.trees.iter().map(|t| t.predict(x)).sum();
    Ok(s / model.trees.len() as f64)
}
