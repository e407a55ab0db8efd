//! Moving-block bootstrap of metric differences between two models.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auc, brier, ece, log_loss, pr_auc, DEFAULT_ECE_BINS};
use crate::backtest::{ForecastSeries, ModelKind};
use crate::error::{MspiError, Result};
use crate::labels::quantile_linear;

/// Draws allowed for one replication before giving up.
const MAX_DRAWS_PER_REP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    PrAuc,
    Brier,
    LogLoss,
    Ece,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Auc,
        Metric::PrAuc,
        Metric::Brier,
        Metric::LogLoss,
        Metric::Ece,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::PrAuc => "PR-AUC",
            Metric::Brier => "Brier",
            Metric::LogLoss => "LogLoss",
            Metric::Ece => "ECE",
        }
    }

    /// `None` when the metric is undefined on this sample.
    pub fn eval(self, s: &ScoredSeries, y: &[bool]) -> Result<Option<f64>> {
        let r = match self {
            Metric::Auc => auc(&s.raw, y),
            Metric::PrAuc => pr_auc(&s.raw, y),
            Metric::Brier => brier(&s.prob, y),
            Metric::LogLoss => log_loss(&s.prob, y),
            Metric::Ece => ece(&s.prob, y, DEFAULT_ECE_BINS).map(|e| e.ece),
        };
        match r {
            Ok(v) => Ok(Some(v)),
            Err(MspiError::UndefinedMetric(..)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One model's month-aligned raw scores and probabilities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredSeries {
    pub raw: Vec<f64>,
    pub prob: Vec<f64>,
}

impl ScoredSeries {
    fn resample(&self, idx: &[usize]) -> ScoredSeries {
        ScoredSeries {
            raw: idx.iter().map(|&i| self.raw[i]).collect(),
            prob: idx.iter().map(|&i| self.prob[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub block_len: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            block_len: 12,
            reps: 2000,
            seed: 7,
        }
    }
}

impl BootstrapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(MspiError::config("bootstrap.block_len", "must be at least 1"));
        }
        if self.reps == 0 {
            return Err(MspiError::config("bootstrap.reps", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCell {
    pub metric: Metric,
    pub model: ModelKind,
    pub benchmark: ModelKind,
    /// Mean over replications of `metric(model) - metric(benchmark)`.
    pub delta: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTable {
    pub block_len: usize,
    pub reps: usize,
    pub seed: u64,
    pub n_months: usize,
    pub benchmark: ModelKind,
    pub rows: Vec<BootstrapCell>,
}

/// Month indices of one replication: `ceil(N / L)` blocks with uniform
/// starts in `[0, N - L]`, concatenated and cut to `N`.
fn draw_indices(rng: &mut ChaCha8Rng, n: usize, block_len: usize) -> Vec<usize> {
    let blocks = n.div_ceil(block_len);
    let mut idx = Vec::with_capacity(blocks * block_len);
    for _ in 0..blocks {
        let s = rng.gen_range(0..=n - block_len);
        idx.extend(s..s + block_len);
    }
    idx.truncate(n);
    idx
}

struct Rep {
    delta: f64,
    redraws: usize,
}

/// Block-bootstrap distribution of `metric(a) - metric(b)` on shared outcomes.
///
/// Returns `(delta, ci_lo, ci_hi, p_value, redraws)` packed in a cell whose
/// model labels are filled by the caller.
pub fn block_bootstrap_diff(
    a: &ScoredSeries,
    b: &ScoredSeries,
    y: &[bool],
    metric: Metric,
    opts: &BootstrapOptions,
) -> Result<(f64, f64, f64, f64, usize)> {
    opts.validate()?;
    let n = y.len();
    for s in [a, b] {
        if s.raw.len() != n || s.prob.len() != n {
            return Err(MspiError::DimensionMismatch {
                expected: n,
                got: s.raw.len().min(s.prob.len()),
            });
        }
    }
    if n < opts.block_len {
        return Err(MspiError::InsufficientHistory {
            needed: opts.block_len,
            have: n,
        });
    }

    let reps: Vec<Rep> = (0..opts.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            for redraws in 0..MAX_DRAWS_PER_REP {
                let idx = draw_indices(&mut rng, n, opts.block_len);
                let yy: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
                let ma = metric.eval(&a.resample(&idx), &yy)?;
                let mb = metric.eval(&b.resample(&idx), &yy)?;
                if let (Some(ma), Some(mb)) = (ma, mb) {
                    return Ok(Rep {
                        delta: ma - mb,
                        redraws,
                    });
                }
            }
            Err(MspiError::UndefinedMetric(
                metric.label(),
                "no defined resample within the redraw limit",
            ))
        })
        .collect::<Result<_>>()?;

    let redraws: usize = reps.iter().map(|r| r.redraws).sum();
    if redraws * 2 > opts.reps {
        return Err(MspiError::UndefinedMetric(
            metric.label(),
            "more than half of the bootstrap draws were single-class; outcome too rare for this block length",
        ));
    }
    let deltas: Vec<f64> = reps.iter().map(|r| r.delta).collect();
    let k = deltas.len() as f64;
    let delta = deltas.iter().sum::<f64>() / k;
    let lo = quantile_linear(&deltas, 0.025).unwrap_or(delta);
    let hi = quantile_linear(&deltas, 0.975).unwrap_or(delta);
    let le = deltas.iter().filter(|&&d| d <= 0.0).count() as f64 / k;
    let ge = deltas.iter().filter(|&&d| d >= 0.0).count() as f64 / k;
    let p = (2.0 * le.min(ge)).min(1.0);
    Ok((delta, lo, hi, p, redraws))
}

/// Every metric for every model against `benchmark`.
pub fn bootstrap_table(
    series: &ForecastSeries,
    benchmark: ModelKind,
    opts: &BootstrapOptions,
) -> Result<BootstrapTable> {
    let (y, scored): (Vec<bool>, BTreeMap<ModelKind, ScoredSeries>) = super::scored_series(series)?;
    let bench = scored.get(&benchmark).ok_or_else(|| {
        MspiError::config("bootstrap.benchmark", format!("no forecasts for model {benchmark}"))
    })?;
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        for (model, s) in &scored {
            if *model == benchmark {
                continue;
            }
            let (delta, ci_lo, ci_hi, p_value, redraws) =
                block_bootstrap_diff(s, bench, &y, metric, opts)?;
            rows.push(BootstrapCell {
                metric,
                model: *model,
                benchmark,
                delta,
                ci_lo,
                ci_hi,
                p_value,
                redraws,
            });
        }
    }
    Ok(BootstrapTable {
        block_len: opts.block_len,
        reps: opts.reps,
        seed: opts.seed,
        n_months: y.len(),
        benchmark,
        rows,
    })
}
