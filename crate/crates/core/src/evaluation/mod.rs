//! Forecast scoring: discrimination, probability accuracy, calibration
//! curves, outcome bins and block-bootstrap comparisons.
//!
//! AUC and PR-AUC take raw scores. Brier, log loss and ECE take probabilities.

mod bins;
mod bootstrap;

pub use bins::{binned_outcomes, write_bins_csv, BinnedOutcomes, OutcomeBin, DEFAULT_BIN_EDGES};
pub use bootstrap::{
    block_bootstrap_diff, bootstrap_table, BootstrapCell, BootstrapOptions, BootstrapTable,
    Metric, ScoredSeries,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::{ForecastSeries, ModelKind};
use crate::error::{MspiError, Result};
use crate::io;
use crate::learners::PROB_CLAMP;

pub const DEFAULT_ECE_BINS: usize = 10;

fn check_len(a: &[f64], y: &[bool]) -> Result<()> {
    if a.len() != y.len() {
        return Err(MspiError::DimensionMismatch {
            expected: a.len(),
            got: y.len(),
        });
    }
    if a.is_empty() {
        return Err(MspiError::EmptySeries("no scored months".into()));
    }
    Ok(())
}

fn counts(y: &[bool]) -> (usize, usize) {
    let pos = y.iter().filter(|&&v| v).count();
    (pos, y.len() - pos)
}

/// Indices grouped by equal score, highest score first.
fn descending_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auc(scores: &[f64], y: &[bool]) -> Result<f64> {
    check_len(scores, y)?;
    let (pos, neg) = counts(y);
    if pos == 0 || neg == 0 {
        return Err(MspiError::UndefinedMetric("AUC", "outcomes have a single class"));
    }
    // sum of midranks of the positives, ascending order
    let groups = descending_groups(scores);
    let mut rank_sum = 0.0;
    let mut above = scores.len();
    for g in &groups {
        let lo = above - g.len() + 1;
        let mid = (lo + above) as f64 / 2.0;
        rank_sum += mid * g.iter().filter(|&&i| y[i]).count() as f64;
        above -= g.len();
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision with tied scores pooled into one step.
pub fn pr_auc(scores: &[f64], y: &[bool]) -> Result<f64> {
    check_len(scores, y)?;
    let (pos, _) = counts(y);
    if pos == 0 {
        return Err(MspiError::UndefinedMetric("PR-AUC", "no positive outcomes"));
    }
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = 0.0;
    for g in descending_groups(scores) {
        let hits = g.iter().filter(|&&i| y[i]).count();
        tp += hits;
        seen += g.len();
        if hits > 0 {
            ap += hits as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap / pos as f64)
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MspiError::Numeric(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn brier(probs: &[f64], y: &[bool]) -> Result<f64> {
    check_len(probs, y)?;
    check_probs(probs)?;
    Ok(probs
        .iter()
        .zip(y)
        .map(|(&p, &v)| {
            let d = p - f64::from(u8::from(v));
            d * d
        })
        .sum::<f64>()
        / probs.len() as f64)
}

pub fn log_loss(probs: &[f64], y: &[bool]) -> Result<f64> {
    check_len(probs, y)?;
    check_probs(probs)?;
    Ok(probs
        .iter()
        .zip(y)
        .map(|(&p, &v)| {
            let p = clamp(p);
            if v {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_prob: f64,
    pub event_rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceResult {
    pub ece: f64,
    pub bins: Vec<CalibrationBin>,
}

/// ECE of already-built calibration bins.
pub fn ece_from_bins(bins: &[CalibrationBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .map(|b| b.count as f64 * (b.mean_prob - b.event_rate).abs())
        .sum::<f64>()
        / n as f64
}

/// Expected calibration error over equal-count bins of the sorted
/// probabilities. When `N` is not a multiple of `n_bins` the lowest bins get
/// one extra point each.
pub fn ece(probs: &[f64], y: &[bool], n_bins: usize) -> Result<EceResult> {
    check_len(probs, y)?;
    check_probs(probs)?;
    if n_bins == 0 || probs.len() < n_bins {
        return Err(MspiError::UndefinedMetric(
            "ECE",
            "fewer observations than bins",
        ));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let base = probs.len() / n_bins;
    let extra = probs.len() % n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let len = base + usize::from(b < extra);
        let members = &idx[start..start + len];
        start += len;
        let mean_prob = members.iter().map(|&i| probs[i]).sum::<f64>() / len as f64;
        let event_rate = members.iter().filter(|&&i| y[i]).count() as f64 / len as f64;
        bins.push(CalibrationBin {
            mean_prob,
            event_rate,
            count: len,
        });
    }
    Ok(EceResult {
        ece: ece_from_bins(&bins),
        bins,
    })
}

/// ROC points `(FPR, TPR)`, one per distinct score from the top, starting at
/// the origin.
pub fn roc_points(scores: &[f64], y: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_len(scores, y)?;
    let (pos, neg) = counts(y);
    if pos == 0 || neg == 0 {
        return Err(MspiError::UndefinedMetric("ROC", "outcomes have a single class"));
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in descending_groups(scores) {
        let hits = g.iter().filter(|&&i| y[i]).count();
        tp += hits;
        fp += g.len() - hits;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Precision-recall points `(recall, precision)` starting at `(0, 1)`.
pub fn pr_points(scores: &[f64], y: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_len(scores, y)?;
    let (pos, neg) = counts(y);
    if pos == 0 || neg == 0 {
        return Err(MspiError::UndefinedMetric("PR curve", "outcomes have a single class"));
    }
    let mut pts = vec![(0.0, 1.0)];
    let (mut tp, mut seen) = (0usize, 0usize);
    for g in descending_groups(scores) {
        tp += g.iter().filter(|&&i| y[i]).count();
        seen += g.len();
        pts.push((tp as f64 / pos as f64, tp as f64 / seen as f64));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub auc: f64,
    pub pr_auc: f64,
    pub brier: f64,
    pub log_loss: f64,
    pub ece: f64,
    pub mean_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub event_rate: f64,
    pub ece_bins: usize,
    pub first_month: String,
    pub last_month: String,
    pub models: BTreeMap<ModelKind, ModelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub roc: Vec<(f64, f64)>,
    pub pr: Vec<(f64, f64)>,
    pub calibration: Vec<CalibrationBin>,
}

/// Per-model raw scores, probabilities and shared outcomes over the months
/// where the outcome is observed.
pub fn scored_series(series: &ForecastSeries) -> Result<(Vec<bool>, BTreeMap<ModelKind, ScoredSeries>)> {
    let models = series.models();
    if models.is_empty() {
        return Err(MspiError::EmptySeries("forecast series has no records".into()));
    }
    let mut y: Option<Vec<bool>> = None;
    let mut months_ref = None;
    let mut out = BTreeMap::new();
    for m in models {
        let recs: Vec<_> = series
            .for_model(m)
            .into_iter()
            .filter(|r| r.y_next.is_some())
            .collect();
        let months: Vec<_> = recs.iter().map(|r| r.month).collect();
        let ys: Vec<bool> = recs.iter().map(|r| r.y_next.unwrap_or(false)).collect();
        match (&months_ref, &y) {
            (Some(mr), Some(yr)) => {
                if *mr != months || *yr != ys {
                    return Err(MspiError::Alignment(format!(
                        "model {m} is not aligned with the other models"
                    )));
                }
            }
            _ => {
                months_ref = Some(months);
                y = Some(ys);
            }
        }
        out.insert(
            m,
            ScoredSeries {
                raw: recs.iter().map(|r| r.raw_score).collect(),
                prob: recs.iter().map(|r| r.probability).collect(),
            },
        );
    }
    let y = y.unwrap_or_default();
    if y.is_empty() {
        return Err(MspiError::EmptySeries("no forecast month has an observed outcome".into()));
    }
    Ok((y, out))
}

/// Per-model metrics plus the curve sets behind them.
pub fn evaluate(
    series: &ForecastSeries,
    n_bins: usize,
) -> Result<(MetricsReport, BTreeMap<ModelKind, CurveSet>)> {
    let (y, scored) = scored_series(series)?;
    let months: Vec<_> = series
        .records
        .iter()
        .filter(|r| r.y_next.is_some())
        .map(|r| r.month)
        .collect();
    let mut models = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for (m, s) in &scored {
        let e = ece(&s.prob, &y, n_bins)?;
        models.insert(
            *m,
            ModelMetrics {
                auc: auc(&s.raw, &y)?,
                pr_auc: pr_auc(&s.raw, &y)?,
                brier: brier(&s.prob, &y)?,
                log_loss: log_loss(&s.prob, &y)?,
                ece: e.ece,
                mean_prob: s.prob.iter().sum::<f64>() / y.len() as f64,
            },
        );
        curves.insert(
            *m,
            CurveSet {
                roc: roc_points(&s.raw, &y)?,
                pr: pr_points(&s.raw, &y)?,
                calibration: e.bins,
            },
        );
    }
    let report = MetricsReport {
        n: y.len(),
        event_rate: y.iter().filter(|&&v| v).count() as f64 / y.len() as f64,
        ece_bins: n_bins,
        first_month: months.first().map(|m| m.to_string()).unwrap_or_default(),
        last_month: months.last().map(|m| m.to_string()).unwrap_or_default(),
        models,
    };
    Ok((report, curves))
}

pub const CURVE_COLUMNS: [&str; 6] = ["model", "curve", "index", "x", "y", "count"];

/// Long format: ROC rows are (FPR, TPR), PR rows (recall, precision),
/// calibration rows (mean probability, event rate, bin count).
pub fn write_curves_csv(
    path: &Path,
    curves: &BTreeMap<ModelKind, CurveSet>,
    comment: Option<&str>,
) -> Result<()> {
    let mut w = io::create_csv(path, comment)?;
    w.write_record(CURVE_COLUMNS)
        .map_err(|e| io::write_err(path, e))?;
    for (m, c) in curves {
        let rows = c
            .roc
            .iter()
            .map(|&(x, y)| ("roc", x, y, String::new()))
            .chain(c.pr.iter().map(|&(x, y)| ("pr", x, y, String::new())))
            .chain(
                c.calibration
                    .iter()
                    .map(|b| ("calibration", b.mean_prob, b.event_rate, b.count.to_string())),
            );
        let mut last = "";
        let mut k = 0;
        for (curve, x, y, count) in rows {
            if curve != last {
                k = 0;
                last = curve;
            }
            w.write_record([
                m.to_string(),
                curve.to_string(),
                k.to_string(),
                x.to_string(),
                y.to_string(),
                count,
            ])
            .map_err(|e| io::write_err(path, e))?;
            k += 1;
        }
    }
    io::finish_csv(path, w)
}
