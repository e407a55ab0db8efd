use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::{ForecastSeries, ModelKind};
use crate::error::{MspiError, Result};
use crate::io;

pub const DEFAULT_BIN_EDGES: [f64; 6] = [0.0, 0.05, 0.10, 0.20, 0.40, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean_prob: Option<f64>,
    pub stress_rate: Option<f64>,
    pub mean_next_vol: Option<f64>,
    pub mean_next_ret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedOutcomes {
    pub model: ModelKind,
    pub edges: Vec<f64>,
    pub bins: Vec<OutcomeBin>,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2
        || edges[0] != 0.0
        || edges[edges.len() - 1] != 1.0
        || edges.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(MspiError::config(
            "bin_edges",
            "must be strictly increasing from 0 to 1",
        ));
    }
    Ok(())
}

/// Index of the bin holding `p`: `[lo, hi)` except the last, which is closed.
fn bin_of(edges: &[f64], p: f64) -> usize {
    let k = edges.partition_point(|&e| e <= p);
    (k - 1).min(edges.len() - 2)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Next-month outcomes grouped by the forecast probability of `model`, over
/// the months whose outcome is observed.
pub fn binned_outcomes(
    series: &ForecastSeries,
    model: ModelKind,
    edges: &[f64],
) -> Result<BinnedOutcomes> {
    check_edges(edges)?;
    let nb = edges.len() - 1;
    let mut probs = vec![Vec::new(); nb];
    let mut stress = vec![Vec::new(); nb];
    let mut vols = vec![Vec::new(); nb];
    let mut rets = vec![Vec::new(); nb];
    for r in series.for_model(model) {
        let Some(y) = r.y_next else { continue };
        if !(0.0..=1.0).contains(&r.probability) {
            return Err(MspiError::Numeric(format!(
                "{} probability {} outside [0, 1] in {}",
                model, r.probability, r.month
            )));
        }
        let b = bin_of(edges, r.probability);
        probs[b].push(r.probability);
        stress[b].push(f64::from(u8::from(y)));
        if let Some(v) = r.next_vol {
            vols[b].push(v);
        }
        if let Some(v) = r.next_ret {
            rets[b].push(v);
        }
    }
    let bins = (0..nb)
        .map(|b| OutcomeBin {
            lo: edges[b],
            hi: edges[b + 1],
            n: probs[b].len(),
            mean_prob: mean(&probs[b]),
            stress_rate: mean(&stress[b]),
            mean_next_vol: mean(&vols[b]),
            mean_next_ret: mean(&rets[b]),
        })
        .collect();
    Ok(BinnedOutcomes {
        model,
        edges: edges.to_vec(),
        bins,
    })
}

impl BinnedOutcomes {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.n).sum()
    }

    /// Stress rates of the non-empty bins never decrease.
    pub fn stress_rate_weakly_increasing(&self) -> bool {
        let rates: Vec<f64> = self.bins.iter().filter_map(|b| b.stress_rate).collect();
        rates.windows(2).all(|w| w[0] <= w[1])
    }
}

pub const BIN_COLUMNS: [&str; 8] = [
    "model",
    "bin_lo",
    "bin_hi",
    "n",
    "mean_prob",
    "stress_rate",
    "mean_next_vol",
    "mean_next_ret",
];

pub fn write_bins_csv(path: &Path, tables: &[BinnedOutcomes], comment: Option<&str>) -> Result<()> {
    let mut w = io::create_csv(path, comment)?;
    w.write_record(BIN_COLUMNS)
        .map_err(|e| io::write_err(path, e))?;
    for t in tables {
        for b in &t.bins {
            w.write_record([
                t.model.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.n.to_string(),
                io::fmt_opt(b.mean_prob),
                io::fmt_opt(b.stress_rate),
                io::fmt_opt(b.mean_next_vol),
                io::fmt_opt(b.mean_next_ret),
            ])
            .map_err(|e| io::write_err(path, e))?;
        }
    }
    io::finish_csv(path, w)
}
