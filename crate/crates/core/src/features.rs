//! Cross-sectional fragility signals.
//!
//! Every trading day yields one [`DailyCrossSectionStats`] row computed over
//! the eligible stocks of that day: population moments of returns (divide by
//! `N_d`), extreme-return shares with weak inequalities, and three
//! trading-intensity averages. Monthly features are plain means of the daily
//! rows over the month's trading days.
//!
//! Accumulation always runs in security-id order, so the statistics of a day
//! do not depend on the order the observations arrive in.

use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};
use crate::io;
use crate::panel::{DailyObservation, DailyPanel, MonthPartition};

pub const N_FEATURES: usize = 10;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "n_stocks",
    "xs_std",
    "xs_skew",
    "xs_kurt",
    "mean_abs_ret",
    "frac_dn",
    "frac_up",
    "mean_log_vol",
    "mean_dollar_vol",
    "mean_turnover",
];

/// Extreme-return threshold `tau`, a positive decimal return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TailThreshold(f64);

impl TailThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(TailThreshold(tau))
        } else {
            Err(MspiError::config("tau", "must be finite and > 0"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for TailThreshold {
    fn default() -> Self {
        TailThreshold(0.05)
    }
}

impl TryFrom<f64> for TailThreshold {
    type Error = MspiError;
    fn try_from(v: f64) -> Result<Self> {
        TailThreshold::new(v)
    }
}

impl From<TailThreshold> for f64 {
    fn from(t: TailThreshold) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyCrossSectionStats {
    pub date: NaiveDate,
    pub n_stocks: usize,
    pub xs_mean: f64,
    pub xs_std: f64,
    pub xs_skew: f64,
    pub xs_kurt: f64,
    /// All returns identical: skewness and kurtosis are reported as 0 and
    /// left out of monthly averages.
    pub degenerate: bool,
    pub mean_abs_ret: f64,
    pub frac_dn: f64,
    pub frac_up: f64,
    pub mean_log_vol: Option<f64>,
    pub mean_dollar_vol: Option<f64>,
    pub mean_turnover: Option<f64>,
}

fn mean_of(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Statistics of one day's cross-section.
pub fn cross_section_stats(
    day_obs: &[DailyObservation],
    tau: TailThreshold,
) -> Result<DailyCrossSectionStats> {
    let first = day_obs.first().ok_or_else(|| {
        MspiError::Alignment("cross-section statistics need at least one observation".into())
    })?;
    let date = first.date;
    if day_obs.iter().any(|o| o.date != date) {
        return Err(MspiError::Alignment(format!(
            "observations from more than one date passed for {date}"
        )));
    }

    let sorted = day_obs
        .windows(2)
        .all(|w| w[0].security_id <= w[1].security_id);
    let owned;
    let obs: Vec<&DailyObservation> = if sorted {
        day_obs.iter().collect()
    } else {
        owned = {
            let mut v: Vec<&DailyObservation> = day_obs.iter().collect();
            v.sort_by(|a, b| a.security_id.cmp(&b.security_id).then(a.ret.total_cmp(&b.ret)));
            v
        };
        owned
    };

    let n = obs.len();
    let nf = n as f64;
    let tau = tau.get();

    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    let mut n_dn = 0usize;
    let mut n_up = 0usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for o in &obs {
        let r = o.ret;
        sum += r;
        sum_abs += r.abs();
        n_dn += usize::from(r <= -tau);
        n_up += usize::from(r >= tau);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let mean = sum / nf;

    let degenerate = lo == hi;
    let (std, skew, kurt) = if degenerate {
        (0.0, 0.0, 0.0)
    } else {
        let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
        for o in &obs {
            let d = o.ret - mean;
            let d2 = d * d;
            s2 += d2;
            s3 += d2 * d;
            s4 += d2 * d2;
        }
        let m2 = s2 / nf;
        let m3 = s3 / nf;
        let m4 = s4 / nf;
        let std = m2.sqrt();
        (std, m3 / (m2 * std), m4 / (m2 * m2))
    };

    let (mut log_vol, mut dollar_vol, mut n_vol) = (0.0, 0.0, 0usize);
    let (mut turnover, mut n_turn) = (0.0, 0usize);
    for o in &obs {
        if let Some(v) = o.vol {
            log_vol += v.ln_1p();
            dollar_vol += o.prc.abs() * v;
            n_vol += 1;
            if let Some(s) = o.shrout.filter(|s| *s > 0.0) {
                turnover += v / s;
                n_turn += 1;
            }
        }
    }

    Ok(DailyCrossSectionStats {
        date,
        n_stocks: n,
        xs_mean: mean,
        xs_std: std,
        xs_skew: skew,
        xs_kurt: kurt,
        degenerate,
        mean_abs_ret: sum_abs / nf,
        frac_dn: n_dn as f64 / nf,
        frac_up: n_up as f64 / nf,
        mean_log_vol: mean_of(log_vol, n_vol),
        mean_dollar_vol: mean_of(dollar_vol, n_vol),
        mean_turnover: mean_of(turnover, n_turn),
    })
}

/// Daily statistics for every panel date. Days are independent and computed
/// in parallel; the output is in date order.
pub fn daily_stats(panel: &DailyPanel, tau: TailThreshold) -> Result<Vec<DailyCrossSectionStats>> {
    panel
        .days()
        .par_iter()
        .map(|d| cross_section_stats(&d.observations, tau))
        .collect()
}

/// Monthly predictor matrix, one row per month, columns in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    months: Vec<YearMonth>,
    rows: Vec<[f64; N_FEATURES]>,
}

impl FeatureMatrix {
    pub fn new(months: Vec<YearMonth>, rows: Vec<[f64; N_FEATURES]>) -> Result<Self> {
        if months.len() != rows.len() {
            return Err(MspiError::DimensionMismatch {
                expected: months.len(),
                got: rows.len(),
            });
        }
        if months.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MspiError::Alignment(
                "feature months must be strictly increasing".into(),
            ));
        }
        if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(MspiError::Alignment(format!(
                "non-finite feature value in {}",
                months[i]
            )));
        }
        Ok(FeatureMatrix { months, rows })
    }

    pub fn names(&self) -> &'static [&'static str; N_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn months(&self) -> &[YearMonth] {
        &self.months
    }

    pub fn rows(&self) -> &[[f64; N_FEATURES]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_for(&self, month: YearMonth) -> Option<&[f64; N_FEATURES]> {
        self.months
            .binary_search(&month)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = FEATURE_NAMES.iter().position(|n| *n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn truncated_through(&self, month: YearMonth) -> FeatureMatrix {
        let k = self.months.partition_point(|m| *m <= month);
        FeatureMatrix {
            months: self.months[..k].to_vec(),
            rows: self.rows[..k].to_vec(),
        }
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = io::create_csv(path, comment)?;
        let mut header = vec!["month"];
        header.extend(FEATURE_NAMES);
        w.write_record(&header).map_err(|e| io::write_err(path, e))?;
        for (m, r) in self.months.iter().zip(&self.rows) {
            let mut rec = vec![m.to_string()];
            rec.extend(r.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| io::write_err(path, e))?;
        }
        io::finish_csv(path, w)
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let mut cols = vec!["month"];
        cols.extend(FEATURE_NAMES);
        let mut input = io::open_csv(path, &cols)?;
        let c = input.columns.clone();
        let mut months = Vec::new();
        let mut rows = Vec::new();
        io::for_each_row(&mut input, |row| {
            months.push(row.month(c[0], "month")?);
            let mut r = [0.0; N_FEATURES];
            for (j, name) in FEATURE_NAMES.iter().enumerate() {
                r[j] = row.f64(c[j + 1], name)?;
            }
            rows.push(r);
            Ok(())
        })?;
        FeatureMatrix::new(months, rows)
    }
}

struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn new() -> Self {
        Mean { sum: 0.0, n: 0 }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn push_opt(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.push(v);
        }
    }

    fn finish(&self, feature: &'static str, month: YearMonth) -> Result<f64> {
        mean_of(self.sum, self.n).ok_or(MspiError::DegenerateFeature { feature, month })
    }
}

/// Averages daily statistics within each month of the partition.
pub fn aggregate_monthly(
    daily: &[DailyCrossSectionStats],
    partition: &MonthPartition,
) -> Result<FeatureMatrix> {
    let mut months = Vec::with_capacity(partition.months().len());
    let mut rows = Vec::with_capacity(partition.months().len());
    for bucket in partition.months() {
        let mut acc: [Mean; N_FEATURES] = std::array::from_fn(|_| Mean::new());
        for &date in &bucket.days {
            let s = daily
                .binary_search_by_key(&date, |s| s.date)
                .map(|i| &daily[i])
                .map_err(|_| MspiError::MissingStats(bucket.month, date))?;
            acc[0].push(s.n_stocks as f64);
            acc[1].push(s.xs_std);
            if !s.degenerate {
                acc[2].push(s.xs_skew);
                acc[3].push(s.xs_kurt);
            }
            acc[4].push(s.mean_abs_ret);
            acc[5].push(s.frac_dn);
            acc[6].push(s.frac_up);
            acc[7].push_opt(s.mean_log_vol);
            acc[8].push_opt(s.mean_dollar_vol);
            acc[9].push_opt(s.mean_turnover);
        }
        let mut row = [0.0; N_FEATURES];
        for (j, a) in acc.iter().enumerate() {
            row[j] = a.finish(FEATURE_NAMES[j], bucket.month)?;
        }
        months.push(bucket.month);
        rows.push(row);
    }
    FeatureMatrix::new(months, rows)
}

/// Daily statistics followed by monthly aggregation.
pub fn build_features(
    panel: &DailyPanel,
    partition: &MonthPartition,
    tau: TailThreshold,
) -> Result<FeatureMatrix> {
    let daily = daily_stats(panel, tau)?;
    aggregate_monthly(&daily, partition)
}
