//! Monthly market aggregates and real-time stress labels.
//!
//! A month is a stress month when its compounded market return is at or
//! below the cutoff `c_R`, or when its annualized realized volatility reaches
//! the expanding `alpha`-quantile of the volatilities of all earlier months.
//! The quantile for month `t` only sees months up to `t - 1`, and is only
//! formed once `min_history_months` of history exist; earlier months carry no
//! label.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};
use crate::io;
use crate::panel::{MarketSeries, MonthPartition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StressConfig {
    pub return_cutoff: f64,
    pub vol_quantile: f64,
    pub min_history_months: usize,
    pub annualization_factor: f64,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            return_cutoff: -0.05,
            vol_quantile: 0.90,
            min_history_months: 36,
            annualization_factor: 252f64.sqrt(),
        }
    }
}

impl StressConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.return_cutoff < 0.0) {
            return Err(MspiError::config("return_cutoff", "must be negative"));
        }
        if !(self.vol_quantile > 0.0 && self.vol_quantile < 1.0) {
            return Err(MspiError::config("vol_quantile", "must lie in (0, 1)"));
        }
        if self.min_history_months < 2 {
            return Err(MspiError::config("min_history_months", "must be at least 2"));
        }
        if !(self.annualization_factor > 0.0 && self.annualization_factor.is_finite()) {
            return Err(MspiError::config("annualization_factor", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketMonthly {
    pub month: YearMonth,
    pub r_mkt: f64,
    pub sigma_mkt: f64,
}

/// Daily market returns falling in each partition month, in date order.
fn month_returns<'a>(
    market: &'a MarketSeries,
    partition: &'a MonthPartition,
) -> impl Iterator<Item = (YearMonth, Vec<f64>)> + 'a {
    let points = market.points();
    partition.months().iter().map(move |bucket| {
        let start = points.partition_point(|p| YearMonth::of(p.date) < bucket.month);
        let end = points.partition_point(|p| YearMonth::of(p.date) <= bucket.month);
        (
            bucket.month,
            points[start..end].iter().map(|p| p.mkt_ret).collect(),
        )
    })
}

/// Compounded return `prod(1 + r_d) - 1`.
pub fn compound(daily: &[f64]) -> f64 {
    daily.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

/// Sample standard deviation (divisor `n - 1`); `None` below two observations.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((ss / (n - 1) as f64).sqrt())
}

pub fn monthly_market_return(
    market: &MarketSeries,
    partition: &MonthPartition,
) -> Result<Vec<(YearMonth, f64)>> {
    month_returns(market, partition)
        .map(|(m, r)| {
            if r.is_empty() {
                Err(MspiError::MissingMonth(m))
            } else {
                Ok((m, compound(&r)))
            }
        })
        .collect()
}

pub fn realized_monthly_vol(
    market: &MarketSeries,
    partition: &MonthPartition,
    annualization_factor: f64,
) -> Result<Vec<(YearMonth, f64)>> {
    month_returns(market, partition)
        .map(|(m, r)| {
            sample_std(&r)
                .map(|s| (m, s * annualization_factor))
                .ok_or(MspiError::UndefinedVolatility(m))
        })
        .collect()
}

pub fn market_monthly(
    market: &MarketSeries,
    partition: &MonthPartition,
    config: &StressConfig,
) -> Result<Vec<MarketMonthly>> {
    let returns = monthly_market_return(market, partition)?;
    let vols = realized_monthly_vol(market, partition, config.annualization_factor)?;
    Ok(returns
        .into_iter()
        .zip(vols)
        .map(|((month, r_mkt), (_, sigma_mkt))| MarketMonthly {
            month,
            r_mkt,
            sigma_mkt,
        })
        .collect())
}

/// Linear-interpolation quantile of `values`: position `(n - 1) * alpha`
/// between order statistics. `None` for empty input.
pub fn quantile_linear(values: &[f64], alpha: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, alpha))
}

pub(crate) fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile of the history through month `t - 1`, or an insufficiency error.
pub fn expanding_quantile(history: &[f64], alpha: f64, min_history: usize) -> Result<f64> {
    if history.len() < min_history.max(1) {
        return Err(MspiError::InsufficientHistory {
            needed: min_history.max(1),
            have: history.len(),
        });
    }
    Ok(quantile_linear(history, alpha).expect("non-empty history"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub month: YearMonth,
    pub r_mkt: f64,
    pub sigma_mkt: f64,
    /// Volatility quantile from months before this one.
    pub q_prev: Option<f64>,
    pub stress: Option<bool>,
    /// Stress label of the following calendar month.
    pub y_next: Option<bool>,
}

impl LabelRow {
    pub fn vol_branch(&self) -> Option<bool> {
        self.q_prev.map(|q| self.sigma_mkt >= q)
    }

    pub fn return_branch(&self, cutoff: f64) -> bool {
        self.r_mkt <= cutoff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSeries {
    rows: Vec<LabelRow>,
}

pub const LABEL_COLUMNS: [&str; 6] = ["month", "R_mkt", "sigma_mkt", "q_prev", "S", "Y_next"];

impl LabelSeries {
    pub fn rows(&self) -> &[LabelRow] {
        &self.rows
    }

    /// Months that carry a stress label.
    pub fn labeled(&self) -> impl Iterator<Item = &LabelRow> {
        self.rows.iter().filter(|r| r.stress.is_some())
    }

    pub fn row_for(&self, month: YearMonth) -> Option<&LabelRow> {
        self.rows
            .binary_search_by_key(&month, |r| r.month)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn from_rows(rows: Vec<LabelRow>) -> Result<Self> {
        if rows.windows(2).any(|w| w[0].month >= w[1].month) {
            return Err(MspiError::Alignment(
                "label months must be strictly increasing".into(),
            ));
        }
        Ok(LabelSeries { rows })
    }

    pub fn truncated_through(&self, month: YearMonth) -> LabelSeries {
        let k = self.rows.partition_point(|r| r.month <= month);
        let mut rows = self.rows[..k].to_vec();
        if let Some(last) = rows.last_mut() {
            last.y_next = None;
        }
        LabelSeries { rows }
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = io::create_csv(path, comment)?;
        w.write_record(LABEL_COLUMNS)
            .map_err(|e| io::write_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.month.to_string(),
                r.r_mkt.to_string(),
                r.sigma_mkt.to_string(),
                io::fmt_opt(r.q_prev),
                io::fmt_opt_bool(r.stress),
                io::fmt_opt_bool(r.y_next),
            ])
            .map_err(|e| io::write_err(path, e))?;
        }
        io::finish_csv(path, w)
    }

    pub fn read_csv(path: &Path) -> Result<LabelSeries> {
        let mut input = io::open_csv(path, &LABEL_COLUMNS)?;
        let c = input.columns.clone();
        let mut rows = Vec::new();
        io::for_each_row(&mut input, |row| {
            rows.push(LabelRow {
                month: row.month(c[0], "month")?,
                r_mkt: row.f64(c[1], "R_mkt")?,
                sigma_mkt: row.f64(c[2], "sigma_mkt")?,
                q_prev: row.opt_f64(c[3], "q_prev")?,
                stress: row.opt_bool01(c[4], "S")?,
                y_next: row.opt_bool01(c[5], "Y_next")?,
            });
            Ok(())
        })?;
        LabelSeries::from_rows(rows)
    }
}

/// Labels every month with enough volatility history.
pub fn label_stress(monthly: &[MarketMonthly], config: &StressConfig) -> Result<LabelSeries> {
    config.validate()?;
    if monthly.windows(2).any(|w| w[0].month >= w[1].month) {
        return Err(MspiError::Alignment(
            "monthly market series must be strictly increasing".into(),
        ));
    }
    let mut rows: Vec<LabelRow> = Vec::with_capacity(monthly.len());
    let mut history: Vec<f64> = Vec::with_capacity(monthly.len());
    for m in monthly {
        let q_prev =
            expanding_quantile(&history, config.vol_quantile, config.min_history_months).ok();
        let stress = q_prev.map(|q| m.r_mkt <= config.return_cutoff || m.sigma_mkt >= q);
        rows.push(LabelRow {
            month: m.month,
            r_mkt: m.r_mkt,
            sigma_mkt: m.sigma_mkt,
            q_prev,
            stress,
            y_next: None,
        });
        history.push(m.sigma_mkt);
    }
    for i in 0..rows.len().saturating_sub(1) {
        if rows[i + 1].month == rows[i].month.succ() {
            rows[i].y_next = rows[i + 1].stress;
        }
    }
    Ok(LabelSeries { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compounding() {
        assert!((compound(&[0.01, 0.01]) - 0.0201).abs() < 1e-15);
        assert!((compound(&[0.10, -0.10]) + 0.01).abs() < 1e-15);
        assert_eq!(compound(&[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn realized_vol_two_days() {
        // sample std of {0.01, -0.01} is sqrt(2e-4) = 0.0141421356...
        let s = sample_std(&[0.01, -0.01]).unwrap();
        assert!((s - 0.000_2f64.sqrt()).abs() < 1e-15);
        let ann = s * 252f64.sqrt();
        assert!((ann - 0.224_499_443_206_436_1).abs() < 1e-12, "{ann}");
        assert_eq!(sample_std(&[0.003; 5]), Some(0.0));
        let base = [0.01, -0.02, 0.005, 0.0];
        let doubled: Vec<f64> = base.iter().map(|r| 2.0 * r).collect();
        assert_eq!(sample_std(&doubled).unwrap(), 2.0 * sample_std(&base).unwrap());
        assert_eq!(sample_std(&[0.01]), None);
    }

    #[test]
    fn quantile_examples() {
        let h: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile_linear(&h, 0.9).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(quantile_linear(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        for a in [0.1, 0.5, 0.9, 0.99] {
            assert_eq!(quantile_linear(&[0.2; 7], a), Some(0.2));
        }
        assert!(matches!(
            expanding_quantile(&[1.0, 2.0], 0.9, 36),
            Err(MspiError::InsufficientHistory { needed: 36, have: 2 })
        ));
    }

    fn months(n: usize) -> Vec<YearMonth> {
        let mut m = YearMonth::new(2000, 1).unwrap();
        (0..n)
            .map(|_| {
                let cur = m;
                m = m.succ();
                cur
            })
            .collect()
    }

    fn series(vals: &[(f64, f64)]) -> Vec<MarketMonthly> {
        months(vals.len())
            .into_iter()
            .zip(vals)
            .map(|(month, &(r_mkt, sigma_mkt))| MarketMonthly {
                month,
                r_mkt,
                sigma_mkt,
            })
            .collect()
    }

    fn cfg2() -> StressConfig {
        StressConfig {
            min_history_months: 2,
            ..StressConfig::default()
        }
    }

    #[test]
    fn both_branches() {
        // history {0.20, 0.30} -> q(0.9) = 0.29
        let s = label_stress(
            &series(&[
                (0.01, 0.20),
                (0.01, 0.30),
                (-0.06, 0.01),
                (0.02, 0.40),
                (0.02, 0.10),
            ]),
            &cfg2(),
        )
        .unwrap();
        let st: Vec<_> = s.rows().iter().map(|r| r.stress).collect();
        assert_eq!(st, [None, None, Some(true), Some(true), Some(false)]);
        let y: Vec<_> = s.rows().iter().map(|r| r.y_next).collect();
        assert_eq!(y, [None, Some(true), Some(true), Some(false), None]);
        assert!((s.rows()[2].q_prev.unwrap() - 0.29).abs() < 1e-15);
    }

    #[test]
    fn spec_branch_cases() {
        let q = 0.25;
        let c = StressConfig::default();
        let fire = |r: f64, s: f64| r <= c.return_cutoff || s >= q;
        assert!(fire(-0.06, 0.0));
        assert!(fire(0.02, 0.30));
        assert!(!fire(0.02, 0.10));
    }

    #[test]
    fn gap_breaks_target() {
        let mut m = series(&[(0.0, 0.1), (0.0, 0.2), (0.0, 0.3), (0.0, 0.4)]);
        m[3].month = m[3].month.succ();
        let s = label_stress(&m, &cfg2()).unwrap();
        assert_eq!(s.rows()[2].y_next, None);
    }
}
