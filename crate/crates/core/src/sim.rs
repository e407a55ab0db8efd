//! Seeded two-regime market simulator.
//!
//! The monthly regime follows a two-state Markov chain that switches only at
//! month boundaries. Within a month every trading day draws a market factor
//! return `m_d ~ N(drift, vol)` from the month's regime, and each stock return
//! is `beta_i * m_d + dispersion * e_{i,d}` plus, with the regime's tail
//! probability, a fixed downward jump. Prices compound the returns; volume is
//! a lognormal multiple of a stock-specific turnover rate that rises with the
//! absolute return and the regime's volume scale.
//!
//! The synthetic calendar uses consecutive calendar days from the first of
//! each month, `trading_days_per_year / 12` days per month (the remainder is
//! spread over the first months of the year).

use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};
use crate::io;
use crate::panel::{
    filter_day, DailyPanel, EligibilityFilter, IngestSummary, MarketPoint, MarketSeries,
    RawObservation, SecurityId,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    /// Daily market factor mean.
    pub mkt_drift: f64,
    /// Daily market factor standard deviation.
    pub mkt_vol: f64,
    /// Daily idiosyncratic standard deviation.
    pub dispersion: f64,
    /// Per stock-day probability of the downside jump.
    pub tail_prob: f64,
    /// Multiplier on baseline trading volume.
    pub volume_scale: f64,
}

impl RegimeParams {
    pub fn calm() -> Self {
        RegimeParams {
            mkt_drift: 0.0004,
            mkt_vol: 0.008,
            dispersion: 0.018,
            tail_prob: 0.002,
            volume_scale: 1.0,
        }
    }

    pub fn stress() -> Self {
        RegimeParams {
            mkt_drift: -0.0015,
            mkt_vol: 0.02,
            dispersion: 0.032,
            tail_prob: 0.012,
            volume_scale: 1.6,
        }
    }

    fn validate(&self, block: &str) -> Result<()> {
        let field = |name: &str| format!("{block}.{name}");
        if !self.mkt_drift.is_finite() {
            return Err(MspiError::config(field("mkt_drift"), "must be finite"));
        }
        if !(self.mkt_vol >= 0.0 && self.mkt_vol.is_finite()) {
            return Err(MspiError::config(field("mkt_vol"), "must be finite and >= 0"));
        }
        if !(self.dispersion > 0.0 && self.dispersion.is_finite()) {
            return Err(MspiError::config(field("dispersion"), "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.tail_prob) {
            return Err(MspiError::config(field("tail_prob"), "must lie in [0, 1]"));
        }
        if !(self.volume_scale > 0.0 && self.volume_scale.is_finite()) {
            return Err(MspiError::config(field("volume_scale"), "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_stocks: usize,
    pub n_years: usize,
    pub trading_days_per_year: usize,
    pub start_year: i32,
    pub calm: RegimeParams,
    pub stress: RegimeParams,
    pub p_calm_to_stress: f64,
    pub p_stress_to_calm: f64,
    pub start_in_stress: bool,
    /// Size of the per stock-day downside jump (a return, e.g. -0.08).
    pub jump_size: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_stocks: 500,
            n_years: 40,
            trading_days_per_year: 252,
            start_year: 1980,
            calm: RegimeParams::calm(),
            stress: RegimeParams::stress(),
            p_calm_to_stress: 0.05,
            p_stress_to_calm: 0.25,
            start_in_stress: false,
            jump_size: -0.08,
            seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stocks < 2 {
            return Err(MspiError::config("n_stocks", "need at least 2 stocks"));
        }
        if self.n_years == 0 {
            return Err(MspiError::config("n_years", "must be positive"));
        }
        if self.trading_days_per_year < 24 || self.trading_days_per_year > 12 * 28 {
            return Err(MspiError::config(
                "trading_days_per_year",
                "must lie in [24, 336] so every month has 2..=28 days",
            ));
        }
        for (name, p) in [
            ("p_calm_to_stress", self.p_calm_to_stress),
            ("p_stress_to_calm", self.p_stress_to_calm),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MspiError::config(name, "must lie in [0, 1]"));
            }
        }
        if !(self.jump_size > -1.0 && self.jump_size <= 0.0) {
            return Err(MspiError::config("jump_size", "must lie in (-1, 0]"));
        }
        self.calm.validate("calm")?;
        self.stress.validate("stress")
    }

    fn days_in_month(&self, month_index: usize) -> usize {
        let base = self.trading_days_per_year / 12;
        let extra = self.trading_days_per_year % 12;
        base + usize::from(month_index % 12 < extra)
    }

    /// Stationary probability of the stress regime.
    pub fn stationary_stress_share(&self) -> f64 {
        let denom = self.p_calm_to_stress + self.p_stress_to_calm;
        if denom == 0.0 {
            f64::from(u8::from(self.start_in_stress))
        } else {
            self.p_calm_to_stress / denom
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeMonth {
    pub month: YearMonth,
    pub stress: bool,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub panel: DailyPanel,
    pub market: MarketSeries,
    pub true_regime: Vec<RegimeMonth>,
    pub ingest: IngestSummary,
}

struct Stock {
    id: SecurityId,
    beta: f64,
    price: f64,
    shrout: f64,
    turnover: f64,
}

const STREAM_SETUP: u64 = 0;
const STREAM_REGIME: u64 = 1;
const STREAM_DAYS: u64 = 2;

pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let n_months = config.n_years * 12;

    let mut setup = rng::stream(config.seed, &[STREAM_SETUP]);
    let width = config.n_stocks.to_string().len().max(4);
    let mut stocks: Vec<Stock> = (0..config.n_stocks)
        .map(|i| {
            let z: f64 = setup.sample(StandardNormal);
            let price = (30f64.ln() + 0.5 * z).exp();
            let z: f64 = setup.sample(StandardNormal);
            let shrout = (50_000f64.ln() + 0.8 * z).exp().round().max(1.0);
            Stock {
                id: SecurityId::new(&format!("S{i:0width$}")),
                beta: setup.gen_range(0.7..1.3),
                price,
                shrout,
                turnover: setup.gen_range(0.002..0.01),
            }
        })
        .collect();

    let mut regime_rng = rng::stream(config.seed, &[STREAM_REGIME]);
    let mut regimes = Vec::with_capacity(n_months);
    let mut in_stress = config.start_in_stress;
    for m in 0..n_months {
        if m > 0 {
            let u: f64 = regime_rng.gen();
            in_stress = if in_stress {
                u >= config.p_stress_to_calm
            } else {
                u < config.p_calm_to_stress
            };
        }
        regimes.push(in_stress);
    }

    let filter = EligibilityFilter::default();
    let mut summary = IngestSummary::default();
    let mut day_rng = rng::stream(config.seed, &[STREAM_DAYS]);
    let mut days = Vec::with_capacity(n_months * 22);
    let mut market_points = Vec::with_capacity(n_months * 22);
    let mut true_regime = Vec::with_capacity(n_months);
    let mut ym = YearMonth::new(config.start_year, 1)
        .ok_or_else(|| MspiError::config("start_year", "out of range"))?;

    for (m, &stress) in regimes.iter().enumerate() {
        let params = if stress { &config.stress } else { &config.calm };
        true_regime.push(RegimeMonth { month: ym, stress });
        for day in 0..config.days_in_month(m) {
            let date = NaiveDate::from_ymd_opt(ym.year, ym.month, day as u32 + 1)
                .expect("day within month");
            let z: f64 = day_rng.sample(StandardNormal);
            let mkt = params.mkt_drift + params.mkt_vol * z;
            market_points.push(MarketPoint { date, mkt_ret: mkt });

            let mut rows = Vec::with_capacity(stocks.len());
            for s in stocks.iter_mut() {
                let e: f64 = day_rng.sample(StandardNormal);
                let u: f64 = day_rng.gen();
                let v: f64 = day_rng.sample(StandardNormal);
                let mut ret = s.beta * mkt + params.dispersion * e;
                if u < params.tail_prob {
                    ret += config.jump_size;
                }
                let ret = ret.max(-0.95);
                s.price *= 1.0 + ret;
                let volume = (s.shrout
                    * s.turnover
                    * params.volume_scale
                    * (1.0 + 10.0 * ret.abs())
                    * (0.3 * v).exp())
                .round();
                rows.push(RawObservation {
                    date,
                    security_id: s.id.clone(),
                    ret: Some(ret),
                    prc: Some(s.price),
                    vol: Some(volume),
                    shrout: Some(s.shrout),
                    share_class_ok: true,
                    exchange_ok: true,
                });
            }
            if let Some(day) = filter_day(&filter, date, rows, &mut summary)? {
                days.push(day);
            }
        }
        ym = ym.succ();
    }

    Ok(SimOutput {
        panel: DailyPanel::from_days(days)?,
        market: MarketSeries::from_points(market_points)?,
        true_regime,
        ingest: summary,
    })
}

pub fn write_true_regime(path: &Path, regimes: &[RegimeMonth], comment: Option<&str>) -> Result<()> {
    let mut w = io::create_csv(path, comment)?;
    w.write_record(["month", "stress"])
        .map_err(|e| io::write_err(path, e))?;
    for r in regimes {
        w.write_record([r.month.to_string(), u8::from(r.stress).to_string()])
            .map_err(|e| io::write_err(path, e))?;
    }
    io::finish_csv(path, w)
}

pub fn load_true_regime(path: &Path) -> Result<Vec<RegimeMonth>> {
    let mut input = io::open_csv(path, &["month", "stress"])?;
    let c = input.columns.clone();
    let mut out = Vec::new();
    io::for_each_row(&mut input, |row| {
        out.push(RegimeMonth {
            month: row.month(c[0], "month")?,
            stress: row.flag(c[1], "stress")?,
        });
        Ok(())
    })?;
    Ok(out)
}
