//! Real-time expanding-window forecasting.
//!
//! The modeling sample is the run of months that carry a stress label. Index
//! `τ` in that sample contributes the training pair `(X_τ, Y_{τ+1})`. The
//! forecast stamped on month `t` is fitted on the pairs `τ < t`, whose targets
//! are all known at the end of month `t`, and scores `X_t`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};
use crate::features::FeatureMatrix;
use crate::io;
use crate::labels::LabelSeries;
use crate::learners::{
    calibrate, fit_gradient_boosting, fit_platt_with, fit_random_forest, gb_score, laplace_rate,
    logistic, rf_score, BoostModel, BoostParams, CalibrationMap, ForestModel, ForestParams,
    Matrix, Penalty, ScaledLogit, ScoreScale, PROB_CLAMP,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    L1Logit,
    L2Logit,
    RandomForest,
    GradientBoosting,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::L1Logit,
        ModelKind::L2Logit,
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::L1Logit => "l1_logit",
            ModelKind::L2Logit => "l2_logit",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoosting => "gradient_boosting",
        }
    }

    /// The benchmark sees only the market return and volatility.
    pub fn uses_market_controls(self) -> bool {
        self == ModelKind::L2Logit
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = MspiError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MspiError::config("model", format!("unknown model `{s}`")))
    }
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    L1Logit { lambda: f64 },
    L2Logit { lambda: f64 },
    RandomForest { max_depth: usize },
    GradientBoosting { n_stages: usize },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::L1Logit { .. } => ModelKind::L1Logit,
            ModelSpec::L2Logit { .. } => ModelKind::L2Logit,
            ModelSpec::RandomForest { .. } => ModelKind::RandomForest,
            ModelSpec::GradientBoosting { .. } => ModelKind::GradientBoosting,
        }
    }

    /// Larger means a more flexible model; CV ties go to the smaller value.
    fn complexity(&self) -> f64 {
        match *self {
            ModelSpec::L1Logit { lambda } | ModelSpec::L2Logit { lambda } => -lambda,
            ModelSpec::RandomForest { max_depth } => max_depth as f64,
            ModelSpec::GradientBoosting { n_stages } => n_stages as f64,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi`, inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// How cross-validation turns mean fold losses into a choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRule {
    /// Smallest mean loss; exact ties go to the simpler candidate.
    MinLoss,
    /// Simplest candidate within one fold standard error of the smallest
    /// mean loss.
    #[default]
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub initial_window_months: usize,
    pub cv_folds: usize,
    pub cv_rule: CvRule,
    pub l1_lambda_grid: Vec<f64>,
    pub l2_lambda_grid: Vec<f64>,
    pub rf_depth_grid: Vec<usize>,
    pub gb_stage_grid: Vec<usize>,
    pub forest: ForestParams,
    pub boost: BoostParams,
    pub models: Vec<ModelKind>,
    /// Share of each training window held out to fit the Platt map.
    pub calibration_fraction: f64,
    pub min_calibration_months: usize,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        let lambdas = log_grid(1e-4, 1.0, 20);
        BacktestConfig {
            initial_window_months: 120,
            cv_folds: 5,
            cv_rule: CvRule::default(),
            l1_lambda_grid: lambdas.clone(),
            l2_lambda_grid: lambdas,
            rf_depth_grid: vec![4, 8],
            gb_stage_grid: vec![50, 100, 200, 400],
            forest: ForestParams::default(),
            boost: BoostParams::default(),
            models: ModelKind::ALL.to_vec(),
            calibration_fraction: 0.2,
            min_calibration_months: 12,
            seed: 7,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cv_folds == 0 {
            return Err(MspiError::config("backtest.cv_folds", "must be at least 1"));
        }
        if self.initial_window_months < self.cv_folds + 1 {
            return Err(MspiError::config(
                "backtest.initial_window_months",
                "must be at least cv_folds + 1",
            ));
        }
        if self.initial_window_months / (self.cv_folds + 1) < 6 {
            return Err(MspiError::config(
                "backtest.cv_folds",
                "validation segments must span at least 6 months",
            ));
        }
        if self.models.is_empty() {
            return Err(MspiError::config("backtest.models", "must not be empty"));
        }
        let lambdas = [
            ("backtest.l1_lambda_grid", &self.l1_lambda_grid),
            ("backtest.l2_lambda_grid", &self.l2_lambda_grid),
        ];
        for (name, grid) in lambdas {
            if grid.is_empty() {
                return Err(MspiError::config(name, "must not be empty"));
            }
            if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(MspiError::config(name, "values must be finite and >= 0"));
            }
        }
        if self.rf_depth_grid.is_empty() || self.rf_depth_grid.contains(&0) {
            return Err(MspiError::config(
                "backtest.rf_depth_grid",
                "must be non-empty with positive depths",
            ));
        }
        if self.gb_stage_grid.is_empty() {
            return Err(MspiError::config("backtest.gb_stage_grid", "must not be empty"));
        }
        if !(0.0..1.0).contains(&self.calibration_fraction) {
            return Err(MspiError::config(
                "backtest.calibration_fraction",
                "must lie in [0, 1)",
            ));
        }
        self.forest.validate()?;
        self.boost.validate()
    }

    pub fn grid(&self, kind: ModelKind) -> Vec<ModelSpec> {
        match kind {
            ModelKind::L1Logit => self
                .l1_lambda_grid
                .iter()
                .map(|&lambda| ModelSpec::L1Logit { lambda })
                .collect(),
            ModelKind::L2Logit => self
                .l2_lambda_grid
                .iter()
                .map(|&lambda| ModelSpec::L2Logit { lambda })
                .collect(),
            ModelKind::RandomForest => self
                .rf_depth_grid
                .iter()
                .map(|&max_depth| ModelSpec::RandomForest { max_depth })
                .collect(),
            ModelKind::GradientBoosting => self
                .gb_stage_grid
                .iter()
                .map(|&n_stages| ModelSpec::GradientBoosting { n_stages })
                .collect(),
        }
    }

    fn models(&self) -> Vec<ModelKind> {
        let mut m = self.models.clone();
        m.sort();
        m.dedup();
        m
    }
}

/// A fitted model, before any calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Logit(ScaledLogit),
    Forest(ForestModel),
    Boost(BoostModel),
    /// Smoothed training event rate used when a fit was impossible.
    BaseRate { rate: f64 },
}

impl FittedModel {
    pub fn raw_score(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Logit(m) => m.raw_score(x),
            FittedModel::Forest(m) => rf_score(m, x),
            FittedModel::Boost(m) => gb_score(m, x),
            FittedModel::BaseRate { rate } => Ok(*rate),
        }
    }

    /// The model's own probability for a raw score.
    pub fn native_probability(&self, raw: f64) -> f64 {
        let p = match self {
            FittedModel::Logit(_) | FittedModel::Boost(_) => logistic(raw),
            FittedModel::Forest(_) | FittedModel::BaseRate { .. } => raw,
        };
        p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    }

    fn score_scale(&self) -> ScoreScale {
        match self {
            FittedModel::Forest(_) => ScoreScale::Probability,
            _ => ScoreScale::Raw,
        }
    }

    fn needs_calibration(&self) -> bool {
        matches!(self, FittedModel::Forest(_) | FittedModel::Boost(_))
    }
}

fn fit_spec(spec: &ModelSpec, x: &Matrix, y: &[bool], config: &BacktestConfig, seed: u64) -> Result<FittedModel> {
    Ok(match *spec {
        ModelSpec::L1Logit { lambda } => FittedModel::Logit(ScaledLogit::fit(x, y, Penalty::L1, lambda)?),
        ModelSpec::L2Logit { lambda } => FittedModel::Logit(ScaledLogit::fit(x, y, Penalty::L2, lambda)?),
        ModelSpec::RandomForest { max_depth } => {
            let params = ForestParams {
                max_depth: Some(max_depth),
                ..config.forest.clone()
            };
            FittedModel::Forest(fit_random_forest(x, y, &params, seed)?)
        }
        ModelSpec::GradientBoosting { n_stages } => {
            let params = BoostParams {
                n_stages,
                ..config.boost.clone()
            };
            FittedModel::Boost(fit_gradient_boosting(x, y, &params)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub selected: ModelSpec,
    /// Candidates in tie-break order (simplest first) with their mean
    /// validation log loss.
    pub losses: Vec<(ModelSpec, f64)>,
    pub folds_used: usize,
    pub folds_skipped: usize,
}

fn log_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Forward-chaining selection over `grid`.
///
/// The rows are cut into `folds + 1` contiguous segments; fold `k` trains on
/// segments `0..k` and validates on segment `k`. The candidate with the
/// lowest mean validation log loss wins, ties going to the simpler model.
pub fn forward_chain_cv(
    x: &Matrix,
    y: &[bool],
    grid: &[ModelSpec],
    folds: usize,
    config: &BacktestConfig,
) -> Result<CvSelection> {
    if grid.is_empty() {
        return Err(MspiError::config("grid", "must not be empty"));
    }
    if x.n_rows() != y.len() {
        return Err(MspiError::DimensionMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    let n = x.n_rows();
    let seg = n / (folds + 1);
    if folds == 0 || seg < 6 {
        return Err(MspiError::InsufficientHistory {
            needed: 6 * (folds.max(1) + 1),
            have: n,
        });
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.complexity().total_cmp(&b.complexity()));
    let kind = grid[0].kind();
    let all_boost = grid.iter().all(|g| g.kind() == ModelKind::GradientBoosting);

    let mut fold_losses: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    let mut used = 0;
    let mut skipped = 0;
    for k in 1..=folds {
        let train_end = k * seg;
        let val_end = if k == folds { n } else { (k + 1) * seg };
        let y_train = &y[..train_end];
        if !(y_train.contains(&true) && y_train.contains(&false)) {
            log::warn!("cross-validation fold {k} skipped: single-class training prefix");
            skipped += 1;
            continue;
        }
        let x_train = x.slice_rows(0, train_end);
        let seed = rng::derive_seed(config.seed, &[kind.code(), 0, k as u64]);
        let fitted: Vec<FittedModel> = if all_boost {
            let max = grid
                .iter()
                .map(|g| match g {
                    ModelSpec::GradientBoosting { n_stages } => *n_stages,
                    _ => unreachable!(),
                })
                .max()
                .unwrap_or(0);
            let spec = ModelSpec::GradientBoosting { n_stages: max };
            let FittedModel::Boost(full) = fit_spec(&spec, &x_train, y_train, config, seed)? else {
                unreachable!()
            };
            grid.iter()
                .map(|g| match g {
                    ModelSpec::GradientBoosting { n_stages } => {
                        FittedModel::Boost(full.truncated(*n_stages))
                    }
                    _ => unreachable!(),
                })
                .collect()
        } else {
            grid.iter()
                .map(|g| fit_spec(g, &x_train, y_train, config, seed))
                .collect::<Result<_>>()?
        };
        for (losses, model) in fold_losses.iter_mut().zip(&fitted) {
            let mut loss = 0.0;
            for i in train_end..val_end {
                let p = model.native_probability(model.raw_score(x.row(i))?);
                loss += log_loss(p, y[i]);
            }
            losses.push(loss / (val_end - train_end) as f64);
        }
        used += 1;
    }
    if used == 0 {
        return Err(MspiError::SingleClass("every cross-validation training prefix"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let losses: Vec<(ModelSpec, f64)> = grid
        .iter()
        .zip(&fold_losses)
        .map(|(g, l)| (*g, mean(l)))
        .collect();
    let mut best = 0;
    for (i, (_, l)) in losses.iter().enumerate().skip(1) {
        let b = losses[best].1;
        if *l < b - 1e-12 * b.abs() {
            best = i;
        }
    }
    if config.cv_rule == CvRule::OneStandardError && used > 1 {
        let f = &fold_losses[best];
        let m = mean(f);
        let var = f.iter().map(|l| (l - m).powi(2)).sum::<f64>() / (used - 1) as f64;
        let bound = losses[best].1 + (var / used as f64).sqrt();
        best = losses.iter().position(|(_, l)| *l <= bound).unwrap_or(best);
    }
    Ok(CvSelection {
        selected: losses[best].0,
        losses,
        folds_used: used,
        folds_skipped: skipped,
    })
}

/// Month-by-month aligned inputs.
struct Design {
    months: Vec<YearMonth>,
    fragility: Matrix,
    market: Matrix,
    /// `Y_{τ+1}` for each modeling month.
    target: Vec<Option<bool>>,
    next_vol: Vec<Option<f64>>,
    next_ret: Vec<Option<f64>>,
}

impl Design {
    fn build(features: &FeatureMatrix, labels: &LabelSeries) -> Result<Design> {
        let rows = labels.rows();
        let mut d = Design {
            months: Vec::new(),
            fragility: Matrix::empty_columns(0),
            market: Matrix::empty_columns(0),
            target: Vec::new(),
            next_vol: Vec::new(),
            next_ret: Vec::new(),
        };
        let mut frag = Vec::new();
        let mut mkt = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.stress.is_none() {
                continue;
            }
            let x = features.row_for(r.month).ok_or_else(|| {
                MspiError::Alignment(format!("no feature row for labeled month {}", r.month))
            })?;
            if let Some(&last) = d.months.last() {
                if last.succ() != r.month {
                    return Err(MspiError::Alignment(format!(
                        "labeled months jump from {last} to {}",
                        r.month
                    )));
                }
            }
            let next = rows.get(i + 1).filter(|n| n.month == r.month.succ());
            d.months.push(r.month);
            frag.push(*x);
            mkt.push([r.r_mkt, r.sigma_mkt]);
            d.target.push(r.y_next);
            d.next_vol.push(next.map(|n| n.sigma_mkt));
            d.next_ret.push(next.map(|n| n.r_mkt));
        }
        d.fragility = Matrix::from_rows(&frag)?;
        d.market = Matrix::from_rows(&mkt)?;
        Ok(d)
    }

    fn x(&self, kind: ModelKind) -> &Matrix {
        if kind.uses_market_controls() {
            &self.market
        } else {
            &self.fragility
        }
    }

    /// Training pairs available at forecast index `t`.
    fn training(&self, kind: ModelKind, t: usize) -> (Matrix, Vec<bool>) {
        let x = self.x(kind);
        let mut rows = Vec::with_capacity(t);
        let mut y = Vec::with_capacity(t);
        for tau in 0..t {
            if let Some(v) = self.target[tau] {
                rows.push(x.row(tau).to_vec());
                y.push(v);
            }
        }
        let m = if rows.is_empty() {
            Matrix::empty_columns(0)
        } else {
            Matrix::from_rows(&rows).expect("rows share a width")
        };
        (m, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub month: YearMonth,
    pub model: ModelKind,
    pub raw_score: f64,
    pub probability: f64,
    pub y_next: Option<bool>,
    pub next_vol: Option<f64>,
    pub next_ret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub month: YearMonth,
    pub model: ModelKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastSeries {
    /// Ordered by month, then by model.
    pub records: Vec<ForecastRecord>,
    pub selected: BTreeMap<ModelKind, CvSelection>,
    pub fallbacks: Vec<Fallback>,
    /// Training pairs behind each forecast month, in month order.
    pub training_rows: Vec<usize>,
    pub seed: u64,
    pub config_hash: String,
}

pub const FORECAST_COLUMNS: [&str; 7] = [
    "month",
    "model",
    "raw_score",
    "probability",
    "y_next",
    "next_vol",
    "next_ret",
];

impl ForecastSeries {
    pub fn models(&self) -> Vec<ModelKind> {
        let mut m: Vec<ModelKind> = self.records.iter().map(|r| r.model).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn months(&self) -> Vec<YearMonth> {
        let mut m: Vec<YearMonth> = self.records.iter().map(|r| r.month).collect();
        m.dedup();
        m
    }

    /// Records of one model, in month order.
    pub fn for_model(&self, model: ModelKind) -> Vec<&ForecastRecord> {
        self.records.iter().filter(|r| r.model == model).collect()
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = io::create_csv(path, comment)?;
        w.write_record(FORECAST_COLUMNS)
            .map_err(|e| io::write_err(path, e))?;
        for r in &self.records {
            w.write_record([
                r.month.to_string(),
                r.model.to_string(),
                r.raw_score.to_string(),
                r.probability.to_string(),
                io::fmt_opt_bool(r.y_next),
                io::fmt_opt(r.next_vol),
                io::fmt_opt(r.next_ret),
            ])
            .map_err(|e| io::write_err(path, e))?;
        }
        io::finish_csv(path, w)
    }

    /// Reads the records back; selection and provenance live in other files.
    pub fn read_csv(path: &Path) -> Result<ForecastSeries> {
        let mut input = io::open_csv(path, &FORECAST_COLUMNS)?;
        let c = input.columns.clone();
        let mut records = Vec::new();
        io::for_each_row(&mut input, |row| {
            let model = row.str(c[1]).parse().map_err(|_| MspiError::Malformed {
                path: path.to_path_buf(),
                line: row.line,
                column: "model".into(),
                message: format!("unknown model `{}`", row.str(c[1])),
            })?;
            records.push(ForecastRecord {
                month: row.month(c[0], "month")?,
                model,
                raw_score: row.f64(c[2], "raw_score")?,
                probability: row.f64(c[3], "probability")?,
                y_next: row.opt_bool01(c[4], "y_next")?,
                next_vol: row.opt_f64(c[5], "next_vol")?,
                next_ret: row.opt_f64(c[6], "next_ret")?,
            });
            Ok(())
        })?;
        records.sort_by_key(|r| (r.month, r.model));
        if records
            .windows(2)
            .any(|w| (w[0].month, w[0].model) == (w[1].month, w[1].model))
        {
            return Err(MspiError::Alignment(format!(
                "{} repeats a (month, model) pair",
                path.display()
            )));
        }
        Ok(ForecastSeries {
            records,
            ..ForecastSeries::default()
        })
    }
}

/// Audit record written next to the forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub initial_window_months: usize,
    pub cv_folds: usize,
    pub first_forecast_month: Option<YearMonth>,
    pub last_forecast_month: Option<YearMonth>,
    pub n_forecast_months: usize,
    pub selected: BTreeMap<ModelKind, ModelSpec>,
    pub cv: BTreeMap<ModelKind, CvSelection>,
    pub fallbacks: Vec<Fallback>,
}

impl ForecastSeries {
    pub fn provenance(&self, config: &BacktestConfig) -> Provenance {
        let months = self.months();
        Provenance {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            initial_window_months: config.initial_window_months,
            cv_folds: config.cv_folds,
            first_forecast_month: months.first().copied(),
            last_forecast_month: months.last().copied(),
            n_forecast_months: months.len(),
            selected: self.selected.iter().map(|(k, v)| (*k, v.selected)).collect(),
            cv: self.selected.clone(),
            fallbacks: self.fallbacks.clone(),
        }
    }
}

/// A fitted forecaster as of one month: the model plus its calibration map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub month: YearMonth,
    pub model_kind: ModelKind,
    pub model: FittedModel,
    pub calibration: Option<CalibrationMap>,
}

struct MonthOutput {
    records: Vec<ForecastRecord>,
    fallbacks: Vec<Fallback>,
    forecasters: Vec<Forecaster>,
    training_rows: usize,
}

fn base_rate(y: &[bool]) -> FittedModel {
    FittedModel::BaseRate {
        rate: laplace_rate(y),
    }
}

fn forecast_month(
    design: &Design,
    t: usize,
    config: &BacktestConfig,
    selected: &BTreeMap<ModelKind, CvSelection>,
) -> Result<MonthOutput> {
    let month = design.months[t];
    let mut out = MonthOutput {
        records: Vec::new(),
        fallbacks: Vec::new(),
        forecasters: Vec::new(),
        training_rows: 0,
    };
    for (&kind, cv) in selected {
        let spec = cv.selected;
        let (x, y) = design.training(kind, t);
        out.training_rows = y.len();
        let x_now = design.x(kind).row(t);
        let mut note = |reason: String| {
            log::debug!("{month} {kind}: {reason}");
            out.fallbacks.push(Fallback {
                month,
                model: kind,
                reason,
            });
        };

        let seed = rng::derive_seed(config.seed, &[kind.code(), 1, t as u64]);
        let model = if y.is_empty() {
            note("no training rows; base rate used".into());
            FittedModel::BaseRate { rate: 0.5 }
        } else {
            match fit_spec(&spec, &x, &y, config, seed) {
                Ok(m) => m,
                Err(e) => {
                    note(format!("fit failed ({e}); base rate used"));
                    base_rate(&y)
                }
            }
        };
        if let FittedModel::Logit(m) = &model {
            if m.model.diagnostics.base_rate_fallback {
                note("single-class training targets; base rate used".into());
            }
        }

        let calibration = if model.needs_calibration() {
            let n = y.len();
            let seg = ((config.calibration_fraction * n as f64).ceil() as usize)
                .max(config.min_calibration_months);
            let map = if n <= seg {
                Err("window too short to hold out a calibration segment".to_string())
            } else {
                let head = x.slice_rows(0, n - seg);
                let sub_seed = rng::derive_seed(config.seed, &[kind.code(), 2, t as u64]);
                fit_spec(&spec, &head, &y[..n - seg], config, sub_seed)
                    .and_then(|sub| {
                        let scores = (n - seg..n)
                            .map(|i| sub.raw_score(x.row(i)))
                            .collect::<Result<Vec<f64>>>()?;
                        fit_platt_with(&scores, &y[n - seg..], model.score_scale())
                    })
                    .map_err(|e| format!("calibration fit failed ({e})"))
            };
            match map {
                Ok(m) if m.identity_fallback => {
                    note("single-class calibration segment; native probability used".into());
                    Some(m)
                }
                Ok(m) => Some(m),
                Err(reason) => {
                    note(format!("{reason}; native probability used"));
                    Some(CalibrationMap::identity())
                }
            }
        } else {
            None
        };

        let raw = model.raw_score(x_now)?;
        let probability = match &calibration {
            Some(map) if !map.identity_fallback && !matches!(model, FittedModel::BaseRate { .. }) => {
                calibrate(map, raw)
            }
            _ => model.native_probability(raw),
        };
        out.records.push(ForecastRecord {
            month,
            model: kind,
            raw_score: raw,
            probability,
            y_next: design.target[t],
            next_vol: design.next_vol[t],
            next_ret: design.next_ret[t],
        });
        out.forecasters.push(Forecaster {
            month,
            model_kind: kind,
            model,
            calibration,
        });
    }
    Ok(out)
}

/// Runs the expanding-window protocol and also returns the forecasters
/// fitted for the last month.
pub fn run_backtest_with_models(
    features: &FeatureMatrix,
    labels: &LabelSeries,
    config: &BacktestConfig,
) -> Result<(ForecastSeries, Vec<Forecaster>)> {
    config.validate()?;
    let design = Design::build(features, labels)?;
    let w = config.initial_window_months;
    let n = design.months.len();
    if n < w + 1 {
        return Err(MspiError::InsufficientHistory {
            needed: w + 1,
            have: n,
        });
    }

    let mut selected = BTreeMap::new();
    for kind in config.models() {
        let (x, y) = design.training(kind, w);
        let cv = forward_chain_cv(&x, &y, &config.grid(kind), config.cv_folds, config)?;
        selected.insert(kind, cv);
    }

    let months: Vec<MonthOutput> = (w..n)
        .into_par_iter()
        .map(|t| forecast_month(&design, t, config, &selected))
        .collect::<Result<_>>()?;

    let mut series = ForecastSeries {
        selected,
        seed: config.seed,
        config_hash: io::config_hash(config),
        ..ForecastSeries::default()
    };
    let mut last = Vec::new();
    for m in months {
        series.records.extend(m.records);
        series.fallbacks.extend(m.fallbacks);
        series.training_rows.push(m.training_rows);
        last = m.forecasters;
    }
    Ok((series, last))
}

pub fn run_expanding_backtest(
    features: &FeatureMatrix,
    labels: &LabelSeries,
    config: &BacktestConfig,
) -> Result<ForecastSeries> {
    run_backtest_with_models(features, labels, config).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_FEATURES;
    use crate::labels::LabelRow;

    fn synthetic(n: usize) -> (FeatureMatrix, LabelSeries) {
        let mut months = Vec::new();
        let mut m = YearMonth::new(2000, 1).unwrap();
        for _ in 0..n {
            months.push(m);
            m = m.succ();
        }
        let stress: Vec<bool> = (0..n).map(|i| (i * 7 + i / 5) % 6 == 0).collect();
        let rows: Vec<[f64; N_FEATURES]> = (0..n)
            .map(|i| {
                let mut r = [0.0; N_FEATURES];
                for (j, v) in r.iter_mut().enumerate() {
                    *v = ((i * (j + 3)) as f64 * 0.37).sin();
                }
                r[0] = 500.0;
                // next month's stress leaks into the first dispersion feature
                r[1] = if stress.get(i + 1).copied().unwrap_or(false) { 1.0 } else { 0.0 } + 0.3 * r[2];
                r
            })
            .collect();
        let features = FeatureMatrix::new(months.clone(), rows).unwrap();
        let labels = LabelSeries::from_rows(
            (0..n)
                .map(|i| LabelRow {
                    month: months[i],
                    r_mkt: 0.01 * (i as f64 * 0.9).cos(),
                    sigma_mkt: 0.15 + 0.02 * (i as f64 * 0.4).sin(),
                    q_prev: Some(0.2),
                    stress: Some(stress[i]),
                    y_next: stress.get(i + 1).copied(),
                })
                .collect(),
        )
        .unwrap();
        (features, labels)
    }

    fn small_config() -> BacktestConfig {
        BacktestConfig {
            initial_window_months: 60,
            cv_folds: 4,
            l1_lambda_grid: vec![1e-3, 1e-2, 0.1],
            l2_lambda_grid: vec![1e-3, 0.1],
            rf_depth_grid: vec![3],
            gb_stage_grid: vec![10, 20],
            forest: ForestParams {
                n_trees: 15,
                ..ForestParams::default()
            },
            ..BacktestConfig::default()
        }
    }

    #[test]
    fn default_grid_spans_range() {
        let c = BacktestConfig::default();
        assert_eq!(c.l1_lambda_grid.len(), 20);
        assert!((c.l1_lambda_grid[0] - 1e-4).abs() < 1e-18);
        assert!((c.l1_lambda_grid[19] - 1.0).abs() < 1e-15);
        c.validate().unwrap();
    }

    #[test]
    fn one_extra_month_one_record_each() {
        let (f, l) = synthetic(61);
        let s = run_expanding_backtest(&f, &l, &small_config()).unwrap();
        assert_eq!(s.months().len(), 1);
        assert_eq!(s.records.len(), 4);
        assert!(s.records.iter().all(|r| r.y_next.is_none()));
        assert_eq!(s.training_rows, vec![60]);
    }

    #[test]
    fn training_rows_grow_by_one() {
        let (f, l) = synthetic(80);
        let s = run_expanding_backtest(&f, &l, &small_config()).unwrap();
        let expected: Vec<usize> = (60..80).collect();
        assert_eq!(s.training_rows, expected);
        for r in &s.records {
            assert!(r.probability > 0.0 && r.probability < 1.0);
        }
    }

    #[test]
    fn singleton_grid_and_tie_break() {
        let (f, l) = synthetic(80);
        let d = Design::build(&f, &l).unwrap();
        let (x, y) = d.training(ModelKind::L1Logit, 60);
        let c = small_config();
        let one = forward_chain_cv(&x, &y, &[ModelSpec::L1Logit { lambda: 0.05 }], 4, &c).unwrap();
        assert_eq!(one.selected, ModelSpec::L1Logit { lambda: 0.05 });
        // both lambdas zero every slope, so their losses tie exactly
        let grid = [
            ModelSpec::L1Logit { lambda: 50.0 },
            ModelSpec::L1Logit { lambda: 100.0 },
        ];
        let tie = forward_chain_cv(&x, &y, &grid, 4, &c).unwrap();
        assert_eq!(tie.losses[0].1, tie.losses[1].1);
        assert_eq!(tie.selected, ModelSpec::L1Logit { lambda: 100.0 });
    }

    #[test]
    fn csv_round_trip() {
        let (f, l) = synthetic(66);
        let s = run_expanding_backtest(&f, &l, &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("forecasts.csv");
        s.write_csv(&p, Some("config_hash=abc")).unwrap();
        let back = ForecastSeries::read_csv(&p).unwrap();
        assert_eq!(back.records, s.records);
    }

    #[test]
    fn short_history_rejected() {
        let (f, l) = synthetic(60);
        assert!(matches!(
            run_expanding_backtest(&f, &l, &small_config()),
            Err(MspiError::InsufficientHistory { .. })
        ));
    }
}
