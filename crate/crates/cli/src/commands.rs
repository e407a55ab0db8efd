use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use mspi::backtest::{run_backtest_with_models, ForecastSeries, Forecaster, ModelKind};
use mspi::econometrics::{
    crash_regression, local_projections, mspi_innovations, outcome_series,
    predictive_vol_regression, write_lp_csv, Controls, CrashRegression, LocalProjectionResult,
    Outcome, RegressionResult, VolRegression,
};
use mspi::evaluation::{
    binned_outcomes, bootstrap_table, evaluate, write_bins_csv, write_curves_csv, BinnedOutcomes,
    BootstrapTable, MetricsReport,
};
use mspi::features::{build_features, FeatureMatrix};
use mspi::labels::{label_stress, market_monthly, LabelSeries};
use mspi::panel::{load_daily_panel, load_market_series, partition_months, IngestSummary};
use mspi::sim::{simulate, write_true_regime};
use mspi::{read_json, write_json, MspiError, Result};

use crate::config::{LpControls, PipelineConfig};

/// A JSON artifact tagged with the hash of the config that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub hash: String,
}

impl Context {
    pub fn new(config: PipelineConfig, out: PathBuf) -> Context {
        let hash = mspi::config_hash(&config);
        Context { config, out, hash }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn comment(&self) -> String {
        format!("config_hash={}", self.hash)
    }

    fn panel_path(&self) -> PathBuf {
        self.config
            .panel_path
            .clone()
            .unwrap_or_else(|| self.path("panel.csv"))
    }

    fn market_path(&self) -> PathBuf {
        self.config
            .market_path
            .clone()
            .unwrap_or_else(|| self.path("market.csv"))
    }

    fn write<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let path = self.path(name);
        write_json(
            &path,
            &Stamped {
                config_hash: self.hash.clone(),
                body,
            },
        )?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn read<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let path = require(self.path(name))?;
        Ok(read_json::<Stamped<T>>(&path)?.body)
    }

    fn forecasts(&self) -> Result<ForecastSeries> {
        ForecastSeries::read_csv(&require(self.path("forecasts.csv"))?)
    }

    fn labels(&self) -> Result<LabelSeries> {
        LabelSeries::read_csv(&require(self.path("labels.csv"))?)
    }
}

/// Fails with the path when an upstream artifact is absent.
fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(MspiError::io(
            &path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "missing upstream artifact; run the producing subcommand first",
            ),
        ))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| MspiError::io(dir, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulationSummary {
    n_days: usize,
    n_observations: usize,
    n_months: usize,
    stress_months: usize,
    stationary_stress_share: f64,
    ingest: IngestSummary,
}

pub fn simulate_cmd(ctx: &Context) -> Result<()> {
    ensure_dir(&ctx.out)?;
    let sim = simulate(&ctx.config.sim)?;
    let c = ctx.comment();
    sim.panel.write_csv(&ctx.path("panel.csv"), Some(&c))?;
    sim.market.write_csv(&ctx.path("market.csv"), Some(&c))?;
    write_true_regime(&ctx.path("true_regime.csv"), &sim.true_regime, Some(&c))?;
    ctx.write(
        "simulation.json",
        SimulationSummary {
            n_days: sim.panel.days().len(),
            n_observations: sim.panel.n_observations(),
            n_months: sim.true_regime.len(),
            stress_months: sim.true_regime.iter().filter(|r| r.stress).count(),
            stationary_stress_share: ctx.config.sim.stationary_stress_share(),
            ingest: sim.ingest,
        },
    )
}

pub fn features_cmd(ctx: &Context) -> Result<()> {
    let panel_path = require(ctx.panel_path())?;
    let market_path = require(ctx.market_path())?;
    ensure_dir(&ctx.out)?;
    let (panel, ingest) = load_daily_panel(&panel_path, &ctx.config.filter)?;
    let market = load_market_series(&market_path)?;
    let partition = partition_months(&panel, &market)?;
    let features = build_features(&panel, &partition, ctx.config.tail_threshold())?;
    features.write_csv(&ctx.path("features.csv"), Some(&ctx.comment()))?;
    ctx.write("ingest.json", ingest)
}

pub fn label_cmd(ctx: &Context) -> Result<()> {
    let panel_path = require(ctx.panel_path())?;
    let market_path = require(ctx.market_path())?;
    ensure_dir(&ctx.out)?;
    let (panel, _) = load_daily_panel(&panel_path, &ctx.config.filter)?;
    let market = load_market_series(&market_path)?;
    let partition = partition_months(&panel, &market)?;
    let monthly = market_monthly(&market, &partition, &ctx.config.stress)?;
    let labels = label_stress(&monthly, &ctx.config.stress)?;
    labels.write_csv(&ctx.path("labels.csv"), Some(&ctx.comment()))
}

#[derive(Debug, Serialize, Deserialize)]
struct FittedModels {
    month: Option<String>,
    forecasters: Vec<Forecaster>,
}

pub fn backtest_cmd(ctx: &Context) -> Result<()> {
    let features = FeatureMatrix::read_csv(&require(ctx.path("features.csv"))?)?;
    let labels = ctx.labels()?;
    let (mut series, last) = run_backtest_with_models(&features, &labels, &ctx.config.backtest)?;
    series.config_hash = ctx.hash.clone();
    if !series.fallbacks.is_empty() {
        log::warn!(
            "{} model-months used a fallback; see provenance.json",
            series.fallbacks.len()
        );
    }
    series.write_csv(&ctx.path("forecasts.csv"), Some(&ctx.comment()))?;
    write_json(
        &ctx.path("provenance.json"),
        &series.provenance(&ctx.config.backtest),
    )?;
    ctx.write(
        "models.json",
        FittedModels {
            month: last.first().map(|f| f.month.to_string()),
            forecasters: last,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BinTables {
    pub edges: Vec<f64>,
    pub tables: Vec<BinnedOutcomes>,
}

fn write_bins(ctx: &Context, series: &ForecastSeries) -> Result<()> {
    let tables = series
        .models()
        .into_iter()
        .map(|m| binned_outcomes(series, m, &ctx.config.bin_edges))
        .collect::<Result<Vec<_>>>()?;
    write_bins_csv(&ctx.path("bins.csv"), &tables, Some(&ctx.comment()))?;
    ctx.write(
        "bins.json",
        BinTables {
            edges: ctx.config.bin_edges.clone(),
            tables,
        },
    )
}

pub fn evaluate_cmd(ctx: &Context) -> Result<()> {
    let series = ctx.forecasts()?;
    let (report, curves) = evaluate(&series, ctx.config.ece_bins)?;
    ctx.write("metrics.json", report)?;
    write_curves_csv(&ctx.path("curves.csv"), &curves, Some(&ctx.comment()))?;
    write_bins(ctx, &series)
}

pub fn bins_cmd(ctx: &Context) -> Result<()> {
    let series = ctx.forecasts()?;
    write_bins(ctx, &series)
}

pub fn bootstrap_cmd(ctx: &Context) -> Result<()> {
    let series = ctx.forecasts()?;
    let table = bootstrap_table(&series, ctx.config.benchmark, &ctx.config.bootstrap)?;
    ctx.write("bootstrap.json", table)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InnovationSummary {
    pub n: usize,
    pub dropped: Vec<String>,
    pub regression: RegressionResult,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegressionArtifact {
    pub model: ModelKind,
    pub hac_lag: usize,
    pub volatility: VolRegression,
    pub crash: CrashRegression,
    pub innovations: InnovationSummary,
}

fn usable_months(series: &ForecastSeries, model: ModelKind) -> usize {
    series
        .for_model(model)
        .iter()
        .filter(|r| r.next_vol.is_some())
        .count()
}

pub fn regress_cmd(ctx: &Context) -> Result<()> {
    let series = ctx.forecasts()?;
    let labels = ctx.labels()?;
    let model = ctx.config.index_model;
    let controls = Controls::market(&labels);
    let lag = ctx.config.hac_lag_for(usable_months(&series, model));
    let volatility = predictive_vol_regression(&series, model, &controls, lag)?;
    let crash = crash_regression(&series, model, &controls, ctx.config.crash_cutoff, lag)?;
    let u = mspi_innovations(&series, model, &controls, lag)?;
    ctx.write(
        "regression.json",
        RegressionArtifact {
            model,
            hac_lag: lag,
            volatility,
            crash,
            innovations: InnovationSummary {
                n: u.months.len(),
                dropped: u.dropped,
                regression: u.regression,
            },
        },
    )
}

pub fn lp_cmd(ctx: &Context) -> Result<()> {
    let series = ctx.forecasts()?;
    let labels = ctx.labels()?;
    let model = ctx.config.index_model;
    let controls = Controls::market(&labels);
    let lag = ctx.config.hac_lag_for(usable_months(&series, model));
    let u = mspi_innovations(&series, model, &controls, lag)?;
    let features = match ctx.config.lp_outcome {
        Outcome::Feature { .. } => Some(FeatureMatrix::read_csv(&require(
            ctx.path("features.csv"),
        )?)?),
        _ => None,
    };
    let y = outcome_series(&ctx.config.lp_outcome, &labels, features.as_ref())?;
    let w = match ctx.config.lp_controls {
        LpControls::Market => controls,
        LpControls::None => Controls::none(),
    };
    let lp: LocalProjectionResult = local_projections(&u, &y, &w, ctx.config.lp_horizon)?;
    write_lp_csv(&ctx.path("local_projections.csv"), &lp, Some(&ctx.comment()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub ece_bins: usize,
    pub block_len: usize,
    pub reps: usize,
    pub index_model: ModelKind,
    pub metrics: MetricsReport,
    pub bins: BinTables,
    pub bootstrap: BootstrapTable,
    pub regression: RegressionArtifact,
}

pub fn report_cmd(ctx: &Context) -> Result<()> {
    let metrics: MetricsReport = ctx.read("metrics.json")?;
    let bins: BinTables = ctx.read("bins.json")?;
    let bootstrap: BootstrapTable = ctx.read("bootstrap.json")?;
    let regression: RegressionArtifact = ctx.read("regression.json")?;
    let report = Report {
        ece_bins: metrics.ece_bins,
        block_len: bootstrap.block_len,
        reps: bootstrap.reps,
        index_model: ctx.config.index_model,
        metrics,
        bins,
        bootstrap,
        regression,
    };
    let text = crate::report::render(&report);
    let txt = ctx.path("report.txt");
    std::fs::write(&txt, text).map_err(|e| MspiError::io(&txt, e))?;
    ctx.write("report.json", &report)
}
