use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mspi::backtest::{BacktestConfig, ModelKind};
use mspi::econometrics::Outcome;
use mspi::evaluation::{BootstrapOptions, DEFAULT_BIN_EDGES, DEFAULT_ECE_BINS};
use mspi::features::TailThreshold;
use mspi::labels::StressConfig;
use mspi::panel::EligibilityFilter;
use mspi::sim::SimConfig;
use mspi::{MspiError, Result};

/// Control set for the local-projection regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpControls {
    /// Lagged `(R_mkt, sigma_mkt)`, the same set as the innovation regression.
    Market,
    None,
}

/// Everything the pipeline reads, in one JSON file. Missing keys take their
/// defaults, unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Daily panel CSV. Defaults to `<out>/panel.csv`, as written by `simulate`.
    pub panel_path: Option<PathBuf>,
    /// Daily market return CSV. Defaults to `<out>/market.csv`.
    pub market_path: Option<PathBuf>,
    pub sim: SimConfig,
    pub filter: EligibilityFilter,
    pub tau: f64,
    pub stress: StressConfig,
    pub backtest: BacktestConfig,
    pub ece_bins: usize,
    pub bin_edges: Vec<f64>,
    pub bootstrap: BootstrapOptions,
    pub benchmark: ModelKind,
    /// Model whose probabilities serve as the index in the regressions.
    pub index_model: ModelKind,
    /// Newey-West lag; `null` picks floor(4 (n/100)^(2/9)) from the sample size.
    pub hac_lag: Option<usize>,
    pub crash_cutoff: f64,
    pub lp_horizon: usize,
    pub lp_outcome: Outcome,
    pub lp_controls: LpControls,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            panel_path: None,
            market_path: None,
            sim: SimConfig::default(),
            filter: EligibilityFilter::default(),
            tau: TailThreshold::default().get(),
            stress: StressConfig::default(),
            backtest: BacktestConfig::default(),
            ece_bins: DEFAULT_ECE_BINS,
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            bootstrap: BootstrapOptions::default(),
            benchmark: ModelKind::L2Logit,
            index_model: ModelKind::L1Logit,
            hac_lag: None,
            crash_cutoff: -0.05,
            lp_horizon: 12,
            lp_outcome: Outcome::Volatility,
            lp_controls: LpControls::Market,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MspiError::config("--config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| MspiError::config("--config", format!("{}: {e}", path.display())))
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.backtest.seed = seed;
        self.bootstrap.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.filter.validate()?;
        TailThreshold::new(self.tau)?;
        self.stress.validate()?;
        self.backtest.validate()?;
        self.bootstrap.validate()?;
        if self.ece_bins == 0 {
            return Err(MspiError::config("ece_bins", "must be at least 1"));
        }
        if !(self.crash_cutoff.is_finite() && self.crash_cutoff < 0.0) {
            return Err(MspiError::config("crash_cutoff", "must be a negative return"));
        }
        for (field, m) in [("benchmark", self.benchmark), ("index_model", self.index_model)] {
            if !self.backtest.models.contains(&m) {
                return Err(MspiError::config(
                    field,
                    format!("model {m} is not in backtest.models"),
                ));
            }
        }
        Ok(())
    }

    pub fn tail_threshold(&self) -> TailThreshold {
        TailThreshold::new(self.tau).expect("validated")
    }

    pub fn hac_lag_for(&self, n: usize) -> usize {
        self.hac_lag
            .unwrap_or_else(|| (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize)
    }
}
