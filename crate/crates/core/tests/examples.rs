mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mspi::backtest::{
    forward_chain_cv, run_expanding_backtest, BacktestConfig, ForecastRecord, ForecastSeries,
    ModelKind, ModelSpec,
};
use mspi::calendar::YearMonth;
use mspi::econometrics::{
    crash_regression, local_projections, mspi_innovations, predictive_vol_regression, Controls,
};
use mspi::features::FeatureMatrix;
use mspi::labels::LabelSeries;
use mspi::sim::{simulate, SimConfig, SimOutput};

use common::*;

const L1: ModelKind = ModelKind::L1Logit;

struct Fixture {
    sim: SimOutput,
    features: FeatureMatrix,
    labels: LabelSeries,
    config: BacktestConfig,
    series: ForecastSeries,
}

fn small_backtest_config() -> BacktestConfig {
    BacktestConfig {
        models: vec![L1],
        l1_lambda_grid: vec![1e-3, 1e-2, 1e-1],
        ..BacktestConfig::default()
    }
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let sim = simulate(&SimConfig {
            n_stocks: 60,
            n_years: 25,
            ..SimConfig::default()
        })
        .unwrap();
        let (features, labels) = monthly_inputs(&sim.panel, &sim.market);
        let config = small_backtest_config();
        let series = run_expanding_backtest(&features, &labels, &config).unwrap();
        Fixture { sim, features, labels, config, series }
    })
}

/// Forecast series from explicit per-month values for a single model.
fn series_of(prob: &[f64], vol: &[f64], ret: &[f64]) -> ForecastSeries {
    let months = months_from(YearMonth::new(1980, 1).unwrap(), prob.len());
    let records = months
        .iter()
        .enumerate()
        .map(|(t, &month)| ForecastRecord {
            month,
            model: L1,
            raw_score: prob[t],
            probability: prob[t],
            y_next: None,
            next_vol: Some(vol[t]),
            next_ret: Some(ret[t]),
        })
        .collect();
    ForecastSeries { records, ..ForecastSeries::default() }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn cv_prefers_heaviest_penalty_on_noise() {
    let config = BacktestConfig::default();
    let grid = config.grid(L1);
    let largest = config.l1_lambda_grid.iter().copied().fold(f64::MIN, f64::max);
    let mut hits = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x: Vec<Vec<f64>> = (0..150).map(|_| normals(&mut rng, 8)).collect();
        let y: Vec<bool> = (0..150).map(|_| rng.gen_bool(0.2)).collect();
        let cv = forward_chain_cv(&matrix(&x), &y, &grid, 5, &config).unwrap();
        if cv.selected == (ModelSpec::L1Logit { lambda: largest }) {
            hits += 1;
        }
    }
    assert!(hits >= 40, "largest lambda chosen {hits}/50 times");
}

#[test]
fn simulated_stress_months_are_more_dispersed() {
    let f = fixture();
    let col = f.features.column("xs_std").unwrap();
    let regime: BTreeMap<YearMonth, bool> =
        f.sim.true_regime.iter().map(|r| (r.month, r.stress)).collect();
    let (mut calm, mut stress) = (Vec::new(), Vec::new());
    for (m, v) in f.features.months().iter().zip(col) {
        if regime[m] { stress.push(v) } else { calm.push(v) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!stress.is_empty() && !calm.is_empty());
    assert!(mean(&stress) > mean(&calm));
}

#[test]
fn simulated_panel_is_well_formed() {
    let f = fixture();
    for day in f.sim.panel.days() {
        for o in &day.observations {
            assert!(o.ret.is_finite());
            assert!(o.vol.map_or(true, |v| v >= 0.0));
        }
    }
    assert!(f.sim.market.points().iter().all(|p| p.mkt_ret.is_finite()));
}

#[test]
fn long_run_regime_share_matches_chain() {
    let config = SimConfig {
        n_stocks: 3,
        n_years: 200,
        trading_days_per_year: 24,
        ..SimConfig::default()
    };
    let sim = simulate(&config).unwrap();
    let n = sim.true_regime.len() as f64;
    let share = sim.true_regime.iter().filter(|r| r.stress).count() as f64 / n;
    let pi = config.p_calm_to_stress / (config.p_calm_to_stress + config.p_stress_to_calm);
    let rho = 1.0 - config.p_calm_to_stress - config.p_stress_to_calm;
    let se = (pi * (1.0 - pi) / n * (1.0 + rho) / (1.0 - rho)).sqrt();
    assert!((share - pi).abs() < 3.0 * se, "share {share} vs {pi} (se {se})");
}

#[test]
fn null_vol_slope_is_rarely_significant() {
    let mut quiet = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 240;
        let p: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let vol: Vec<f64> = normals(&mut rng, n).iter().map(|z| 0.15 + 0.02 * z).collect();
        let ret = normals(&mut rng, n);
        let fit = predictive_vol_regression(&series_of(&p, &vol, &ret), L1, &Controls::none(), 4)
            .unwrap();
        if fit.full.t_stat("MSPI").unwrap().abs() < 2.0 {
            quiet += 1;
        }
    }
    assert!(quiet >= 90, "{quiet}/100");
}

#[test]
fn backtest_index_predicts_vol_and_crashes() {
    let f = fixture();
    let controls = Controls::market(&f.labels);
    let vol = predictive_vol_regression(&f.series, L1, &controls, 4).unwrap();
    assert!(vol.full.coef_of("MSPI").unwrap() > 0.0);
    let crash = crash_regression(&f.series, L1, &Controls::none(), -0.05, 4).unwrap();
    assert!(crash.lpm.coef_of("MSPI").unwrap() > 0.0);
}

#[test]
fn backtest_is_deterministic_and_hyperparameters_frozen() {
    let f = fixture();
    let again = run_expanding_backtest(&f.features, &f.labels, &f.config).unwrap();
    assert_eq!(again, f.series);

    // selection only sees the initial window
    let last = f.series.months()[0];
    let (short_features, short_labels) = (
        f.features.truncated_through(last),
        f.labels.truncated_through(last),
    );
    let short = run_expanding_backtest(&short_features, &short_labels, &f.config).unwrap();
    assert_eq!(short.selected, f.series.selected);
}

#[test]
fn lpm_is_saturated_for_two_valued_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 400;
    let p: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.4 } else { 0.1 }).collect();
    let ret: Vec<f64> = p.iter().map(|&pi| if rng.gen::<f64>() < pi { -0.1 } else { 0.01 }).collect();
    let crash = crash_regression(&series_of(&p, &vec![0.1; n], &ret), L1, &Controls::none(), -0.05, 2)
        .unwrap();
    let rate = |level: f64| {
        let hits: Vec<bool> = p.iter().zip(&ret).filter(|(&pi, _)| pi == level).map(|(_, &r)| r <= -0.05).collect();
        hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
    };
    let a = crash.lpm.coef_of("const").unwrap();
    let b = crash.lpm.coef_of("MSPI").unwrap();
    assert!((a + 0.1 * b - rate(0.1)).abs() < 1e-10);
    assert!((a + 0.4 * b - rate(0.4)).abs() < 1e-10);
}

#[test]
fn white_noise_innovations_keep_their_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 300;
    let p: Vec<f64> = normals(&mut rng, n);
    let u = mspi_innovations(&series_of(&p, &vec![0.1; n], &vec![0.0; n]), L1, &Controls::none(), 2)
        .unwrap();
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let ratio = sd(&u.residuals) / sd(&p);
    assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
}

#[test]
fn lp_null_responses_are_mostly_insignificant() {
    let (mut quiet, mut total) = (0, 0);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = 200;
        let p = normals(&mut rng, n);
        let u = mspi_innovations(&series_of(&p, &vec![0.1; n], &vec![0.0; n]), L1, &Controls::none(), 2)
            .unwrap();
        let y: BTreeMap<YearMonth, f64> =
            u.months.iter().map(|&m| (m, rng.sample(StandardNormal))).collect();
        for h in local_projections(&u, &y, &Controls::none(), 12).unwrap().horizons {
            total += 1;
            if h.b.abs() < 2.0 * h.se {
                quiet += 1;
            }
        }
    }
    assert!(quiet as f64 >= 0.9 * total as f64, "{quiet}/{total}");
}

#[test]
fn lp_recovers_one_month_delay() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 300;
    let p = normals(&mut rng, n);
    let u = mspi_innovations(&series_of(&p, &vec![0.1; n], &vec![0.0; n]), L1, &Controls::none(), 2)
        .unwrap();
    let y: BTreeMap<YearMonth, f64> = u
        .months
        .iter()
        .zip(&u.residuals)
        .map(|(m, &e)| (m.succ(), e))
        .collect();
    let lp = local_projections(&u, &y, &Controls::none(), 6).unwrap();
    for h in &lp.horizons {
        if h.h == 1 {
            assert!((h.b - 1.0).abs() < 1e-10);
        } else {
            assert!(h.b.abs() < 0.3, "h={} b={}", h.h, h.b);
        }
    }
}
