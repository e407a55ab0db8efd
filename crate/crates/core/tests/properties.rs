mod common;

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mspi::backtest::ModelKind;
use mspi::calendar::YearMonth;
use mspi::econometrics::{
    local_projections, min_cov_eigenvalue, mspi_innovations, ols_hac, Controls,
};
use mspi::evaluation::{auc, brier, ece, ece_from_bins, pr_auc};
use mspi::labels::{label_stress, quantile_linear, MarketMonthly, StressConfig};
use mspi::learners::{
    calibrate, fit_gradient_boosting, fit_logit_l1, fit_logit_l2, fit_logit_l2_from,
    fit_random_forest, gb_score, logit_objective, rf_score, BoostParams, CalibrationMap,
    ForestParams, Penalty, ScoreScale,
};
use mspi::panel::{partition_months, DailyPanel, EligibilityFilter, MarketPoint, MarketSeries, RawObservation, SecurityId};

use common::*;

fn raw_rows() -> impl Strategy<Value = Vec<RawObservation>> {
    let row = (
        0u32..40,
        0u8..12,
        prop::option::of(-0.3f64..0.3),
        prop::option::of(-50.0f64..50.0),
        prop::option::of(0.0f64..1e5),
        any::<bool>(),
        any::<bool>(),
    );
    prop::collection::vec(row, 1..200).prop_map(|rows| {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        rows.into_iter()
            .map(|(day, id, ret, prc, vol, sc, ex)| RawObservation {
                date: start + chrono::Days::new(u64::from(day) * 3),
                security_id: SecurityId::new(&format!("ID{id:02}")),
                ret,
                prc,
                vol,
                shrout: Some(500.0),
                share_class_ok: sc,
                exchange_ok: ex,
            })
            .collect()
    })
}

fn unique_ids(rows: Vec<RawObservation>) -> Vec<RawObservation> {
    let mut seen = std::collections::HashSet::new();
    rows.into_iter()
        .filter(|r| seen.insert((r.date, r.security_id.clone())))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ingest_idempotent_and_partitioned(rows in raw_rows().prop_map(unique_ids)) {
        let filter = EligibilityFilter::default();
        let Ok((panel, summary)) = DailyPanel::from_raw(rows, &filter) else {
            return Ok(());
        };
        let (again, s2) = panel.refilter(&filter).unwrap();
        prop_assert_eq!(s2.rows_dropped(), 0);
        prop_assert_eq!(again.n_observations(), panel.n_observations());
        let per_day: usize = panel.days().iter().map(|d| d.n_stocks()).sum();
        prop_assert_eq!(per_day as u64, summary.rows_retained);

        let market = MarketSeries::from_points(
            panel.calendar().into_iter().map(|date| MarketPoint { date, mkt_ret: 0.001 }).collect(),
        ).unwrap();
        let part = partition_months(&panel, &market).unwrap();
        let mut covered: Vec<NaiveDate> = part.months().iter().flat_map(|b| b.days.clone()).collect();
        covered.sort();
        prop_assert_eq!(covered, panel.calendar());
        for d in panel.calendar() {
            prop_assert_eq!(part.month_of(d).unwrap().month, YearMonth::of(d));
        }
    }

    #[test]
    fn labels_have_no_look_ahead(
        vols in prop::collection::vec(0.05f64..0.6, 40..90),
        rets in prop::collection::vec(-0.12f64..0.1, 90),
        cut in 38usize..90,
    ) {
        let months = months_from(YearMonth::new(1990, 1).unwrap(), vols.len());
        let monthly: Vec<MarketMonthly> = months
            .iter()
            .zip(&vols)
            .zip(&rets)
            .map(|((&month, &sigma_mkt), &r_mkt)| MarketMonthly { month, r_mkt, sigma_mkt })
            .collect();
        let config = StressConfig::default();
        let full = label_stress(&monthly, &config).unwrap();
        let cut = cut.min(monthly.len());
        let part = label_stress(&monthly[..cut], &config).unwrap();
        for (a, b) in part.rows().iter().zip(full.rows()) {
            prop_assert_eq!(a.q_prev.map(f64::to_bits), b.q_prev.map(f64::to_bits));
            prop_assert_eq!(a.stress, b.stress);
        }

        // a lower alpha labels a superset of volatility-branch months
        let lower = StressConfig { vol_quantile: 0.8, ..config };
        let loose = label_stress(&monthly, &lower).unwrap();
        for (hi, lo) in full.rows().iter().zip(loose.rows()) {
            if hi.vol_branch() == Some(true) {
                prop_assert_eq!(lo.vol_branch(), Some(true));
            }
        }
    }

    #[test]
    fn quantile_monotone_in_alpha(
        xs in prop::collection::vec(-5.0f64..5.0, 1..60),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile_linear(&xs, lo).unwrap() <= quantile_linear(&xs, hi).unwrap());
    }

    #[test]
    fn auc_invariant_to_increasing_transform(
        s in prop::collection::vec(-3.0f64..3.0, 4..120),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y: Vec<bool> = s.iter().map(|_| rng.gen_bool(0.4)).collect();
        y[0] = true;
        y[1] = false;
        let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(auc(&s, &y).unwrap().to_bits(), auc(&t, &y).unwrap().to_bits());
        prop_assert_eq!(pr_auc(&s, &y).unwrap().to_bits(), pr_auc(&t, &y).unwrap().to_bits());
        prop_assert!((auc(&s, &y).unwrap() - pair_auc(&s, &y)).abs() <= 1e-12);
    }

    #[test]
    fn brier_decomposition(p in 0.0f64..=1.0, y in prop::collection::vec(any::<bool>(), 1..300)) {
        let r = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        let b = brier(&vec![p; y.len()], &y).unwrap();
        prop_assert!((b - ((p - r).powi(2) + r * (1.0 - r))).abs() <= 1e-12);
    }

    #[test]
    fn ece_matches_its_bins(
        p in prop::collection::vec(0.0f64..=1.0, 10..300),
        seed in any::<u64>(),
        n_bins in 1usize..=10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = p.iter().map(|&pi| rng.gen::<f64>() < pi).collect();
        let e = ece(&p, &y, n_bins).unwrap();
        prop_assert!((ece_from_bins(&e.bins) - e.ece).abs() <= 1e-12);
        prop_assert_eq!(e.bins.iter().map(|b| b.count).sum::<usize>(), p.len());
    }

    #[test]
    fn calibration_preserves_order(
        a in 0.01f64..5.0,
        b in -3.0f64..3.0,
        s1 in -4.0f64..4.0,
        ds in 0.001f64..2.0,
    ) {
        for scale in [ScoreScale::Raw, ScoreScale::Probability] {
            let map = CalibrationMap { a, b, scale, identity_fallback: false };
            let (x1, x2) = match scale {
                ScoreScale::Raw => (s1, s1 + ds),
                ScoreScale::Probability => (logistic(s1), logistic(s1 + ds)),
            };
            prop_assert!(calibrate(&map, x1) < calibrate(&map, x2));
        }
    }

    #[test]
    fn ols_orthogonal_and_hac_psd(seed in any::<u64>(), n in 20usize..120, lag in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.sample(StandardNormal), rng.gen::<f64>()])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.5 + r[1] - 2.0 * r[2] + rng.sample::<f64, _>(StandardNormal) * (1.0 + r[2]))
            .collect();
        let fit = ols_hac(&y, &matrix(&rows), lag).unwrap();
        for j in 0..3 {
            let dot: f64 = rows.iter().zip(&fit.residuals).map(|(r, e)| r[j] * e).sum();
            prop_assert!(dot.abs() < 1e-8);
        }
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(fit.cov[i][j], fit.cov[j][i]);
            }
        }
        prop_assert!(min_cov_eigenvalue(&fit) >= -1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn l1_solution_is_locally_optimal(seed in any::<u64>(), lambda in prop::sample::select(vec![0.0, 1e-3, 0.01, 0.05])) {
        let (x, y) = logit_fixture(seed, 80, 5);
        let m = matrix(&x);
        let fit = fit_logit_l1(&m, &y, lambda).unwrap();
        let at = logit_objective(&m, &y, fit.intercept, &fit.coef, Penalty::L1, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..100 {
            let b0 = fit.intercept + 1e-3 * rng.gen_range(-1.0..1.0);
            let beta: Vec<f64> = fit.coef.iter().map(|b| b + 1e-3 * rng.gen_range(-1.0..1.0)).collect();
            let other = logit_objective(&m, &y, b0, &beta, Penalty::L1, lambda);
            prop_assert!(at <= other, "{} > {}", at, other);
        }
    }

    #[test]
    fn l2_unique_from_any_start(seed in any::<u64>(), lambda in 0.0f64..0.1) {
        let (x, y) = logit_fixture(seed, 60, 4);
        let m = matrix(&x);
        let a = fit_logit_l2(&m, &y, lambda).unwrap();
        let b = fit_logit_l2_from(&m, &y, lambda, 2.0, &[1.0, -1.0, 0.5, 3.0]).unwrap();
        prop_assert!((a.intercept - b.intercept).abs() < 1e-8);
        for (p, q) in a.coef.iter().zip(&b.coef) {
            prop_assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn forest_and_boost_scores_in_range(seed in any::<u64>()) {
        let (x, y) = logit_fixture(seed, 60, 3);
        let m = matrix(&x);
        let forest = fit_random_forest(&m, &y, &ForestParams { n_trees: 15, ..ForestParams::default() }, seed).unwrap();
        let boost = fit_gradient_boosting(&m, &y, &BoostParams { n_stages: 20, ..BoostParams::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let f = rf_score(&forest, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(gb_score(&boost, &q).unwrap().is_finite());
        }
    }

    #[test]
    fn innovations_invariant_to_affine_controls(seed in any::<u64>(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let series = synthetic_series(120, &[ModelKind::L1Logit], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<(YearMonth, Vec<f64>)> = series
            .months()
            .into_iter()
            .map(|m| (m, vec![rng.sample(StandardNormal), rng.gen::<f64>()]))
            .collect();
        let base = Controls { names: vec!["a".into(), "b".into()], values: values.iter().cloned().collect() };
        let moved = Controls {
            names: base.names.clone(),
            values: values.iter().map(|(m, v)| (*m, vec![scale * v[0] + shift, v[1] / scale - shift])).collect(),
        };
        let u1 = mspi_innovations(&series, ModelKind::L1Logit, &base, 3).unwrap();
        let u2 = mspi_innovations(&series, ModelKind::L1Logit, &moved, 3).unwrap();
        for (a, b) in u1.fitted.iter().zip(&u2.fitted) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn lp_h0_without_controls_is_plain_ols(seed in any::<u64>()) {
        let series = synthetic_series(100, &[ModelKind::L1Logit], seed);
        let u = mspi_innovations(&series, ModelKind::L1Logit, &Controls::none(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: std::collections::BTreeMap<YearMonth, f64> =
            u.months.iter().map(|&m| (m, rng.sample(StandardNormal))).collect();
        let lp = local_projections(&u, &y, &Controls::none(), 0).unwrap();
        let rows: Vec<Vec<f64>> = u.residuals.iter().map(|&e| vec![1.0, e]).collect();
        let ys: Vec<f64> = u.months.iter().map(|m| y[m]).collect();
        let direct = ols_hac(&ys, &matrix(&rows), 1).unwrap();
        prop_assert_eq!(lp.horizons[0].b, direct.coef[1]);
        prop_assert_eq!(lp.horizons[0].se, direct.se[1]);
    }
}

#[test]
fn l1_sparsity_shrinks_along_the_path() {
    let grid = [1e-4, 1e-3, 0.01, 0.03, 0.05, 0.1, 0.3, 1.0];
    for seed in 0..10 {
        let (x, y) = logit_fixture(300 + seed, 100, 8);
        let m = matrix(&x);
        let nnz: Vec<usize> = grid
            .iter()
            .map(|&l| fit_logit_l1(&m, &y, l).unwrap().n_nonzero())
            .collect();
        assert!(nnz.windows(2).all(|w| w[0] >= w[1]), "seed {seed}: {nnz:?}");
        assert_eq!(*nnz.last().unwrap(), 0);
    }
}
