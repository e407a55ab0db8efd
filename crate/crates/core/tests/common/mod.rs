#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mspi::backtest::{ForecastRecord, ForecastSeries, ModelKind};
use mspi::calendar::YearMonth;
use mspi::features::{build_features, FeatureMatrix, TailThreshold};
use mspi::labels::{label_stress, market_monthly, LabelSeries, StressConfig};
use mspi::learners::Matrix;
use mspi::panel::{partition_months, DailyPanel, MarketSeries};

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Unpenalized logistic MLE by plain Newton-Raphson: `[intercept, coef...]`.
pub fn newton_mle(x: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let p = x[0].len() + 1;
    let mut w = vec![0.0; p];
    for _ in 0..100 {
        let mut g = vec![0.0; p];
        let mut h = vec![vec![0.0; p]; p];
        for (row, &yi) in x.iter().zip(y) {
            let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
            let eta: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mu = logistic(eta);
            let r = mu - f64::from(u8::from(yi));
            for j in 0..p {
                g[j] += r * z[j];
                for k in 0..p {
                    h[j][k] += mu * (1.0 - mu) * z[j] * z[k];
                }
            }
        }
        let step = solve(h, g.clone());
        for j in 0..p {
            w[j] -= step[j];
        }
        if g.iter().all(|v| v.abs() < 1e-12) {
            return w;
        }
    }
    assert!(w.iter().all(|v| v.is_finite()), "Newton oracle diverged");
    w
}

/// Non-separable logistic data: `n` rows, `p` standard normal features.
pub fn logit_fixture(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p).map(|j| [0.8, -0.5, 0.3, 0.0, 0.4][j % 5]).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| {
            let eta: f64 = -0.3 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            rng.gen::<f64>() < logistic(eta)
        })
        .collect();
    (x, y)
}

pub fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

/// Pair-counting AUC: concordant pairs plus half the ties.
pub fn pair_auc(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Features and labels recomputed from daily data.
pub fn monthly_inputs(panel: &DailyPanel, market: &MarketSeries) -> (FeatureMatrix, LabelSeries) {
    let part = partition_months(panel, market).unwrap();
    let features = build_features(panel, &part, TailThreshold::default()).unwrap();
    let sc = StressConfig::default();
    let monthly = market_monthly(market, &part, &sc).unwrap();
    (features, label_stress(&monthly, &sc).unwrap())
}

pub fn months_from(start: YearMonth, n: usize) -> Vec<YearMonth> {
    std::iter::successors(Some(start), |m| Some(m.succ()))
        .take(n)
        .collect()
}

/// A hand-built forecast series: AR(1) probabilities for each model with
/// outcomes loosely tied to the first model.
pub fn synthetic_series(n: usize, models: &[ModelKind], seed: u64) -> ForecastSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let months = months_from(YearMonth::new(1990, 1).unwrap(), n);
    let mut state = vec![0.0f64; models.len()];
    let mut per_month = Vec::new();
    for _ in 0..n {
        for s in state.iter_mut() {
            *s = 0.7 * *s + rng.sample::<f64, _>(StandardNormal);
        }
        let y = rng.gen::<f64>() < logistic(state[0] - 1.5);
        let vol = 0.15 + 0.02 * state[0].abs() + 0.01 * rng.sample::<f64, _>(StandardNormal);
        let ret = 0.01 - 0.01 * state[0] + 0.03 * rng.sample::<f64, _>(StandardNormal);
        per_month.push((state.clone(), y, vol, ret));
    }
    let mut records = Vec::new();
    for (t, m) in months.iter().enumerate() {
        for (k, &model) in models.iter().enumerate() {
            let raw = per_month[t].0[k] - 1.5;
            let next = per_month.get(t + 1);
            records.push(ForecastRecord {
                month: *m,
                model,
                raw_score: raw,
                probability: logistic(raw),
                y_next: next.map(|n| n.1),
                next_vol: next.map(|n| n.2),
                next_ret: next.map(|n| n.3),
            });
        }
    }
    ForecastSeries {
        records,
        ..ForecastSeries::default()
    }
}
