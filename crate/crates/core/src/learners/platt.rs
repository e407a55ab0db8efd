//! Platt scaling: `p = Λ(a·s + b)` fitted on held-out raw scores.
//!
//! Targets are smoothed to `(k+1)/(k+2)` and `1/(m+2)` as in Platt's original
//! recipe, which keeps the optimum finite when the segment is separable.
//! Probability-valued scores (forest votes) are mapped to log-odds first, so
//! `a = 1, b = 0` is the identity on the probability scale.

use serde::{Deserialize, Serialize};

use super::logit::{clamp_prob, logistic};
use super::{both_classes, laplace_rate};
use crate::error::{MspiError, Result};

const MAX_ITER: usize = 100;

/// Probability scores are clamped to `[VOTE_FLOOR, 1 - VOTE_FLOOR]` before
/// taking log-odds, so unanimous votes stay finite.
pub const VOTE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// Scores enter the map as given.
    #[default]
    Raw,
    /// Scores are probabilities; the map sees their log-odds.
    Probability,
}

impl ScoreScale {
    fn transform(self, s: f64) -> f64 {
        match self {
            ScoreScale::Raw => s,
            ScoreScale::Probability => {
                let p = s.clamp(VOTE_FLOOR, 1.0 - VOTE_FLOOR);
                (p / (1.0 - p)).ln()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub scale: ScoreScale,
    /// The segment had one class; `calibrate` returns the clamped raw score.
    pub identity_fallback: bool,
}

impl CalibrationMap {
    pub fn identity() -> CalibrationMap {
        CalibrationMap {
            a: 1.0,
            b: 0.0,
            scale: ScoreScale::Raw,
            identity_fallback: true,
        }
    }
}

pub fn calibrate(map: &CalibrationMap, score: f64) -> f64 {
    if map.identity_fallback {
        clamp_prob(score)
    } else {
        clamp_prob(logistic(map.a * map.scale.transform(score) + map.b))
    }
}

fn objective(s: &[f64], t: &[f64], a: f64, b: f64) -> f64 {
    s.iter()
        .zip(t)
        .map(|(&si, &ti)| {
            let z = a * si + b;
            // log(1 + e^z) - t z
            let sp = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            sp - ti * z
        })
        .sum::<f64>()
        / s.len() as f64
}

pub fn fit_platt(scores: &[f64], y: &[bool]) -> Result<CalibrationMap> {
    fit_platt_with(scores, y, ScoreScale::Raw)
}

pub fn fit_platt_with(scores: &[f64], y: &[bool], scale: ScoreScale) -> Result<CalibrationMap> {
    if scores.len() != y.len() {
        return Err(MspiError::DimensionMismatch {
            expected: scores.len(),
            got: y.len(),
        });
    }
    if scores.is_empty() {
        return Err(MspiError::EmptySeries("calibration segment".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MspiError::Numeric("non-finite calibration score".into()));
    }
    if scale == ScoreScale::Probability && scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(MspiError::Numeric("probability score outside [0, 1]".into()));
    }
    if !both_classes(y) {
        log::debug!("single-class calibration segment; using the raw score");
        return Ok(CalibrationMap::identity());
    }
    let transformed: Vec<f64> = scores.iter().map(|&s| scale.transform(s)).collect();
    let scores = &transformed[..];
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let r = laplace_rate(y);
        return Ok(CalibrationMap {
            a: 0.0,
            b: (r / (1.0 - r)).ln(),
            scale,
            identity_fallback: false,
        });
    }

    let k = y.iter().filter(|&&v| v).count() as f64;
    let m = y.len() as f64 - k;
    let t_pos = (k + 1.0) / (k + 2.0);
    let t_neg = 1.0 / (m + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v { t_pos } else { t_neg }).collect();

    // work on centered, scaled scores and map back at the end
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { hi - lo };
    let z: Vec<f64> = scores.iter().map(|s| (s - mu) / sd).collect();

    let rate = (k + 1.0) / (n + 2.0);
    let (mut a, mut b) = (0.0, (rate / (1.0 - rate)).ln());
    let mut obj = objective(&z, &t, a, b);
    for _ in 0..MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &ti) in z.iter().zip(&t) {
            let p = logistic(a * zi + b);
            let r = p - ti;
            let w = p * (1.0 - p);
            ga += r * zi;
            gb += r;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        let (ga, gb, haa, hab, hbb) = (ga / n, gb / n, haa / n, hab / n, hbb / n);
        if ga.abs().max(gb.abs()) < 1e-13 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let (ca, cb) = (a - step * da, b - step * db);
            let c = objective(&z, &t, ca, cb);
            if c.is_finite() && c <= obj {
                a = ca;
                b = cb;
                obj = c;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(MspiError::Numeric("Platt fit diverged".into()));
    }
    Ok(CalibrationMap {
        a: a / sd,
        b: b - a * mu / sd,
        scale,
        identity_fallback: false,
    })
}
