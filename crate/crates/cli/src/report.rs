use std::fmt::Write;

use crate::commands::Report;

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text summary: forecast metrics, binned outcomes of the index model,
/// bootstrap differences, then the predictive regressions.
pub fn render(r: &Report) -> String {
    let mut s = String::new();
    let m = &r.metrics;
    let _ = writeln!(s, "Out-of-sample forecast performance");
    let _ = writeln!(
        s,
        "Sample {}..{}, N = {}, event rate = {:.3}",
        m.first_month, m.last_month, m.n, m.event_rate
    );
    let _ = writeln!(
        s,
        "{:<20} {:>7} {:>7} {:>7} {:>8} {:>7}",
        "model", "AUC", "PR-AUC", "Brier", "LogLoss", "ECE"
    );
    for (model, v) in &m.models {
        let _ = writeln!(
            s,
            "{:<20} {:>7.3} {:>7.3} {:>7.3} {:>8.3} {:>7.3}",
            model.to_string(),
            v.auc,
            v.pr_auc,
            v.brier,
            v.log_loss,
            v.ece
        );
    }
    let _ = writeln!(s, "ECE bins: {} (equal-mass)", r.ece_bins);

    let _ = writeln!(s);
    let _ = writeln!(s, "Next-month outcomes by forecast probability ({})", r.index_model);
    let _ = writeln!(
        s,
        "{:<13} {:>5} {:>9} {:>11} {:>9} {:>9}",
        "bin", "N", "mean p", "stress rate", "next vol", "next ret"
    );
    if let Some(t) = r.bins.tables.iter().find(|t| t.model == r.index_model) {
        for b in &t.bins {
            let _ = writeln!(
                s,
                "{:<13} {:>5} {:>9} {:>11} {:>9} {:>9}",
                format!("[{:.2}, {:.2}{}", b.lo, b.hi, if b.hi == 1.0 { "]" } else { ")" }),
                b.n,
                opt(b.mean_prob, 3),
                opt(b.stress_rate, 3),
                opt(b.mean_next_vol, 3),
                opt(b.mean_next_ret, 4)
            );
        }
    }

    let b = &r.bootstrap;
    let _ = writeln!(s);
    let _ = writeln!(s, "Block-bootstrap differences versus {}", b.benchmark);
    let _ = writeln!(
        s,
        "Block length: {} months, replications: {}, seed: {}, N = {}",
        r.block_len, r.reps, b.seed, b.n_months
    );
    let _ = writeln!(
        s,
        "{:<8} {:<20} {:>9} {:>21} {:>7}",
        "metric", "model", "delta", "95% CI", "p"
    );
    for c in &b.rows {
        let _ = writeln!(
            s,
            "{:<8} {:<20} {:>9.4} {:>21} {:>7.3}",
            c.metric.label(),
            c.model.to_string(),
            c.delta,
            format!("[{:.4}, {:.4}]", c.ci_lo, c.ci_hi),
            c.p_value
        );
    }

    let g = &r.regression;
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Predictive regressions ({}, Newey-West lag {})",
        g.model, g.hac_lag
    );
    let full = &g.volatility.full;
    if let (Some(c), Some(t)) = (full.coef_of("MSPI"), full.t_stat("MSPI")) {
        let _ = writeln!(
            s,
            "next-month volatility: gamma = {c:.4} (t = {t:.2}), R2 = {:.3}, delta R2 = {:.3}, N = {}",
            full.r2, g.volatility.delta_r2, full.n
        );
    }
    let lpm = &g.crash.lpm;
    if let (Some(c), Some(t)) = (lpm.coef_of("MSPI"), lpm.t_stat("MSPI")) {
        let _ = writeln!(
            s,
            "crash (R <= {}): LPM slope = {c:.4} (t = {t:.2}), crash rate = {:.3}, N = {}",
            g.crash.cutoff, g.crash.crash_rate, lpm.n
        );
    }
    if let Some(why) = &g.crash.logit_skipped {
        let _ = writeln!(s, "note: {why}");
    }
    let _ = writeln!(
        s,
        "innovation regression: N = {}, R2 = {:.3}{}",
        g.innovations.n,
        g.innovations.regression.r2,
        if g.innovations.dropped.is_empty() {
            String::new()
        } else {
            format!(", dropped constant regressors: {}", g.innovations.dropped.join(", "))
        }
    );
    s
}
