//! Acceptance thresholds and plain-text sweep summaries.

use std::fmt::Write as _;

use super::adversarial::AdversarialReport;
use super::config::{ConcentrationMode, ExperimentConfig, ExperimentKind, RpeChoice};
use super::results::{fit_slope, median, Statistic, SweepResult};
use crate::error::Result;

/// Outcome of one acceptance threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn slope_in(result: &SweepResult, metric: &str, name: &str, lo: f64, hi: f64) -> Result<Check> {
    let f = fit_slope(result, metric, Statistic::Mean)?;
    let extra = fit_slope(result, metric, Statistic::MeanPlusStd)?;
    Ok(Check::new(
        name,
        (lo..=hi).contains(&f.slope),
        format!(
            "mean slope {:.3} ± {:.3} (mean+std {:.3}), band [{lo}, {hi}]",
            f.slope, f.stderr, extra.slope
        ),
    ))
}

pub fn check_worstcase_graph(result: &SweepResult) -> Result<Check> {
    slope_in(result, "worst_case_error", "worst-case graph slope", -0.70, -0.15)
}

pub fn check_worstcase_point_cloud(result: &SweepResult) -> Result<Check> {
    slope_in(result, "worst_case_error", "worst-case point-cloud slope", -0.60, -0.10)
}

/// Every weight matrix stayed in the unit spectral ball after every step.
pub fn check_spectral(results: &[&SweepResult]) -> Check {
    let worst = results
        .iter()
        .flat_map(|r| r.rows.iter().filter(|row| row.metric == "max_sigma"))
        .map(|row| row.value)
        .fold(0.0, f64::max);
    let any = results.iter().any(|r| r.rows.iter().any(|row| row.metric == "max_sigma"));
    Check::new(
        "spectral ball",
        any && worst <= 1.0 + 1e-6,
        format!("largest σmax after any step {worst:.9}"),
    )
}

pub fn check_rpe_stability(result: &SweepResult) -> Result<Check> {
    let groups = result.by_n("sup_error");
    let medians: Vec<f64> = groups.values().map(|v| median(v)).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let f = fit_slope(result, "sup_error", Statistic::Median)?;
    let skipped = result.rows.iter().filter(|r| r.metric == "skipped").count();
    Ok(Check::new(
        "random-walk RPE stability",
        decreasing && f.slope <= -0.25 && groups.len() >= 2,
        format!("medians {medians:.4?}, slope {:.3} (≤ −0.25), {skipped} replicates skipped", f.slope),
    ))
}

pub fn check_sp_instability(result: &SweepResult) -> Result<Check> {
    let groups = result.by_n("mismatch_fraction");
    let means: Vec<f64> = groups.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let near_half = !means.is_empty() && means.iter().all(|m| (m - 0.5).abs() <= 0.05);
    let f = fit_slope(result, "mismatch_fraction", Statistic::Mean)?;
    Ok(Check::new(
        "shortest-path instability",
        near_half && f.slope.abs() <= 0.05,
        format!("mean mismatch {means:.4?}, slope {:.4} (|·| ≤ 0.05)", f.slope),
    ))
}

/// `theorem` at `L ≥ 10`; `fast` at small `L` checks the all-a frequency.
pub fn check_adversarial(theorem: &AdversarialReport, fast: &AdversarialReport) -> Check {
    let exact = theorem.continuous_ok() && theorem.all_a_output == -1.0 && theorem.gap > 1.0;
    let freq = (fast.all_a_frequency - fast.all_a_probability).abs() <= 0.05;
    Check::new(
        "adversarial two-point",
        exact && freq,
        format!(
            "L={}: |Θ−1| = {:.3e} (≤ {:.3e}), all-a {}, gap {:.4}; L={}: all-a frequency {:.4} vs {:.4}",
            theorem.l,
            (theorem.continuous_output - 1.0).abs(),
            theorem.continuous_tolerance,
            theorem.all_a_output,
            theorem.gap,
            fast.l,
            fast.all_a_frequency,
            fast.all_a_probability
        ),
    )
}

/// Failure frequency at most the lemma bound wherever that bound is below 1,
/// and median deviation maxima strictly decreasing in `n`.
pub fn check_concentration(result: &SweepResult) -> Check {
    let failed = result.by_n("failed");
    let bounds = result.by_n("lemma_bound");
    let devs = result.by_n("max_deviation");
    let mut ok = !failed.is_empty();
    let mut detail = String::new();
    for (n, f) in &failed {
        let freq = f.iter().sum::<f64>() / f.len() as f64;
        let bound = bounds.get(n).and_then(|b| b.first()).copied().unwrap_or(f64::INFINITY);
        let applies = bound < 1.0;
        if applies && freq > bound {
            ok = false;
        }
        let _ = write!(
            detail,
            "n={n}: failure {freq:.3} vs bound {bound:.3e}{}; ",
            if applies { "" } else { " (vacuous)" }
        );
    }
    let medians: Vec<f64> = devs.values().map(|v| median(v)).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    ok &= decreasing;
    let _ = write!(detail, "median max deviation {medians:.4?}");
    Check::new("measure concentration", ok, detail)
}

/// Median stable-RPE gap at most the median unstable gap for all but one `n`.
pub fn check_classification(result: &SweepResult) -> Check {
    let rw = result.by_n("gap_random_walk");
    let sp = result.by_n("gap_shortest_path");
    let mut wins = 0;
    let mut pairs = Vec::new();
    for (n, g) in &rw {
        if let Some(h) = sp.get(n) {
            let (a, b) = (median(g), median(h));
            if a <= b {
                wins += 1;
            }
            pairs.push(format!("n={n}: {a:.4} vs {b:.4}"));
        }
    }
    let need = pairs.len().saturating_sub(1).max(1);
    Check::new(
        "classification gap",
        !pairs.is_empty() && wins >= need,
        format!("random walk ≤ shortest path at {wins}/{} sizes ({})", pairs.len(), pairs.join(", ")),
    )
}

pub fn check_discretization(result: &SweepResult) -> Result<Check> {
    let f = fit_slope(result, "discretization_error", Statistic::Mean)?;
    Ok(Check::new(
        "one-layer discretization",
        f.slope <= -0.15,
        format!("mean slope {:.3} ± {:.3} (≤ −0.15)", f.slope, f.stderr),
    ))
}

/// Slopes of every fit-able metric, followed by the threshold check that
/// matches the sweep.
pub fn summarize(config: &ExperimentConfig, result: &SweepResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment {}", result.experiment);
    for metric in result.metrics() {
        for stat in [Statistic::Mean, Statistic::MeanPlusStd, Statistic::Median] {
            if let Ok(f) = fit_slope(result, &metric, stat) {
                let _ = writeln!(
                    out,
                    "slope {metric} {stat:?}: {:.4} ± {:.4} over {} sizes",
                    f.slope, f.stderr, f.points
                );
            }
        }
    }
    let check = match config.kind {
        ExperimentKind::WorstCase => {
            let shape = if config.rpe == RpeChoice::Displacement {
                check_worstcase_point_cloud(result)
            } else {
                check_worstcase_graph(result)
            };
            let _ = writeln!(out, "{}", check_spectral(&[result]).line());
            shape.ok()
        }
        ExperimentKind::RpeStability => check_rpe_stability(result).ok(),
        ExperimentKind::SpInstability => check_sp_instability(result).ok(),
        ExperimentKind::Classification => Some(check_classification(result)),
        ExperimentKind::Concentration => match config.mode {
            ConcentrationMode::Event => Some(check_concentration(result)),
            ConcentrationMode::Discretization => check_discretization(result).ok(),
        },
        ExperimentKind::Adversarial | ExperimentKind::Regularity => None,
    };
    if let Some(c) = check {
        let _ = writeln!(out, "{}", c.line());
    }
    out
}
