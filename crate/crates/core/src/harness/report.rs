use std::path::Path;

use serde::{Deserialize, Serialize};

use super::closed_loop::RunTotals;
use super::{fmt_num, read_json, HarnessError};

/// Sample Pearson correlation; `None` when either series is constant or they differ in length.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Cost table with the follower normalized to 1.
pub fn relative_cost_table(pairs: &[(f64, f64)]) -> Result<String, HarnessError> {
    let mut out = String::from("proposed,follower\n");
    for &(proposed, follower) in pairs {
        if !(follower > 0.0) {
            return Err(HarnessError::Report(format!("benchmark cost {follower} cannot be normalized")));
        }
        out.push_str(&format!("{},1\n", fmt_num(proposed / follower)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub proposed: RunTotals,
    pub follower: RunTotals,
    pub relative_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub pairs: Vec<PairSummary>,
    pub total_violations: usize,
    pub total_fallbacks: usize,
    pub worst_relative_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub table_csv: String,
    pub summary: ReportSummary,
}

impl ReportBundle {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary is always serializable")
    }
}

/// Table and summary for `(proposed, follower)` pairs of equal length.
pub fn report(pairs: &[(RunTotals, RunTotals)]) -> Result<ReportBundle, HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::Report("need at least one proposed run and its benchmark".into()));
    }
    for (p, f) in pairs {
        if p.steps != f.steps {
            return Err(HarnessError::Report(format!(
                "run {} has {} steps but benchmark {} has {}",
                p.label, p.steps, f.label, f.steps
            )));
        }
    }
    let costs: Vec<(f64, f64)> = pairs.iter().map(|(p, f)| (p.cost, f.cost)).collect();
    let table_csv = relative_cost_table(&costs)?;
    let summaries: Vec<PairSummary> = pairs
        .iter()
        .map(|(p, f)| PairSummary { proposed: p.clone(), follower: f.clone(), relative_cost: p.cost / f.cost })
        .collect();
    let summary = ReportSummary {
        total_violations: pairs.iter().map(|(p, _)| p.violations).sum(),
        total_fallbacks: pairs.iter().map(|(p, _)| p.fallbacks).sum(),
        worst_relative_cost: summaries.iter().map(|s| s.relative_cost).fold(f64::NEG_INFINITY, f64::max),
        pairs: summaries,
    };
    Ok(ReportBundle { table_csv, summary })
}

/// Pairs every `run<suffix>.json` in `dir` with `benchmark<suffix>.json`.
pub fn collect_pairs(dir: &Path) -> Result<Vec<(RunTotals, RunTotals)>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), message: e.to_string() })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("run") && n.ends_with(".json"))
        .collect();
    names.sort();
    let mut pairs = Vec::new();
    for name in names {
        let suffix = &name["run".len()..];
        let bench = dir.join(format!("benchmark{suffix}"));
        if !bench.exists() {
            return Err(HarnessError::Report(format!("{name} has no matching {}", bench.display())));
        }
        pairs.push((read_json(&dir.join(&name))?, read_json(&bench)?));
    }
    if pairs.is_empty() {
        return Err(HarnessError::Report(format!("no run summaries in {}", dir.display())));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn totals(label: &str, cost: f64, steps: usize) -> RunTotals {
        RunTotals {
            label: label.into(),
            steps,
            cost,
            violations: 0,
            fallbacks: 0,
            degraded: 0,
            max_excursion: 0.0,
            price_flow_correlation: None,
        }
    }

    #[test]
    fn table_row_example() {
        assert_eq!(relative_cost_table(&[(59.67, 100.0)]).unwrap(), "proposed,follower\n0.5967,1\n");
    }

    #[test]
    fn identical_runs_have_unit_ratio() {
        let b = report(&[(totals("a", 42.5, 24), totals("b", 42.5, 24))]).unwrap();
        assert_eq!(b.summary.pairs[0].relative_cost, 1.0);
        assert_eq!(b.table_csv, "proposed,follower\n1,1\n");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(report(&[(totals("a", 1.0, 24), totals("b", 1.0, 48))]), Err(HarnessError::Report(_))));
        assert!(report(&[]).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() <= 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() <= 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
