//! Scenarios, closed-loop runs, the demand-follower benchmark and reports.

mod closed_loop;
mod demand;
mod plant;
mod report;
mod scenario;

pub use closed_loop::{demand_follower, follower_inputs, run_closed_loop, run_with_hook, RunLog, RunTotals, StepRecord};
pub use demand::{synth_days, synth_demand, DemandProfiles};
pub use plant::{LinearPlant, NetworkPlant, Plant};
pub use report::{collect_pairs, pearson, relative_cost_table, report, PairSummary, ReportBundle, ReportSummary};
pub use scenario::{
    identify_models, load_inputs, parse_profile, prepare, prepare_with, ControllerSettings, IdentificationSettings,
    PreparedScenario, Profile, ScenarioConfig, ScenarioInputs,
};

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::empc::EmpcError;
use crate::hydronet::{HydraulicError, HydraulicPlant};
use crate::sysid::IdentError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Hydraulic(#[from] HydraulicError),
    #[error(transparent)]
    Identification(#[from] IdentError),
    #[error(transparent)]
    Control(#[from] EmpcError),
    #[error("run aborted at t = {t} h: {reason}")]
    Aborted { t: f64, reason: String, partial: Box<RunLog> },
    #[error("demand follower cannot reach the terminal ball on day {day} (closest distance {distance:.6} m)")]
    BenchmarkInfeasible { day: usize, distance: f64 },
    #[error("report: {0}")]
    Report(String),
}

pub(crate) fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), message: e.to_string() })
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: format!("column {}: {e}", e.column()),
    })
}

/// Twelve significant digits without trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&mag) {
        return format!("{x:.11e}");
    }
    let decimals = (11 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Closed loop on the hydraulic network with the scenario's seeded forecast error.
pub fn run_proposed(prep: &PreparedScenario) -> Result<RunLog, HarnessError> {
    let s = &prep.scenario;
    let days = synth_days(&prep.demand, s.seed, s.perturbation, s.days);
    let mut plant = NetworkPlant::new(HydraulicPlant::new(prep.network.clone()), &prep.initial_levels())?;
    run_closed_loop(prep, &mut plant, &days, &format!("proposed seed {}", s.seed))
}

/// Demand follower on the hydraulic network over the scenario's days.
pub fn run_follower(prep: &PreparedScenario) -> Result<RunLog, HarnessError> {
    let s = &prep.scenario;
    let days = synth_days(&prep.demand, s.seed, s.perturbation, s.days);
    let mut plant = NetworkPlant::new(HydraulicPlant::new(prep.network.clone()), &prep.initial_levels())?;
    demand_follower(prep, &mut plant, &days, &format!("follower seed {}", s.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.5967), "0.5967");
        assert_eq!(fmt_num(59.67 / 100.0), "0.5967");
        assert_eq!(fmt_num(100.0), "100");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(1234.56789), "1234.56789");
        assert_eq!(fmt_num(1e-9), "1.00000000000e-9");
        assert_eq!(fmt_num(0.0), "0");
    }
}
