use serde::{Deserialize, Serialize};

use crate::empc::{Controller, InputSource};

use super::demand::DemandProfiles;
use super::plant::Plant;
use super::report::pearson;
use super::scenario::PreparedScenario;
use super::{fmt_num, HarnessError};

/// One control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// Physical tank levels at `t`.
    pub levels: Vec<f64>,
    /// Aggregated model state at `t`.
    pub state: Vec<f64>,
    pub u: Vec<f64>,
    pub d_real: f64,
    pub d_forecast: f64,
    pub price: f64,
    /// Plant-side electricity cost of the interval.
    pub cost: f64,
    /// The controller applied a fresh optimal solution.
    pub feasible: bool,
    pub fallback: bool,
    pub degraded: bool,
    /// Some tank left its bounds by the end of the interval.
    pub violation: bool,
}

/// Summary numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub label: String,
    pub steps: usize,
    pub cost: f64,
    pub violations: usize,
    pub fallbacks: usize,
    pub degraded: usize,
    /// Largest distance of any tank level outside its bounds (m).
    pub max_excursion: f64,
    pub price_flow_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub label: String,
    /// `(min, max)` level of each tank.
    pub tank_bounds: Vec<(f64, f64)>,
    pub records: Vec<StepRecord>,
    pub final_levels: Vec<f64>,
    pub total_cost: f64,
    pub violations: usize,
    pub fallbacks: usize,
    pub degraded: usize,
    pub max_excursion: f64,
}

impl RunLog {
    pub fn new(label: &str, tank_bounds: Vec<(f64, f64)>, initial_levels: Vec<f64>) -> Self {
        Self {
            label: label.to_string(),
            tank_bounds,
            records: Vec::new(),
            final_levels: initial_levels,
            total_cost: 0.0,
            violations: 0,
            fallbacks: 0,
            degraded: 0,
            max_excursion: 0.0,
        }
    }

    fn excursion(&self, levels: &[f64]) -> f64 {
        levels.iter().zip(&self.tank_bounds).map(|(h, (lo, hi))| (lo - h).max(h - hi).max(0.0)).fold(0.0, f64::max)
    }

    /// Appends a record whose interval ended at `levels_after`.
    pub fn push(&mut self, mut record: StepRecord, levels_after: Vec<f64>) {
        let excursion = self.excursion(&levels_after);
        record.violation = excursion > 0.0;
        self.max_excursion = self.max_excursion.max(excursion);
        self.total_cost += record.cost;
        self.violations += record.violation as usize;
        self.fallbacks += record.fallback as usize;
        self.degraded += record.degraded as usize;
        self.final_levels = levels_after;
        self.records.push(record);
    }

    pub fn total_flows(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.u.iter().sum()).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.price).collect()
    }

    pub fn price_flow_correlation(&self) -> Option<f64> {
        pearson(&self.prices(), &self.total_flows())
    }

    pub fn totals(&self) -> RunTotals {
        RunTotals {
            label: self.label.clone(),
            steps: self.records.len(),
            cost: self.total_cost,
            violations: self.violations,
            fallbacks: self.fallbacks,
            degraded: self.degraded,
            max_excursion: self.max_excursion,
            price_flow_correlation: self.price_flow_correlation(),
        }
    }

    /// `t,h1..hK,u1..um,u_total,price,d_real,d_forecast,cost_cum,feasible,fallback`.
    pub fn csv_header(&self) -> String {
        let tanks = self.tank_bounds.len();
        let pumps = self.records.first().map_or(0, |r| r.u.len());
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=tanks).map(|i| format!("h{i}")));
        cols.extend((1..=pumps).map(|i| format!("u{i}")));
        cols.extend(
            ["u_total", "price", "d_real", "d_forecast", "cost_cum", "feasible", "fallback"].iter().map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        let mut cum = 0.0;
        for r in &self.records {
            cum += r.cost;
            let mut cols = vec![fmt_num(r.t)];
            cols.extend(r.levels.iter().map(|v| fmt_num(*v)));
            cols.extend(r.u.iter().map(|v| fmt_num(*v)));
            cols.push(fmt_num(r.u.iter().sum()));
            cols.extend([r.price, r.d_real, r.d_forecast, cum].iter().map(|v| fmt_num(*v)));
            cols.push((r.feasible as u8).to_string());
            cols.push((r.fallback as u8).to_string());
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

fn tank_bounds(prep: &PreparedScenario) -> Vec<(f64, f64)> {
    prep.network.tanks().iter().map(|t| (t.min_level, t.max_level)).collect()
}

fn check_days(prep: &PreparedScenario, days: &[DemandProfiles]) -> Result<(), HarnessError> {
    let steps = prep.steps_per_day();
    if days.is_empty() || days.iter().any(|d| d.realized.len() != steps || d.forecast.len() != steps) {
        return Err(HarnessError::Scenario(format!("need at least one day of {steps}-sample demand profiles")));
    }
    Ok(())
}

fn aborted(log: RunLog, t: f64, reason: String) -> HarnessError {
    HarnessError::Aborted { t, reason, partial: Box::new(log) }
}

/// Hourly receding-horizon control of `plant` over the given days.
///
/// Each step measures the tank levels, aggregates them, asks the controller
/// for an input, clamps it to the pump limits and holds it on the plant for
/// one sample under the realized demand.
pub fn run_closed_loop(
    prep: &PreparedScenario,
    plant: &mut dyn Plant,
    days: &[DemandProfiles],
    label: &str,
) -> Result<RunLog, HarnessError> {
    run_with_hook(prep, plant, days, label, &mut |_, _| Ok(()))
}

/// [`run_closed_loop`] with a callback invoked on the controller before every step.
pub fn run_with_hook(
    prep: &PreparedScenario,
    plant: &mut dyn Plant,
    days: &[DemandProfiles],
    label: &str,
    hook: &mut dyn FnMut(&mut Controller, f64) -> Result<(), HarnessError>,
) -> Result<RunLog, HarnessError> {
    check_days(prep, days)?;
    let mut controller = Controller::new(
        prep.models.state.clone(),
        prep.models.pressure.clone(),
        prep.trajectory.clone(),
        prep.config.clone(),
    )?;
    let steps = prep.steps_per_day();
    let dt = prep.config.dt;
    let mut log = RunLog::new(label, tank_bounds(prep), plant.tank_levels());
    for (day, profiles) in days.iter().enumerate() {
        for k in 0..steps {
            let t = (day * steps + k) as f64 * dt;
            let levels = plant.tank_levels();
            let state = match prep.aggregation.to_state(&levels) {
                Ok(s) => s,
                Err(e) => return Err(aborted(log, t, e.to_string())),
            };
            hook(&mut controller, t)?;
            let decision = controller.step(&state, t, &profiles.forecast[k..], &prep.price[k..])?;
            let u: Vec<f64> =
                decision.u.iter().zip(&prep.config.u_max).map(|(v, max)| v.clamp(0.0, *max)).collect();
            let work = match plant.advance(&u, profiles.realized[k], dt) {
                Ok(w) => w,
                Err(e) => return Err(aborted(log, t, e.to_string())),
            };
            let record = StepRecord {
                t,
                levels,
                state,
                cost: prep.price[k] * work.iter().sum::<f64>(),
                u,
                d_real: profiles.realized[k],
                d_forecast: profiles.forecast[k],
                price: prep.price[k],
                feasible: decision.source == InputSource::Optimal,
                fallback: decision.used_fallback(),
                degraded: decision.degraded(),
                violation: false,
            };
            log.push(record, plant.tank_levels());
        }
    }
    Ok(log)
}

/// Follower input: the demand split in proportion to the pump limits, shifted by `offset`.
pub fn follower_inputs(demand: f64, u_max: &[f64], offset: f64) -> Vec<f64> {
    let total: f64 = u_max.iter().sum();
    u_max.iter().map(|max| (demand * max / total + offset).clamp(0.0, *max)).collect()
}

const BISECTION_STEPS: usize = 60;

/// Benchmark that pumps what is consumed.
///
/// For each day a uniform flow offset is found by bisection on the
/// end-of-day stored volume so that the day ends as close as possible to the
/// periodic end point; the day fails when that point is still outside the
/// terminal ball.
pub fn demand_follower<P: Plant + Clone>(
    prep: &PreparedScenario,
    plant: &mut P,
    days: &[DemandProfiles],
    label: &str,
) -> Result<RunLog, HarnessError> {
    check_days(prep, days)?;
    let steps = prep.steps_per_day();
    let dt = prep.config.dt;
    let u_max = &prep.config.u_max;
    let target = prep.trajectory.terminal();
    let target_volume = prep.aggregation.volume(target);
    let mut log = RunLog::new(label, tank_bounds(prep), plant.tank_levels());

    for (day, profiles) in days.iter().enumerate() {
        let end_state = |offset: f64| -> Result<Vec<f64>, HarnessError> {
            let mut trial = plant.clone();
            for k in 0..steps {
                trial.advance(&follower_inputs(profiles.realized[k], u_max, offset), profiles.realized[k], dt)?;
            }
            Ok(prep.aggregation.to_state(&trial.tank_levels())?)
        };
        let gap = |offset: f64| -> Result<f64, HarnessError> {
            Ok(prep.aggregation.volume(&end_state(offset)?) - target_volume)
        };
        let span = u_max.iter().cloned().fold(0.0, f64::max);
        let (mut lo, mut hi) = (-span, span);
        let (g_lo, g_hi) = (gap(lo)?, gap(hi)?);
        if g_lo > 0.0 || g_hi < 0.0 {
            let end = end_state(if g_lo > 0.0 { lo } else { hi })?;
            return Err(HarnessError::BenchmarkInfeasible { day, distance: distance(&end, target) });
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if gap(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * span {
                break;
            }
        }
        let offset = 0.5 * (lo + hi);
        let dist = distance(&end_state(offset)?, target);
        if dist > prep.config.terminal_radius {
            return Err(HarnessError::BenchmarkInfeasible { day, distance: dist });
        }
        for k in 0..steps {
            let t = (day * steps + k) as f64 * dt;
            let levels = plant.tank_levels();
            let state = prep.aggregation.to_state(&levels)?;
            let u = follower_inputs(profiles.realized[k], u_max, offset);
            let work = plant.advance(&u, profiles.realized[k], dt)?;
            let record = StepRecord {
                t,
                levels,
                state,
                cost: prep.price[k] * work.iter().sum::<f64>(),
                u,
                d_real: profiles.realized[k],
                d_forecast: profiles.realized[k],
                price: prep.price[k],
                feasible: true,
                fallback: false,
                degraded: false,
                violation: false,
            };
            log.push(record, plant.tank_levels());
        }
    }
    Ok(log)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
