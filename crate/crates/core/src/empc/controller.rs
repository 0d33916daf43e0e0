use serde::{Deserialize, Serialize};

use crate::nlpsolve::SolveStatus;
use crate::sysid::{LinearDiscreteModel, PressureModel};

use super::problems::{solve_mpc, MpcSolution, PeriodicTrajectory};
use super::{horizon_length, step_index, EmpcError, MpcConfig};

/// Where an applied input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSource {
    /// First term of a fresh solution.
    Optimal,
    /// Term `age` of the last accepted solution.
    Cached { age: usize },
    /// Clamped periodic input for the current hour.
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: Vec<f64>,
    pub source: InputSource,
    /// Status of the solve attempted at this step.
    pub status: SolveStatus,
    /// The fresh solution, whatever its status.
    pub solution: Option<MpcSolution>,
}

impl ControlDecision {
    pub fn used_fallback(&self) -> bool {
        self.source != InputSource::Optimal
    }

    pub fn degraded(&self) -> bool {
        self.source == InputSource::Periodic
    }
}

/// Receding-horizon controller with fallback to the previous plan.
#[derive(Debug, Clone)]
pub struct Controller {
    config: MpcConfig,
    model: LinearDiscreteModel,
    pressure: PressureModel,
    trajectory: PeriodicTrajectory,
    previous: Option<MpcSolution>,
    fallbacks: usize,
    degraded: usize,
}

impl Controller {
    pub fn new(
        model: LinearDiscreteModel,
        pressure: PressureModel,
        trajectory: PeriodicTrajectory,
        config: MpcConfig,
    ) -> Result<Self, EmpcError> {
        config.validate()?;
        if trajectory.u_star.len() != config.steps_per_day() {
            return Err(EmpcError::Dimension(format!(
                "periodic trajectory has {} steps, the day has {}",
                trajectory.u_star.len(),
                config.steps_per_day()
            )));
        }
        Ok(Self { config, model, pressure, trajectory, previous: None, fallbacks: 0, degraded: 0 })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn set_terminal_radius(&mut self, radius: f64) -> Result<(), EmpcError> {
        let mut cfg = self.config.clone();
        cfg.terminal_radius = radius;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn trajectory(&self) -> &PeriodicTrajectory {
        &self.trajectory
    }

    /// Last accepted solution.
    pub fn previous(&self) -> Option<&MpcSolution> {
        self.previous.as_ref()
    }

    pub fn fallback_count(&self) -> usize {
        self.fallbacks
    }

    pub fn degraded_count(&self) -> usize {
        self.degraded
    }

    /// Input for the current step from model state `h` at time `t`.
    ///
    /// Only optimal solutions are applied and cached. Anything else falls back
    /// to the cached plan, then to the periodic input.
    pub fn step(&mut self, h: &[f64], t: f64, d_forecast: &[f64], c_forecast: &[f64]) -> Result<ControlDecision, EmpcError> {
        let steps = horizon_length(t, self.config.t_day, self.config.dt)?;
        let warm = self.shifted_plan(t, steps);
        let solved = solve_mpc(
            h,
            t,
            d_forecast,
            c_forecast,
            &self.trajectory,
            &self.model,
            &self.pressure,
            &self.config,
            warm.as_deref(),
        );
        let solution = match solved {
            Ok(s) => Some(s),
            Err(EmpcError::Solver(_)) => None,
            Err(e) => return Err(e),
        };
        let status = solution.as_ref().map_or(SolveStatus::Infeasible, |s| s.status);
        if let Some(sol) = solution.as_ref().filter(|s| s.status == SolveStatus::Optimal) {
            let u = sol.u_seq[0].clone();
            self.previous = Some(sol.clone());
            return Ok(ControlDecision { u, source: InputSource::Optimal, status, solution });
        }
        self.fallbacks += 1;
        if let Some((age, u)) = self.cached_input(t) {
            return Ok(ControlDecision { u, source: InputSource::Cached { age }, status, solution });
        }
        self.degraded += 1;
        let k = step_index(t, self.config.dt)? % self.config.steps_per_day();
        let u = self.trajectory.u_star[k].iter().zip(&self.config.u_max).map(|(v, um)| v.clamp(0.0, *um)).collect();
        Ok(ControlDecision { u, source: InputSource::Periodic, status, solution })
    }

    /// Steps elapsed since the cached solve, when its horizon still covers `t`.
    fn cache_age(&self, t: f64) -> Option<usize> {
        let prev = self.previous.as_ref()?;
        let age = ((t - prev.t) / self.config.dt).round();
        if age >= 1.0 && (age as usize) < prev.u_seq.len() {
            Some(age as usize)
        } else {
            None
        }
    }

    fn cached_input(&self, t: f64) -> Option<(usize, Vec<f64>)> {
        let age = self.cache_age(t)?;
        Some((age, self.previous.as_ref()?.u_seq[age].clone()))
    }

    /// Previous plan shifted to start at `t`.
    fn shifted_plan(&self, t: f64, steps: usize) -> Option<Vec<Vec<f64>>> {
        let age = self.cache_age(t)?;
        let plan = &self.previous.as_ref()?.u_seq[age..];
        (plan.len() == steps).then(|| plan.to_vec())
    }
}
