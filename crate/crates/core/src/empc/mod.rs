//! Periodic-horizon economic MPC.
//!
//! Each day has an optimal periodic orbit `(h*, u*)`. At every sample the
//! controller solves a shrinking-horizon problem that ends at the next
//! midnight inside a ball around `h*_T`, pays electricity plus exponential
//! barrier costs along the way, and falls back to its previous plan when the
//! problem has no feasible point.

mod controller;
mod cost;
mod dynamics;
mod problems;

pub use controller::{ControlDecision, Controller, InputSource};
pub use cost::{barrier_cost, stage_cost, BarrierValue, EXPONENT_CAP};
pub use dynamics::{objective_and_gradient, objective_with_sensitivities, rollout, Sensitivities};
pub use problems::{
    compute_periodic_trajectory, cost_scale, solve_mpc, MpcSolution, PeriodicTrajectory, PERIODICITY_TOL,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlpsolve::{SolveError, SolverConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time {t} h is not on the {dt} h sampling grid")]
    MisalignedTime { t: f64, dt: f64 },
    #[error("no box-feasible periodic orbit found (best violation {violation:e})")]
    Infeasible { violation: f64 },
    #[error(transparent)]
    Solver(#[from] SolveError),
}

/// Controller settings; per-state vectors have length n, barrier vectors 2n.
///
/// Barrier entry `2s` belongs to the lower bound of state `s`, entry `2s + 1`
/// to its upper bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Lower level bounds h̃ (m).
    pub lower: Vec<f64>,
    /// Upper level bounds h̄ (m).
    pub upper: Vec<f64>,
    /// Pump flow limits ū (m³/h).
    pub u_max: Vec<f64>,
    pub barrier_a: Vec<f64>,
    /// Width of each dangerous region (m).
    pub barrier_b: Vec<f64>,
    #[serde(default = "enabled")]
    pub barrier_enabled: bool,
    /// Terminal ball radius (m).
    pub terminal_radius: f64,
    /// Sampling time (h).
    pub dt: f64,
    /// Length of the periodic day (h).
    pub t_day: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn enabled() -> bool {
    true
}

pub const DEFAULT_BARRIER_A: f64 = 80.0;
pub const DEFAULT_BARRIER_B: f64 = 0.3;
pub const DEFAULT_TERMINAL_RADIUS: f64 = 0.05;

impl MpcConfig {
    /// Hourly sampling over a 24 h day with the default barrier and terminal ball.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, u_max: Vec<f64>) -> Self {
        let n = lower.len();
        Self {
            lower,
            upper,
            u_max,
            barrier_a: vec![DEFAULT_BARRIER_A; 2 * n],
            barrier_b: vec![DEFAULT_BARRIER_B; 2 * n],
            barrier_enabled: true,
            terminal_radius: DEFAULT_TERMINAL_RADIUS,
            dt: 1.0,
            t_day: 24.0,
            solver: SolverConfig::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn m(&self) -> usize {
        self.u_max.len()
    }

    /// Samples per day, T_day/Δt.
    pub fn steps_per_day(&self) -> usize {
        (self.t_day / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), EmpcError> {
        let bad = |msg: String| Err(EmpcError::InvalidConfig(msg));
        let n = self.n();
        if n == 0 || self.m() == 0 {
            return bad("need at least one state and one pump".into());
        }
        if self.upper.len() != n || self.barrier_a.len() != 2 * n || self.barrier_b.len() != 2 * n {
            return bad(format!("bounds and barrier vectors must have lengths {n} and {}", 2 * n));
        }
        for s in 0..n {
            let (lo, hi) = (self.lower[s], self.upper[s]);
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("state {s}: need finite lower < upper"));
            }
            for i in [2 * s, 2 * s + 1] {
                let (a, b) = (self.barrier_a[i], self.barrier_b[i]);
                if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
                    return bad(format!("barrier {i}: a and b must be positive"));
                }
                if !(b < (hi - lo) / 2.0) {
                    return bad(format!("barrier {i}: b = {b} overlaps the opposite dangerous region"));
                }
            }
        }
        if self.u_max.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
            return bad("pump limits must be positive".into());
        }
        if !(self.terminal_radius > 0.0 && self.terminal_radius.is_finite()) {
            return bad("terminal radius must be positive".into());
        }
        if !(self.dt > 0.0 && self.t_day > 0.0) {
            return bad("dt and t_day must be positive".into());
        }
        let ratio = self.t_day / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return bad(format!("t_day = {} is not a multiple of dt = {}", self.t_day, self.dt));
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// Steps from `t` to the next midnight: `(T_day − t mod T_day)/Δt`.
pub fn horizon_length(t: f64, t_day: f64, dt: f64) -> Result<usize, EmpcError> {
    let k = step_index(t, dt)?;
    let per_day = (t_day / dt).round() as usize;
    Ok(per_day - k % per_day)
}

/// Index of `t` on the sampling grid.
pub(crate) fn step_index(t: f64, dt: f64) -> Result<usize, EmpcError> {
    let k = t / dt;
    if !(t >= 0.0) || !t.is_finite() || (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
        return Err(EmpcError::MisalignedTime { t, dt });
    }
    Ok(k.round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon_length(0.0, 24.0, 1.0).unwrap(), 24);
        assert_eq!(horizon_length(23.0, 24.0, 1.0).unwrap(), 1);
        assert_eq!(horizon_length(49.0, 24.0, 1.0).unwrap(), 23);
        assert_eq!(horizon_length(1.5, 24.0, 0.5).unwrap(), 45);
        assert!(matches!(horizon_length(2.5, 24.0, 1.0), Err(EmpcError::MisalignedTime { .. })));
        assert!(horizon_length(-1.0, 24.0, 1.0).is_err());
    }

    #[test]
    fn horizon_telescopes() {
        for k in 0..72usize {
            let now = horizon_length(k as f64, 24.0, 1.0).unwrap();
            let next = horizon_length((k + 1) as f64, 24.0, 1.0).unwrap();
            if (k + 1) % 24 == 0 {
                assert_eq!((now, next), (1, 24));
            } else {
                assert_eq!(next, now - 1);
            }
        }
    }

    #[test]
    fn config_validation() {
        let good = MpcConfig::new(vec![1.5, 1.4], vec![3.0, 2.8], vec![100.0, 100.0]);
        good.validate().unwrap();
        let mut overlap = good.clone();
        overlap.barrier_b[3] = 0.7;
        assert!(overlap.validate().is_err());
        let mut misaligned = good.clone();
        misaligned.t_day = 23.5;
        misaligned.dt = 2.0;
        assert!(misaligned.validate().is_err());
        let mut inverted = good.clone();
        inverted.lower[0] = 3.5;
        assert!(inverted.validate().is_err());
        let mut zero_r = good;
        zero_r.terminal_radius = 0.0;
        assert!(zero_r.validate().is_err());
    }
}
