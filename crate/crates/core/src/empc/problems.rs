use serde::{Deserialize, Serialize};

use crate::nlpsolve::{minimize, Constraints, Objective, SmoothProblem, SolveStatus, SolverConfig, TwoSided};
use crate::sysid::{LinearDiscreteModel, PressureModel};

use super::cost::stage_cost;
use super::dynamics::{backpropagate, objective_with_sensitivities, rollout};
use super::{horizon_length, step_index, EmpcError, MpcConfig};

/// Bound on `‖h*_0 − h*_T‖_∞` for a periodic trajectory (m).
pub const PERIODICITY_TOL: f64 = 1e-6;

/// The optimal one-day orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicTrajectory {
    /// `h*_0..h*_T`, one state vector per sample.
    pub h_star: Vec<Vec<f64>>,
    /// `u*_0..u*_{T−1}`.
    pub u_star: Vec<Vec<f64>>,
    pub d_star: Vec<f64>,
    pub c_star: Vec<f64>,
    /// `Σ J(h*_k, u*_k)` over the day.
    pub cost: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl PeriodicTrajectory {
    /// End-of-day point `h*_T`, the centre of the terminal ball.
    pub fn terminal(&self) -> &[f64] {
        self.h_star.last().expect("trajectory has at least one state")
    }

    pub fn periodicity_residual(&self) -> f64 {
        let first = &self.h_star[0];
        self.terminal().iter().zip(first).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One shrinking-horizon solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// Time of the solve (h).
    pub t: f64,
    pub h0: Vec<f64>,
    /// `u_0..u_{N−1}`.
    pub u_seq: Vec<Vec<f64>>,
    /// Predicted `h_1..h_N`.
    pub h_seq: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub max_violation: f64,
    /// `‖h_N − h*_T‖₂` (m).
    pub terminal_distance: f64,
}

/// Normaliser for the economic objective: the price-weighted cost of running
/// every pump at full flow for one step, floored at 1.
pub fn cost_scale(pressure: &PressureModel, config: &MpcConfig, c_seq: &[f64]) -> f64 {
    let mean_price = c_seq.iter().map(|c| c.abs()).sum::<f64>() / c_seq.len().max(1) as f64;
    let mid: Vec<f64> = config.lower.iter().zip(&config.upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let half: Vec<f64> = config.u_max.iter().map(|u| 0.5 * u).collect();
    let head = pressure
        .outlet(&mid, &half)
        .iter()
        .zip(&pressure.p_in)
        .map(|(po, pi)| (po - pi).abs())
        .sum::<f64>()
        / config.m() as f64;
    (mean_price * config.u_max.iter().sum::<f64>() * head.max(1.0)).max(1.0)
}

/// A horizon problem in scaled decision variables.
///
/// Layout: `[(h_0 − h̃)/(h̄ − h̃)]` when `h_0` is free, then `u_j/ū` step by step.
struct Horizon<'a> {
    model: &'a LinearDiscreteModel,
    pressure: &'a PressureModel,
    config: &'a MpcConfig,
    d: &'a [f64],
    c: &'a [f64],
    fixed_h0: Option<&'a [f64]>,
    scale: f64,
}

impl Horizon<'_> {
    fn steps(&self) -> usize {
        self.d.len()
    }

    fn offset(&self) -> usize {
        if self.fixed_h0.is_some() {
            0
        } else {
            self.config.n()
        }
    }

    fn dim(&self) -> usize {
        self.offset() + self.config.m() * self.steps()
    }

    fn width(&self, s: usize) -> f64 {
        self.config.upper[s] - self.config.lower[s]
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let h0 = match self.fixed_h0 {
            Some(h) => h.to_vec(),
            None => (0..self.config.n()).map(|s| self.config.lower[s] + self.width(s) * x[s]).collect(),
        };
        let m = self.config.m();
        let u = x[self.offset()..]
            .chunks(m)
            .map(|c| c.iter().zip(&self.config.u_max).map(|(v, um)| v * um).collect())
            .collect();
        (h0, u)
    }

    fn pack(&self, h0: &[f64], u: &[Vec<f64>]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        if self.fixed_h0.is_none() {
            x.extend((0..self.config.n()).map(|s| (h0[s] - self.config.lower[s]) / self.width(s)));
        }
        for uj in u {
            x.extend(uj.iter().zip(&self.config.u_max).map(|(v, um)| (v / um).clamp(0.0, 1.0)));
        }
        x
    }

    fn states(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let (h0, u) = self.unpack(x);
        rollout(self.model, &h0, &u, self.d).expect("dimensions checked on construction")
    }

    /// Chains physical gradients into the scaled decision space and adds them to `grad`.
    fn accumulate(&self, grad_h0: &[f64], grad_u: &[Vec<f64>], factor: f64, grad: &mut [f64]) {
        if self.fixed_h0.is_none() {
            for s in 0..self.config.n() {
                grad[s] += factor * grad_h0[s] * self.width(s);
            }
        }
        let off = self.offset();
        let m = self.config.m();
        for (j, gj) in grad_u.iter().enumerate() {
            for i in 0..m {
                grad[off + j * m + i] += factor * gj[i] * self.config.u_max[i];
            }
        }
    }

    /// Adds the gradient of `Σ_j seeds_j·h_j` (plus `direct_h0·h_0`) to `grad`.
    fn pull_back(&self, seeds: &[Vec<f64>], direct_h0: Option<&[f64]>, grad: &mut [f64]) {
        let mut grad_u = vec![vec![0.0; self.config.m()]; self.steps()];
        let mut g_h0 = backpropagate(self.model, seeds, &mut grad_u);
        if let Some(d) = direct_h0 {
            g_h0.iter_mut().zip(d).for_each(|(g, v)| *g += v);
        }
        self.accumulate(&g_h0, &grad_u, 1.0, grad);
    }
}

impl Objective for Horizon<'_> {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (h0, u) = self.unpack(x);
        let s = objective_with_sensitivities(self.model, self.pressure, &h0, &u, self.d, self.c, self.config)
            .expect("dimensions checked on construction");
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.accumulate(&s.grad_h0, &s.grad_u, 1.0 / self.scale, grad);
        s.value / self.scale
    }
}

/// `h̃ ≤ h_j ≤ h̄` for `j = 1..N`, scaled by the band width.
struct StateBox<'a, 'b>(&'a Horizon<'b>);

impl Constraints for StateBox<'_, '_> {
    fn len(&self) -> usize {
        2 * self.0.config.n() * self.0.steps()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let h = self.0.states(x);
        let n = self.0.config.n();
        for j in 1..h.len() {
            for s in 0..n {
                let w = self.0.width(s);
                out[(j - 1) * 2 * n + 2 * s] = (self.0.config.lower[s] - h[j][s]) / w;
                out[(j - 1) * 2 * n + 2 * s + 1] = (h[j][s] - self.0.config.upper[s]) / w;
            }
        }
    }

    fn vjp(&self, _x: &[f64], weights: &[f64], grad: &mut [f64]) {
        let n = self.0.config.n();
        let mut seeds = vec![vec![0.0; n]; self.0.steps() + 1];
        for j in 1..=self.0.steps() {
            for s in 0..n {
                let base = (j - 1) * 2 * n + 2 * s;
                seeds[j][s] = (weights[base + 1] - weights[base]) / self.0.width(s);
            }
        }
        self.0.pull_back(&seeds, None, grad);
    }
}

/// `(‖h_N − h*_T‖²/r² − 1)/2 ≤ 0`.
struct TerminalBall<'a, 'b> {
    horizon: &'a Horizon<'b>,
    target: &'a [f64],
    radius: f64,
}

impl Constraints for TerminalBall<'_, '_> {
    fn len(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let h = self.horizon.states(x);
        let e2: f64 = h.last().unwrap().iter().zip(self.target).map(|(a, b)| (a - b).powi(2)).sum();
        out[0] = 0.5 * (e2 / (self.radius * self.radius) - 1.0);
    }

    fn vjp(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        let h = self.horizon.states(x);
        let n = self.horizon.config.n();
        let mut seeds = vec![vec![0.0; n]; self.horizon.steps() + 1];
        let r2 = self.radius * self.radius;
        for s in 0..n {
            seeds[self.horizon.steps()][s] = weights[0] * (h.last().unwrap()[s] - self.target[s]) / r2;
        }
        self.horizon.pull_back(&seeds, None, grad);
    }
}

/// `h_T − h_0`, one entry per state.
struct Periodicity<'a, 'b>(&'a Horizon<'b>);

impl Constraints for Periodicity<'_, '_> {
    fn len(&self) -> usize {
        self.0.config.n()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let h = self.0.states(x);
        for (s, o) in out.iter_mut().enumerate() {
            *o = h[h.len() - 1][s] - h[0][s];
        }
    }

    fn vjp(&self, _x: &[f64], weights: &[f64], grad: &mut [f64]) {
        let n = self.0.config.n();
        let mut seeds = vec![vec![0.0; n]; self.0.steps() + 1];
        seeds[self.0.steps()].copy_from_slice(weights);
        let direct: Vec<f64> = weights.iter().map(|w| -w).collect();
        self.0.pull_back(&seeds, Some(&direct), grad);
    }
}

fn check_dims(model: &LinearDiscreteModel, pressure: &PressureModel, config: &MpcConfig) -> Result<(), EmpcError> {
    config.validate()?;
    if model.n != config.n() || model.m != config.m() {
        return Err(EmpcError::Dimension(format!(
            "model is {}x{}, configuration {}x{}",
            model.n,
            model.m,
            config.n(),
            config.m()
        )));
    }
    if pressure.p_in.len() != model.m || pressure.a_p.ncols() != model.n {
        return Err(EmpcError::Dimension("pressure model does not match the state model".into()));
    }
    Ok(())
}

fn total_cost(
    pressure: &PressureModel,
    config: &MpcConfig,
    states: &[Vec<f64>],
    u: &[Vec<f64>],
    c: &[f64],
) -> f64 {
    u.iter().enumerate().map(|(j, uj)| stage_cost(&states[j], uj, c[j], pressure, config)).sum()
}

/// Minimum-cost one-day orbit with `h_0 = h_T`.
///
/// Decision variables are `h_0` and the day's inputs; the states follow from
/// the rollout and periodicity is a two-sided inequality inside
/// [`PERIODICITY_TOL`].
pub fn compute_periodic_trajectory(
    model: &LinearDiscreteModel,
    pressure: &PressureModel,
    d_star: &[f64],
    c_star: &[f64],
    config: &MpcConfig,
) -> Result<PeriodicTrajectory, EmpcError> {
    check_dims(model, pressure, config)?;
    let steps = config.steps_per_day();
    if d_star.len() != steps || c_star.len() != steps {
        return Err(EmpcError::Dimension(format!(
            "daily profiles need {steps} samples, got {} demands and {} prices",
            d_star.len(),
            c_star.len()
        )));
    }
    let horizon = Horizon {
        model,
        pressure,
        config,
        d: d_star,
        c: c_star,
        fixed_h0: None,
        scale: cost_scale(pressure, config, c_star),
    };
    let boxes = StateBox(&horizon);
    let slack = 0.5 * PERIODICITY_TOL;
    let periodic = TwoSided { inner: Periodicity(&horizon), tol: slack };
    let problem = SmoothProblem::new(vec![0.0; horizon.dim()], vec![1.0; horizon.dim()], &horizon).with_constraints(&boxes).with_constraints(&periodic);

    let mid: Vec<f64> = config.lower.iter().zip(&config.upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let total_max: f64 = config.u_max.iter().sum();
    let u0: Vec<Vec<f64>> =
        d_star.iter().map(|d| config.u_max.iter().map(|um| um * (d / total_max).clamp(0.0, 1.0)).collect()).collect();
    let x0 = horizon.pack(&mid, &u0);

    let solver = SolverConfig { ctol: config.solver.ctol.min(slack), ..config.solver };
    let result = minimize(&problem, &x0, &solver)?;
    if result.status == SolveStatus::Infeasible {
        return Err(EmpcError::Infeasible { violation: result.max_violation });
    }
    let (h0, u_star) = horizon.unpack(&result.x);
    let h_star = rollout(model, &h0, &u_star, d_star)?;
    let cost = total_cost(pressure, config, &h_star, &u_star, c_star);
    Ok(PeriodicTrajectory {
        h_star,
        u_star,
        d_star: d_star.to_vec(),
        c_star: c_star.to_vec(),
        cost,
        status: result.status,
        iterations: result.iterations,
    })
}

/// Shrinking-horizon problem at time `t` from measured model state `h_t`.
///
/// `warm` seeds the inputs when it has the right length; otherwise the
/// periodic inputs for the remaining hours of the day are used. Infeasibility
/// is reported through the status, never as an error.
#[allow(clippy::too_many_arguments)]
pub fn solve_mpc(
    h_t: &[f64],
    t: f64,
    d_forecast: &[f64],
    c_forecast: &[f64],
    trajectory: &PeriodicTrajectory,
    model: &LinearDiscreteModel,
    pressure: &PressureModel,
    config: &MpcConfig,
    warm: Option<&[Vec<f64>]>,
) -> Result<MpcSolution, EmpcError> {
    check_dims(model, pressure, config)?;
    let steps = horizon_length(t, config.t_day, config.dt)?;
    if d_forecast.len() != steps || c_forecast.len() != steps {
        return Err(EmpcError::Dimension(format!(
            "horizon at t = {t} has {steps} steps, got {} demands and {} prices",
            d_forecast.len(),
            c_forecast.len()
        )));
    }
    if h_t.len() != config.n() || h_t.iter().any(|h| !h.is_finite()) {
        return Err(EmpcError::Dimension("measured state must be finite with one entry per model state".into()));
    }
    if trajectory.u_star.len() != config.steps_per_day() || trajectory.terminal().len() != config.n() {
        return Err(EmpcError::Dimension("periodic trajectory does not match the configuration".into()));
    }
    let horizon = Horizon {
        model,
        pressure,
        config,
        d: d_forecast,
        c: c_forecast,
        fixed_h0: Some(h_t),
        scale: cost_scale(pressure, config, c_forecast),
    };
    let boxes = StateBox(&horizon);
    let ball = TerminalBall { horizon: &horizon, target: trajectory.terminal(), radius: config.terminal_radius };
    let problem = SmoothProblem::new(vec![0.0; horizon.dim()], vec![1.0; horizon.dim()], &horizon)
        .with_constraints(&boxes)
        .with_constraints(&ball);

    let start: Vec<Vec<f64>> = match warm {
        Some(w) if w.len() == steps && w.iter().all(|u| u.len() == config.m()) => w.to_vec(),
        _ => {
            let k0 = step_index(t, config.dt)? % config.steps_per_day();
            trajectory.u_star[k0..].to_vec()
        }
    };
    let x0 = horizon.pack(h_t, &start);
    let result = minimize(&problem, &x0, &config.solver)?;
    let (_, u_seq) = horizon.unpack(&result.x);
    let states = rollout(model, h_t, &u_seq, d_forecast)?;
    let objective = total_cost(pressure, config, &states, &u_seq, c_forecast);
    let terminal_distance = states
        .last()
        .unwrap()
        .iter()
        .zip(trajectory.terminal())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(MpcSolution {
        t,
        h0: h_t.to_vec(),
        u_seq,
        h_seq: states[1..].to_vec(),
        objective,
        status: result.status,
        iterations: result.iterations,
        evaluations: result.evaluations,
        max_violation: result.max_violation,
        terminal_distance,
    })
}
