//! Box- and inequality-constrained smooth minimization.
//!
//! The decision box is kept exact by projection inside a projected BFGS
//! method; general inequalities `g(x) ≤ 0` go through a Powell–Hestenes–
//! Rockafellar augmented Lagrangian. A restoration phase looks for a feasible
//! point first and reports infeasibility when it cannot find one.

mod bfgs;

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use bfgs::{projected_bfgs, InnerSettings};

/// A smooth scalar function with its gradient.
pub trait Objective {
    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for F {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

/// A block of inequality constraints `g(x) ≤ 0`.
pub trait Constraints {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `g(x)` into `out`.
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Adds `Σ_i w_i ∇g_i(x)` to `grad`.
    fn vjp(&self, x: &[f64], weights: &[f64], grad: &mut [f64]);
}

/// Turns `c(x)` into the pair `c(x) − tol ≤ 0`, `−c(x) − tol ≤ 0`.
pub struct TwoSided<C> {
    pub inner: C,
    pub tol: f64,
}

impl<C: Constraints> Constraints for TwoSided<C> {
    fn len(&self) -> usize {
        2 * self.inner.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let k = self.inner.len();
        self.inner.eval(x, &mut out[..k]);
        for i in 0..k {
            out[k + i] = -out[i] - self.tol;
            out[i] -= self.tol;
        }
    }

    fn vjp(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        let k = self.inner.len();
        let w: Vec<f64> = (0..k).map(|i| weights[i] - weights[k + i]).collect();
        self.inner.vjp(x, &w, grad);
    }
}

/// Dense problem description: box, objective and inequality blocks.
pub struct SmoothProblem<'a> {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: &'a dyn Objective,
    pub constraints: Vec<&'a dyn Constraints>,
}

impl<'a> SmoothProblem<'a> {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, objective: &'a dyn Objective) -> Self {
        Self { lower, upper, objective, constraints: Vec::new() }
    }

    pub fn with_constraints(mut self, block: &'a dyn Constraints) -> Self {
        self.constraints.push(block);
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.iter().map(|c| c.len()).sum()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    fn constraint_values(&self, x: &[f64], out: &mut [f64]) {
        let mut off = 0;
        for c in &self.constraints {
            c.eval(x, &mut out[off..off + c.len()]);
            off += c.len();
        }
    }

    fn constraint_vjp(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        let mut off = 0;
        for c in &self.constraints {
            c.vjp(x, &weights[off..off + c.len()], grad);
            off += c.len();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Largest accepted constraint violation.
    pub ctol: f64,
    /// Stationarity tolerance, relative to `max(1, |f|)`.
    pub gtol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub armijo: f64,
    pub backtrack: f64,
    /// Seed for one extra solve from a perturbed start; `None` skips it.
    pub restart_seed: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 30,
            max_inner: 200,
            ctol: 1e-6,
            gtol: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            armijo: 1e-4,
            backtrack: 0.5,
            restart_seed: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [self.ctol, self.gtol, self.initial_penalty, self.armijo, self.backtrack];
        if self.max_outer == 0 || self.max_inner == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(SolveError::InvalidConfig("iteration limits and tolerances must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) || !(self.backtrack < 1.0) || !(self.armijo < 0.5) {
            return Err(SolveError::InvalidConfig("need penalty growth > 1, backtrack < 1, armijo < 0.5".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub max_violation: f64,
    /// Projected-gradient norm of the final augmented Lagrangian, relative to `max(1, |f|)`.
    pub stationarity: f64,
    /// Inner (quasi-Newton) iterations over all outer rounds.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("objective is not finite at {point:?}")]
    EvaluationFailure { point: Vec<f64> },
    #[error("bad problem: {0}")]
    InvalidProblem(String),
    #[error("bad solver configuration: {0}")]
    InvalidConfig(String),
}

/// Largest violation of the box and of every constraint at `x`.
///
/// Returns `(max_violation ≤ tol, max_violation)`, with the violation floored at 0.
pub fn check_feasible(problem: &SmoothProblem<'_>, x: &[f64], tol: f64) -> (bool, f64) {
    let mut worst = 0.0f64;
    for ((xi, lo), hi) in x.iter().zip(&problem.lower).zip(&problem.upper) {
        worst = worst.max(lo - xi).max(xi - hi);
    }
    let mut g = vec![0.0; problem.constraint_count()];
    problem.constraint_values(x, &mut g);
    for gi in g {
        worst = worst.max(if gi.is_nan() { f64::INFINITY } else { gi });
    }
    (worst <= tol, worst)
}

/// Central-difference gradient with step `step·max(1, |x_i|)`.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_violation(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(*v))
}

/// Minimizes the problem from `x0` (projected onto the box).
pub fn minimize(problem: &SmoothProblem<'_>, x0: &[f64], config: &SolverConfig) -> Result<SolverResult, SolveError> {
    config.validate()?;
    let n = problem.dim();
    if problem.upper.len() != n || x0.len() != n {
        return Err(SolveError::InvalidProblem(format!(
            "dimension {n}, upper bounds {}, start {}",
            problem.upper.len(),
            x0.len()
        )));
    }
    if problem.lower.iter().zip(&problem.upper).any(|(l, u)| !(l <= u)) {
        return Err(SolveError::InvalidProblem("box has lower > upper".into()));
    }

    let first = solve_from(problem, x0, config)?;
    let Some(seed) = config.restart_seed else { return Ok(first) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = first
        .x
        .iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(x, (lo, hi))| {
            let width = if (hi - lo).is_finite() { hi - lo } else { 1.0 };
            x + 0.05 * width * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let second = solve_from(problem, &start, config)?;
    let better = match (first.status, second.status) {
        (SolveStatus::Optimal, SolveStatus::Optimal) => second.objective < first.objective,
        (SolveStatus::Optimal, _) => false,
        (_, SolveStatus::Optimal) => true,
        _ => second.max_violation < first.max_violation,
    };
    let evaluations = first.evaluations + second.evaluations;
    let iterations = first.iterations + second.iterations;
    let mut chosen = if better { second } else { first };
    chosen.evaluations = evaluations;
    chosen.iterations = iterations;
    Ok(chosen)
}

fn solve_from(problem: &SmoothProblem<'_>, x0: &[f64], config: &SolverConfig) -> Result<SolverResult, SolveError> {
    let n = problem.dim();
    let nc = problem.constraint_count();
    let evals = Cell::new(0usize);
    let mut x = x0.to_vec();
    problem.project(&mut x);

    let mut grad = vec![0.0; n];
    let f0 = problem.objective.eval(&x, &mut grad);
    evals.set(1);
    if !f0.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SolveError::EvaluationFailure { point: x });
    }

    let mut g = vec![0.0; nc];
    let mut iterations = 0;

    // Restoration: minimize ½Σ max(0, g)² over the box.
    problem.constraint_values(&x, &mut g);
    if max_violation(&g) > config.ctol {
        let phi = |z: &[f64], gr: &mut [f64]| -> f64 {
            let mut gz = vec![0.0; nc];
            problem.constraint_values(z, &mut gz);
            let w: Vec<f64> = gz.iter().map(|v| v.max(0.0)).collect();
            gr.iter_mut().for_each(|v| *v = 0.0);
            problem.constraint_vjp(z, &w, gr);
            0.5 * w.iter().map(|v| v * v).sum::<f64>()
        };
        let ctol = config.ctol;
        let stop = |z: &[f64], _f: f64, _pg: f64| {
            let mut gz = vec![0.0; nc];
            problem.constraint_values(z, &mut gz);
            max_violation(&gz) <= 0.5 * ctol
        };
        let settings = InnerSettings {
            max_iter: config.max_inner,
            gtol: 0.0,
            armijo: config.armijo,
            backtrack: config.backtrack,
        };
        let out = projected_bfgs(&phi, &x, &problem.lower, &problem.upper, &settings, &stop);
        iterations += out.iterations;
        evals.set(evals.get() + out.evaluations);
        x = out.x;
        problem.constraint_values(&x, &mut g);
        let violation = max_violation(&g);
        if violation > config.ctol {
            let objective = problem.objective.eval(&x, &mut grad);
            evals.set(evals.get() + 1);
            return Ok(SolverResult {
                x,
                objective,
                status: SolveStatus::Infeasible,
                max_violation: violation,
                stationarity: f64::INFINITY,
                iterations,
                outer_iterations: 0,
                evaluations: evals.get(),
                multipliers: vec![0.0; nc],
            });
        }
    }

    let mut lambda = vec![0.0; nc];
    let mut mu = config.initial_penalty;
    let mut prev_violation = f64::INFINITY;
    let mut outer = 0;
    let mut stationarity = f64::INFINITY;
    let mut inner_converged = false;
    let mut violation = max_violation(&g);

    while outer < config.max_outer {
        outer += 1;
        let lam = lambda.clone();
        let augmented = |z: &[f64], gr: &mut [f64]| -> f64 {
            let f = problem.objective.eval(z, gr);
            if nc == 0 || !f.is_finite() {
                return f;
            }
            let mut gz = vec![0.0; nc];
            problem.constraint_values(z, &mut gz);
            let mut penalty = 0.0;
            let w: Vec<f64> = gz
                .iter()
                .zip(&lam)
                .map(|(gi, li)| {
                    let s = (li + mu * gi).max(0.0);
                    penalty += (s * s - li * li) / (2.0 * mu);
                    s
                })
                .collect();
            problem.constraint_vjp(z, &w, gr);
            f + penalty
        };
        let settings = InnerSettings {
            max_iter: config.max_inner,
            gtol: config.gtol,
            armijo: config.armijo,
            backtrack: config.backtrack,
        };
        let out = projected_bfgs(&augmented, &x, &problem.lower, &problem.upper, &settings, &|_, _, _| false);
        iterations += out.iterations;
        evals.set(evals.get() + out.evaluations);
        x = out.x;
        stationarity = out.stationarity;
        inner_converged = out.converged;

        if nc == 0 {
            break;
        }
        problem.constraint_values(&x, &mut g);
        violation = max_violation(&g);
        // Multiplier update, and the complementarity measure it implies.
        let mut complementarity = 0.0f64;
        for (li, gi) in lambda.iter_mut().zip(&g) {
            let next = (*li + mu * gi).max(0.0);
            complementarity = complementarity.max((next - *li).abs() / mu);
            *li = next;
        }
        if violation <= config.ctol && complementarity <= config.ctol && inner_converged {
            break;
        }
        if violation <= config.ctol && complementarity <= config.ctol && !inner_converged {
            continue;
        }
        if violation > 0.25 * prev_violation {
            mu *= config.penalty_growth;
        }
        prev_violation = violation;
    }

    let objective = problem.objective.eval(&x, &mut grad);
    evals.set(evals.get() + 1);
    let status = if violation > config.ctol {
        SolveStatus::Infeasible
    } else if inner_converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    Ok(SolverResult {
        x,
        objective,
        status,
        max_violation: violation,
        stationarity,
        iterations,
        outer_iterations: outer,
        evaluations: evals.get(),
        multipliers: lambda,
    })
}
