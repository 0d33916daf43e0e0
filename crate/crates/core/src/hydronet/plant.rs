use serde::{Deserialize, Serialize};

use super::solver::{solve, TankBoundary};
use super::{pump_outlet_pressures, DemandAssignment, HydraulicError, HydraulicSolution, Network, SolverOptions};

/// Snapshot of the plant: tank levels plus the last hydraulic solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub tank_levels: Vec<f64>,
    pub node_heads: Vec<f64>,
    pub link_flows: Vec<f64>,
    /// Hours since the start of the simulation.
    pub sim_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Largest level change allowed within one integration sub-step (m).
    pub max_level_change: f64,
    pub solver: SolverOptions,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { max_level_change: 0.01, solver: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    /// Tanks clamped at zero during the step.
    pub depleted: Vec<usize>,
    /// Tanks that spilled at their physical height during the step.
    pub overflowed: Vec<usize>,
    /// Per pump, the integral of `q·(p_out − p_in)` over the step (m³/h · m · h).
    pub pumping_work: Vec<f64>,
    pub substeps: usize,
}

/// The nonlinear network standing in for the real system.
#[derive(Debug, Clone)]
pub struct HydraulicPlant {
    network: Network,
    options: StepOptions,
}

impl HydraulicPlant {
    pub fn new(network: Network) -> Self {
        Self { network, options: StepOptions::default() }
    }

    pub fn with_options(network: Network, options: StepOptions) -> Self {
        Self { network, options }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn options(&self) -> &StepOptions {
        &self.options
    }

    /// Plant state at the given tank levels, with a quasi-static solve at zero pumping and demand.
    pub fn initial_state(&self, tank_levels: &[f64]) -> Result<PlantState, HydraulicError> {
        let pumps = vec![0.0; self.network.pump_count()];
        let sol = self.solve_at(tank_levels, &pumps, &DemandAssignment::zeros(&self.network), None)?;
        Ok(PlantState {
            tank_levels: tank_levels.to_vec(),
            node_heads: sol.node_heads,
            link_flows: sol.link_flows,
            sim_time: 0.0,
        })
    }

    /// Quasi-static solve with the tanks held at `tank_levels`.
    pub fn solve_at(
        &self,
        tank_levels: &[f64],
        pump_flows: &[f64],
        demands: &DemandAssignment,
        warm: Option<&[f64]>,
    ) -> Result<HydraulicSolution, HydraulicError> {
        solve(&self.network, TankBoundary::Fixed(tank_levels), pump_flows, demands, warm, &self.options.solver)
    }

    /// Advances the plant by `dt` hours with constant pump flows and demands.
    ///
    /// Tank levels are integrated with backward Euler on the coupled network,
    /// using sub-steps short enough that no level moves more than
    /// `max_level_change` in one of them.
    pub fn step(
        &self,
        state: &PlantState,
        pump_flows: &[f64],
        demands: &DemandAssignment,
        dt: f64,
    ) -> Result<StepOutcome, HydraulicError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(HydraulicError::InvalidInput(format!("time step {dt} must be positive")));
        }
        let net = &self.network;
        let p_in = net.inlet_heads();
        let limit = self.options.max_level_change;

        let mut levels = state.tank_levels.clone();
        let mut warm = state.link_flows.clone();
        let mut remaining = dt;
        let mut h = dt;
        let mut depleted = Vec::new();
        let mut overflowed = Vec::new();
        let mut work = vec![0.0; net.pump_count()];
        let mut substeps = 0;
        let mut last: Option<HydraulicSolution> = None;

        while remaining > 1e-12 * dt {
            h = h.min(remaining);
            let sol = loop {
                let sol = solve(
                    net,
                    TankBoundary::Storage { old_levels: &levels, dt: h },
                    pump_flows,
                    demands,
                    Some(&warm),
                    &self.options.solver,
                )?;
                let change = net
                    .tanks()
                    .iter()
                    .enumerate()
                    .map(|(t, tank)| (sol.node_heads[net.tank_node(t)] - tank.elevation - levels[t]).abs())
                    .fold(0.0f64, f64::max);
                if change <= limit * (1.0 + 1e-9) {
                    break sol;
                }
                h *= 0.95 * limit / change;
            };

            let outlet = pump_outlet_pressures(net, &sol.node_heads);
            for (i, q) in pump_flows.iter().enumerate() {
                work[i] += q * (outlet[i] - p_in[i]) * h;
            }
            for (t, tank) in net.tanks().iter().enumerate() {
                let mut level = sol.node_heads[net.tank_node(t)] - tank.elevation;
                if level < 0.0 {
                    level = 0.0;
                    if !depleted.contains(&t) {
                        depleted.push(t);
                    }
                }
                let height = tank.physical_height();
                if level > height {
                    level = height;
                    if !overflowed.contains(&t) {
                        overflowed.push(t);
                    }
                }
                levels[t] = level;
            }
            warm.clone_from(&sol.link_flows);
            last = Some(sol);
            remaining -= h;
            substeps += 1;
            h *= 1.5;
        }

        let sol = last.expect("at least one sub-step is taken");
        Ok(StepOutcome {
            state: PlantState {
                tank_levels: levels,
                node_heads: sol.node_heads,
                link_flows: sol.link_flows,
                sim_time: state.sim_time + dt,
            },
            depleted,
            overflowed,
            pumping_work: work,
            substeps,
        })
    }
}
