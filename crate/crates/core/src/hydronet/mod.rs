//! Nonlinear hydraulic plant.
//!
//! Pipes follow the Hazen-Williams law, pumps are ideal flow sources drawing
//! from fixed-head reservoirs, and tanks are fixed-head boundaries whose
//! levels are integrated between hydraulic solves. Flows are in m³/h, heads
//! and levels in m, areas in m².

mod plant;
mod solver;
mod topology;

pub use plant::{HydraulicPlant, PlantState, StepOptions, StepOutcome};
pub use solver::{solve_steady_state, HydraulicSolution, SolverOptions};
pub use topology::{
    Junction, Network, NetworkTopology, NodeKind, PipeLink, Pump, PumpLink, Pipe, Reservoir, Tank,
};

use thiserror::Error;

/// Hazen-Williams flow exponent minus one.
pub const HW_EXPONENT: f64 = 0.852;

/// Flow below which the head-loss slope is frozen (m³/h).
pub const DEFAULT_Q_EPS: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HydraulicError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("node `{node}` has no pipe path to a fixed-head node")]
    DisconnectedDemand { node: String },
    #[error("hydraulic solve did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

/// Head loss `K·q·|q|^0.852` across a pipe carrying flow `q`.
pub fn headloss(k: f64, q: f64) -> Result<f64, HydraulicError> {
    if !k.is_finite() || !q.is_finite() {
        return Err(HydraulicError::InvalidInput(format!("non-finite headloss input (K={k}, q={q})")));
    }
    Ok(headloss_unchecked(k, q))
}

/// Slope of [`headloss`] with respect to flow, frozen below `q_eps`.
pub fn headloss_derivative(k: f64, q: f64) -> Result<f64, HydraulicError> {
    if !k.is_finite() || !q.is_finite() {
        return Err(HydraulicError::InvalidInput(format!("non-finite headloss input (K={k}, q={q})")));
    }
    Ok(headloss_slope(k, q, DEFAULT_Q_EPS))
}

#[inline]
pub(crate) fn headloss_unchecked(k: f64, q: f64) -> f64 {
    k * q * q.abs().powf(HW_EXPONENT)
}

#[inline]
pub(crate) fn headloss_slope(k: f64, q: f64, q_eps: f64) -> f64 {
    (1.0 + HW_EXPONENT) * k * q.abs().max(q_eps).powf(HW_EXPONENT)
}

/// Per-junction demands at one instant, in m³/h.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandAssignment(Vec<f64>);

impl DemandAssignment {
    pub fn new(demands: Vec<f64>) -> Result<Self, HydraulicError> {
        if let Some(d) = demands.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(HydraulicError::InvalidInput(format!("demand {d} is not a finite non-negative value")));
        }
        Ok(Self(demands))
    }

    pub fn zeros(net: &Network) -> Self {
        Self(vec![0.0; net.junction_count()])
    }

    /// Spreads an aggregated zone demand over the junctions by their demand shares.
    pub fn from_zone_total(net: &Network, total: f64) -> Result<Self, HydraulicError> {
        let share_sum: f64 = net.zone_junctions().map(|j| net.junctions()[j].demand_share).sum();
        let mut d = vec![0.0; net.junction_count()];
        if total != 0.0 {
            if share_sum <= 0.0 {
                return Err(HydraulicError::InvalidInput("no junction carries a zone demand share".into()));
            }
            for j in net.zone_junctions() {
                d[j] = total * net.junctions()[j].demand_share / share_sum;
            }
        }
        Self::new(d)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Sum over zone junctions (the aggregated demand d_a).
    pub fn zone_total(&self, net: &Network) -> f64 {
        net.zone_junctions().map(|j| self.0[j]).sum()
    }
}

/// Head at each pump outlet, in pump order.
pub fn pump_outlet_pressures(net: &Network, node_heads: &[f64]) -> Vec<f64> {
    net.pumps().iter().map(|p| node_heads[p.to]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn headloss_examples() {
        assert_eq!(headloss(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(headloss(1.0, 0.0).unwrap(), 0.0);
        // -2 * 3^1.852
        assert_relative_eq!(headloss(2.0, -3.0).unwrap(), -15.298_841_998_680_55, max_relative = 1e-7);
        assert!(headloss(f64::NAN, 1.0).is_err());
        assert!(headloss(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_relative_eq!(headloss_derivative(1.0, 1.0).unwrap(), 1.852, max_relative = 1e-12);
        assert_relative_eq!(headloss_derivative(1.0, -1.0).unwrap(), 1.852, max_relative = 1e-12);
        assert_relative_eq!(headloss_derivative(3.0, 2.0).unwrap(), 10.028_588_083_562_52, max_relative = 1e-6);
        let frozen = headloss_derivative(1.0, 1e-7).unwrap();
        assert_relative_eq!(frozen, 1.852 * DEFAULT_Q_EPS.powf(0.852), max_relative = 1e-12);
    }

    #[test]
    fn derivative_matches_central_difference() {
        for &(k, q) in &[(0.5f64, 3.0f64), (2.0, -0.7), (1e-4, 120.0)] {
            let h = 1e-6 * q.abs();
            let fd = (headloss_unchecked(k, q + h) - headloss_unchecked(k, q - h)) / (2.0 * h);
            assert_relative_eq!(headloss_derivative(k, q).unwrap(), fd, max_relative = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn headloss_is_odd(k in 1e-6f64..10.0, q in -500.0f64..500.0) {
            prop_assert_eq!(headloss(k, -q).unwrap(), -headloss(k, q).unwrap());
        }

        #[test]
        fn headloss_is_increasing(k in 1e-6f64..10.0, q in -500.0f64..500.0, dq in 1e-3f64..10.0) {
            prop_assert!(headloss(k, q + dq).unwrap() > headloss(k, q).unwrap());
        }
    }
}
