use crate::hydronet::{DemandAssignment, HydraulicPlant, PlantState};
use crate::sysid::{IdentifiedModels, TankAggregation};

use super::HarnessError;

/// The system a controller drives during a run.
pub trait Plant {
    /// Physical tank levels (m).
    fn tank_levels(&self) -> Vec<f64>;

    /// Holds `pump_flows` and the zone demand for `dt` hours; returns the
    /// per-pump pumping work `∫ q·(p_out − p_in) dt`.
    fn advance(&mut self, pump_flows: &[f64], zone_demand: f64, dt: f64) -> Result<Vec<f64>, HarnessError>;
}

/// The nonlinear hydraulic network.
#[derive(Debug, Clone)]
pub struct NetworkPlant {
    plant: HydraulicPlant,
    state: PlantState,
}

impl NetworkPlant {
    pub fn new(plant: HydraulicPlant, tank_levels: &[f64]) -> Result<Self, HarnessError> {
        let state = plant.initial_state(tank_levels)?;
        Ok(Self { plant, state })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }
}

impl Plant for NetworkPlant {
    fn tank_levels(&self) -> Vec<f64> {
        self.state.tank_levels.clone()
    }

    fn advance(&mut self, pump_flows: &[f64], zone_demand: f64, dt: f64) -> Result<Vec<f64>, HarnessError> {
        let demands = DemandAssignment::from_zone_total(self.plant.network(), zone_demand)?;
        let out = self.plant.step(&self.state, pump_flows, &demands, dt)?;
        self.state = out.state;
        Ok(out.pumping_work)
    }
}

/// The identified linear model itself, used as a mismatch-free plant.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    models: IdentifiedModels,
    aggregation: TankAggregation,
    state: Vec<f64>,
}

impl LinearPlant {
    pub fn new(models: IdentifiedModels, aggregation: TankAggregation, tank_levels: &[f64]) -> Result<Self, HarnessError> {
        let state = aggregation.to_state(tank_levels)?;
        Ok(Self { models, aggregation, state })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

impl Plant for LinearPlant {
    fn tank_levels(&self) -> Vec<f64> {
        self.aggregation.to_physical(&self.state)
    }

    fn advance(&mut self, pump_flows: &[f64], zone_demand: f64, dt: f64) -> Result<Vec<f64>, HarnessError> {
        if (dt - self.models.state.dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(HarnessError::Scenario(format!("linear plant steps {} h, asked for {dt} h", self.models.state.dt)));
        }
        let p = &self.models.pressure;
        let work =
            p.outlet(&self.state, pump_flows).iter().zip(&p.p_in).zip(pump_flows).map(|((po, pi), q)| q * (po - pi) * dt).collect();
        self.state = self.models.state.step(&self.state, pump_flows, zone_demand);
        Ok(work)
    }
}
