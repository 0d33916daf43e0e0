//! Reduced linear models of the plant.
//!
//! Tank groups joined by inter-tank pipes collapse into one state, excitation
//! experiments are run on the hydraulic plant, and the discrete tank model
//! plus the pump outlet-head model are fitted by least squares.

mod aggregate;
mod dataset;
mod excitation;
mod fit;
mod model;

pub use aggregate::{TankAggregation, MAX_GROUP_SPREAD};
pub use dataset::{collect_dataset, CollectionReport, Dataset, Record};
pub use excitation::{generate_excitation, Episode, ExcitationDesign};
pub use fit::{
    fit_pressure_model, fit_pressure_model_with_inlet, fit_state_model, least_squares, one_step_rms,
    open_loop_max_error, pressure_rms, LeastSquares, PressureFit, StateFit, MAX_SPECTRAL_RADIUS,
};
pub use model::{row_major, IdentifiedModels, LinearDiscreteModel, PressureModel};

use thiserror::Error;

use crate::hydronet::{HydraulicError, HydraulicPlant};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("regressors have numerical rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error("dataset has {records} records, need at least {required}")]
    InsufficientData { records: usize, required: usize },
    #[error("{dropped} of {total} episodes dropped on hydraulic failures")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("fitted model is explosive (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },
    #[error("tank aggregation violated: {0}")]
    Aggregation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Hydraulic(#[from] HydraulicError),
}

/// Fraction of episodes held out for validation.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Everything produced by one identification run.
#[derive(Debug, Clone)]
pub struct Identification {
    pub models: crate::sysid::IdentifiedModels,
    pub dataset: Dataset,
    pub collection: CollectionReport,
    pub train_rms: Vec<f64>,
    /// One-step state RMS on the held-out episodes (m).
    pub holdout_state_rms: Vec<f64>,
    /// Outlet-head RMS on the held-out episodes (m).
    pub holdout_pressure_rms: Vec<f64>,
}

/// Excite the plant, fit both models on the training episodes and score them
/// on the held-out ones.
pub fn identify(
    plant: &HydraulicPlant,
    aggregation: &TankAggregation,
    design: &ExcitationDesign,
    demand_profile: &[f64],
    dt: f64,
    ridge: f64,
) -> Result<Identification, IdentError> {
    let episodes = generate_excitation(plant.network(), aggregation, design);
    let (dataset, collection) = collect_dataset(plant, aggregation, &episodes, demand_profile, dt)?;
    let (train, test) = dataset.split_holdout(HOLDOUT_FRACTION);
    let state = fit_state_model(&train, ridge)?;
    let pressure = fit_pressure_model(&train, plant.network())?;
    let holdout_state_rms = one_step_rms(&state.model, &test);
    let holdout_pressure_rms = pressure_rms(&pressure.model, &test);
    Ok(Identification {
        models: IdentifiedModels { state: state.model, pressure: pressure.model },
        dataset,
        collection,
        train_rms: state.residual_rms,
        holdout_state_rms,
        holdout_pressure_rms,
    })
}
