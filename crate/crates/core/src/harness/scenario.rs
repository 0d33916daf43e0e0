use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::empc::{compute_periodic_trajectory, MpcConfig, PeriodicTrajectory};
use crate::hydronet::{HydraulicPlant, Network};
use crate::nlpsolve::SolverConfig;
use crate::sysid::{identify, ExcitationDesign, IdentifiedModels, TankAggregation};

use super::{read_json, read_text, HarnessError};

/// A daily profile given inline or as a CSV file with one value per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Values(Vec<f64>),
    File(PathBuf),
}

impl Profile {
    pub fn load(&self, base: &Path) -> Result<Vec<f64>, HarnessError> {
        match self {
            Profile::Values(v) => Ok(v.clone()),
            Profile::File(p) => {
                let path = base.join(p);
                parse_profile(&read_text(&path)?, &path)
            }
        }
    }
}

pub fn parse_profile(text: &str, path: &Path) -> Result<Vec<f64>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| HarnessError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected a number, found {:?}", l.trim()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    pub barrier_a: f64,
    pub barrier_b: f64,
    pub terminal_radius: f64,
    pub dt: f64,
    pub t_day: f64,
    /// Per model state; the aggregated tank bounds when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub solver: SolverConfig,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            barrier_a: crate::empc::DEFAULT_BARRIER_A,
            barrier_b: crate::empc::DEFAULT_BARRIER_B,
            terminal_radius: crate::empc::DEFAULT_TERMINAL_RADIUS,
            dt: 1.0,
            t_day: 24.0,
            lower: None,
            upper: None,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationSettings {
    pub seed: u64,
    pub episodes: usize,
    pub episode_length: usize,
    pub ridge: f64,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        Self { seed: 7, episodes: 40, episode_length: 24, ridge: 0.0 }
    }
}

fn default_perturbation() -> f64 {
    0.05
}

fn default_days() -> usize {
    1
}

/// One closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Relative paths resolve against the scenario file's directory.
    pub topology: PathBuf,
    pub price: Profile,
    /// Total zone demand per sample (m³/h), spread over junctions by their shares.
    pub demand: Profile,
    #[serde(default)]
    pub seed: u64,
    /// Forecast error amplitude, a fraction of peak demand.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_days")]
    pub days: usize,
    /// Physical tank levels at t = 0; the periodic start point when absent.
    #[serde(default)]
    pub initial_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub controller: ControllerSettings,
    #[serde(default)]
    pub identification: IdentificationSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ScenarioConfig = read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn topology_path(&self) -> PathBuf {
        self.base_dir.join(&self.topology)
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.as_ref().map(|o| self.base_dir.join(o))
    }
}

/// Everything a run needs besides the plant: models, controller settings and the orbit.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: ScenarioConfig,
    pub network: Network,
    pub aggregation: TankAggregation,
    pub models: IdentifiedModels,
    pub config: MpcConfig,
    pub trajectory: PeriodicTrajectory,
    pub price: Vec<f64>,
    pub demand: Vec<f64>,
}

impl PreparedScenario {
    /// Physical levels at t = 0.
    pub fn initial_levels(&self) -> Vec<f64> {
        self.scenario.initial_levels.clone().unwrap_or_else(|| self.aggregation.to_physical(&self.trajectory.h_star[0]))
    }

    pub fn steps_per_day(&self) -> usize {
        self.config.steps_per_day()
    }
}

/// Loaded inputs before identification.
#[derive(Debug, Clone)]
pub struct ScenarioInputs {
    pub network: Network,
    pub aggregation: TankAggregation,
    pub config: MpcConfig,
    pub price: Vec<f64>,
    pub demand: Vec<f64>,
}

/// Reads the topology and profiles and checks the scenario invariants.
pub fn load_inputs(scenario: &ScenarioConfig) -> Result<ScenarioInputs, HarnessError> {
    let path = scenario.topology_path();
    if !path.exists() {
        return Err(HarnessError::Io { path, message: "no such file".into() });
    }
    let network = Network::from_file(&path)?;
    let aggregation = TankAggregation::from_network(&network);
    let c = &scenario.controller;
    let n = aggregation.state_dim();
    let mut config = MpcConfig::new(
        c.lower.clone().unwrap_or_else(|| aggregation.lower_bounds().to_vec()),
        c.upper.clone().unwrap_or_else(|| aggregation.upper_bounds().to_vec()),
        network.max_flows(),
    );
    config.barrier_a = vec![c.barrier_a; 2 * n];
    config.barrier_b = vec![c.barrier_b; 2 * n];
    config.terminal_radius = c.terminal_radius;
    config.dt = c.dt;
    config.t_day = c.t_day;
    config.solver = c.solver;
    config.validate()?;

    let steps = config.steps_per_day();
    let price = scenario.price.load(&scenario.base_dir)?;
    let demand = scenario.demand.load(&scenario.base_dir)?;
    for (name, p) in [("price", &price), ("demand", &demand)] {
        if p.len() != steps {
            return Err(HarnessError::Scenario(format!("{name} profile has {} values, the day has {steps}", p.len())));
        }
    }
    if demand.iter().any(|d| *d < 0.0) {
        return Err(HarnessError::Scenario("demand must be non-negative".into()));
    }
    if !(0.0..=0.5).contains(&scenario.perturbation) {
        return Err(HarnessError::Scenario(format!("perturbation {} outside [0, 0.5]", scenario.perturbation)));
    }
    if scenario.days == 0 {
        return Err(HarnessError::Scenario("days must be at least 1".into()));
    }
    if let Some(levels) = &scenario.initial_levels {
        let tanks = network.tanks();
        if levels.len() != tanks.len()
            || levels.iter().zip(tanks).any(|(h, t)| !(t.min_level..=t.max_level).contains(h))
        {
            return Err(HarnessError::Scenario("initial levels must lie within the tank bounds".into()));
        }
    }
    Ok(ScenarioInputs { network, aggregation, config, price, demand })
}

/// Identifies the plant from its own excitation experiment.
pub fn identify_models(scenario: &ScenarioConfig, inputs: &ScenarioInputs) -> Result<IdentifiedModels, HarnessError> {
    let s = &scenario.identification;
    let plant = HydraulicPlant::new(inputs.network.clone());
    let design = ExcitationDesign::new(s.seed, s.episodes, s.episode_length);
    let id = identify(&plant, &inputs.aggregation, &design, &inputs.demand, inputs.config.dt, s.ridge)?;
    Ok(id.models)
}

/// Loads the scenario inputs and fills in whatever artifacts are not supplied.
pub fn prepare_with(
    scenario: &ScenarioConfig,
    models: Option<IdentifiedModels>,
    trajectory: Option<PeriodicTrajectory>,
) -> Result<PreparedScenario, HarnessError> {
    let inputs = load_inputs(scenario)?;
    let models = match models {
        Some(m) => m,
        None => identify_models(scenario, &inputs)?,
    };
    let trajectory = match trajectory {
        Some(t) => t,
        None => compute_periodic_trajectory(&models.state, &models.pressure, &inputs.demand, &inputs.price, &inputs.config)?,
    };
    if trajectory.u_star.len() != inputs.config.steps_per_day() || trajectory.terminal().len() != inputs.config.n() {
        return Err(HarnessError::Scenario("periodic trajectory does not match the scenario".into()));
    }
    Ok(PreparedScenario {
        scenario: scenario.clone(),
        network: inputs.network,
        aggregation: inputs.aggregation,
        models,
        config: inputs.config,
        trajectory,
        price: inputs.price,
        demand: inputs.demand,
    })
}

pub fn prepare(scenario: &ScenarioConfig) -> Result<PreparedScenario, HarnessError> {
    prepare_with(scenario, None, None)
}
