#![allow(dead_code)]

use std::path::PathBuf;

use periodic_empc::hydronet::Network;

pub fn reference_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/reference")
}

pub fn reference_network() -> Network {
    Network::from_file(&reference_dir().join("topology.json")).expect("reference topology")
}

pub fn read_profile(name: &str) -> Vec<f64> {
    std::fs::read_to_string(reference_dir().join(name))
        .expect("profile")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().expect("number"))
        .collect()
}

/// Reservoir `R` feeding junction `J` through one pipe of resistance `k`.
///
/// A pump from reservoir `S` also discharges into `J`, and tank `T` hangs off
/// `R` so the network has the mandatory tank without touching `J`.
pub fn single_pipe(reservoir_head: f64, k: f64) -> Network {
    let json = format!(
        r#"{{
          "junctions": [{{"id": "J", "demand_share": 1.0}}],
          "tanks": [{{"id": "T", "area": 100.0, "min_level": 0.5, "max_level": 12.0, "init_level": 10.0}}],
          "reservoirs": [{{"id": "R", "head": {reservoir_head}}}, {{"id": "S", "head": 0.0}}],
          "pipes": [
            {{"from": "R", "to": "J", "K": {k}}},
            {{"from": "R", "to": "T", "K": 1.0}}
          ],
          "pumps": [{{"id": "P", "from": "S", "to": "J", "max_flow": 10.0}}]
        }}"#
    );
    Network::from_json(&json).expect("single pipe network")
}

/// Reference network, its aggregation, identified models and controller settings.
pub struct ReferenceSetup {
    pub network: Network,
    pub aggregation: periodic_empc::sysid::TankAggregation,
    pub models: periodic_empc::sysid::IdentifiedModels,
    pub config: periodic_empc::empc::MpcConfig,
    pub demand: Vec<f64>,
    pub price: Vec<f64>,
}

pub fn reference_setup() -> ReferenceSetup {
    use periodic_empc::hydronet::HydraulicPlant;
    use periodic_empc::sysid::{identify, ExcitationDesign, TankAggregation};

    let network = reference_network();
    let aggregation = TankAggregation::from_network(&network);
    let demand = read_profile("demand.csv");
    let price = read_profile("price.csv");
    let plant = HydraulicPlant::new(network.clone());
    let id = identify(&plant, &aggregation, &ExcitationDesign::new(7, 40, 24), &demand, 1.0, 0.0).expect("identification");
    let config = periodic_empc::empc::MpcConfig::new(
        aggregation.lower_bounds().to_vec(),
        aggregation.upper_bounds().to_vec(),
        network.max_flows(),
    );
    ReferenceSetup { network, aggregation, models: id.models, config, demand, price }
}
