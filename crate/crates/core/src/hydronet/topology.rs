use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HydraulicError;

fn default_true() -> bool {
    true
}

/// A demand node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    #[serde(default)]
    pub elevation: f64,
    /// Fraction of the aggregated zone demand drawn at this junction.
    #[serde(default)]
    pub demand_share: f64,
    /// Whether the junction belongs to the zone supplied by the controlled pumps.
    #[serde(default = "default_true")]
    pub zone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tank {
    pub id: String,
    /// Cross-sectional area in m².
    pub area: f64,
    /// Operational lower level bound in m.
    pub min_level: f64,
    /// Operational upper level bound in m.
    pub max_level: f64,
    pub init_level: f64,
    #[serde(default)]
    pub elevation: f64,
    /// Physical height; the tank spills above it. Defaults to `max_level`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

impl Tank {
    pub fn physical_height(&self) -> f64 {
        self.height.unwrap_or(self.max_level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    pub id: String,
    /// Fixed hydraulic head in m.
    pub head: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub from: String,
    pub to: String,
    /// Hazen-Williams resistance, head loss in m per (m³/h)^1.852.
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(default)]
    pub inter_tank: bool,
}

/// Ideal flow source lifting water from a reservoir into the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pump {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Upper flow bound in m³/h.
    pub max_flow: f64,
}

/// Raw network description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub junctions: Vec<Junction>,
    pub tanks: Vec<Tank>,
    pub reservoirs: Vec<Reservoir>,
    pub pipes: Vec<Pipe>,
    pub pumps: Vec<Pump>,
}

impl NetworkTopology {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology is always serializable")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Junction(usize),
    Tank(usize),
    Reservoir(usize),
}

/// Pipe endpoints resolved to node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipeLink {
    pub from: usize,
    pub to: usize,
    pub k: f64,
    pub inter_tank: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpLink {
    /// Reservoir index (not node index).
    pub reservoir: usize,
    /// Node index of the outlet.
    pub to: usize,
    pub max_flow: f64,
}

/// A validated, index-resolved network.
///
/// Node order is junctions, then tanks, then reservoirs. Link order is pipes,
/// then pumps.
#[derive(Debug, Clone)]
pub struct Network {
    topology: NetworkTopology,
    kinds: Vec<NodeKind>,
    index: BTreeMap<String, usize>,
    pipes: Vec<PipeLink>,
    pumps: Vec<PumpLink>,
}

impl Network {
    pub fn new(topology: NetworkTopology) -> Result<Self, HydraulicError> {
        let invalid = |msg: String| Err(HydraulicError::InvalidTopology(msg));

        if topology.tanks.is_empty() {
            return invalid("network needs at least one tank".into());
        }
        if topology.pumps.is_empty() {
            return invalid("network needs at least one pump".into());
        }

        let mut kinds = Vec::new();
        let mut index = BTreeMap::new();
        let mut add = |id: &str, kind: NodeKind| -> Result<(), HydraulicError> {
            if index.insert(id.to_string(), kinds.len()).is_some() {
                return Err(HydraulicError::InvalidTopology(format!("duplicate node id `{id}`")));
            }
            kinds.push(kind);
            Ok(())
        };
        for (i, j) in topology.junctions.iter().enumerate() {
            if !j.elevation.is_finite() || !j.demand_share.is_finite() || j.demand_share < 0.0 {
                return invalid(format!("junction `{}` has invalid data", j.id));
            }
            add(&j.id, NodeKind::Junction(i))?;
        }
        for (i, t) in topology.tanks.iter().enumerate() {
            if !(t.area > 0.0 && t.area.is_finite()) {
                return invalid(format!("tank `{}` must have a positive area", t.id));
            }
            if !(t.min_level < t.max_level) || !t.min_level.is_finite() || !t.max_level.is_finite() {
                return invalid(format!("tank `{}` needs min_level < max_level", t.id));
            }
            let height = t.physical_height();
            if !(height >= t.max_level) {
                return invalid(format!("tank `{}` is shorter than its max_level", t.id));
            }
            if !(0.0..=height).contains(&t.init_level) {
                return invalid(format!("tank `{}` initial level outside [0, height]", t.id));
            }
            if !t.elevation.is_finite() {
                return invalid(format!("tank `{}` has a non-finite elevation", t.id));
            }
            add(&t.id, NodeKind::Tank(i))?;
        }
        for (i, r) in topology.reservoirs.iter().enumerate() {
            if !r.head.is_finite() {
                return invalid(format!("reservoir `{}` has a non-finite head", r.id));
            }
            add(&r.id, NodeKind::Reservoir(i))?;
        }

        let lookup = |id: &str| -> Result<usize, HydraulicError> {
            index
                .get(id)
                .copied()
                .ok_or_else(|| HydraulicError::InvalidTopology(format!("unknown node `{id}`")))
        };

        let mut pipes = Vec::with_capacity(topology.pipes.len());
        for p in &topology.pipes {
            let (from, to) = (lookup(&p.from)?, lookup(&p.to)?);
            if from == to {
                return invalid(format!("pipe `{}`-`{}` is a self loop", p.from, p.to));
            }
            if !(p.k > 0.0 && p.k.is_finite()) {
                return invalid(format!("pipe `{}`-`{}` needs K > 0", p.from, p.to));
            }
            if p.inter_tank
                && !(matches!(kinds[from], NodeKind::Tank(_)) && matches!(kinds[to], NodeKind::Tank(_)))
            {
                return invalid(format!("inter-tank pipe `{}`-`{}` must join two tanks", p.from, p.to));
            }
            pipes.push(PipeLink { from, to, k: p.k, inter_tank: p.inter_tank });
        }

        let mut pumps = Vec::with_capacity(topology.pumps.len());
        for p in &topology.pumps {
            let reservoir = match kinds[lookup(&p.from)?] {
                NodeKind::Reservoir(r) => r,
                _ => return invalid(format!("pump `{}` must draw from a reservoir", p.id)),
            };
            let to = lookup(&p.to)?;
            if matches!(kinds[to], NodeKind::Reservoir(_)) {
                return invalid(format!("pump `{}` cannot discharge into a reservoir", p.id));
            }
            if !(p.max_flow > 0.0 && p.max_flow.is_finite()) {
                return invalid(format!("pump `{}` needs max_flow > 0", p.id));
            }
            pumps.push(PumpLink { reservoir, to, max_flow: p.max_flow });
        }

        let net = Network { topology, kinds, index, pipes, pumps };
        net.check_connectivity()?;
        Ok(net)
    }

    pub fn from_json(text: &str) -> Result<Self, HydraulicError> {
        let topology = NetworkTopology::from_json(text)
            .map_err(|e| HydraulicError::InvalidTopology(format!("malformed topology JSON: {e}")))?;
        Self::new(topology)
    }

    pub fn from_file(path: &Path) -> Result<Self, HydraulicError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HydraulicError::InvalidTopology(format!("{}: {e}", path.display())))?;
        let topology = NetworkTopology::from_json(&text).map_err(|e| {
            HydraulicError::InvalidTopology(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        Self::new(topology)
    }

    fn check_connectivity(&self) -> Result<(), HydraulicError> {
        let n = self.kinds.len();
        let mut pipe_adj = vec![Vec::new(); n];
        let mut all_adj = vec![Vec::new(); n];
        for p in &self.pipes {
            pipe_adj[p.from].push(p.to);
            pipe_adj[p.to].push(p.from);
            all_adj[p.from].push(p.to);
            all_adj[p.to].push(p.from);
        }
        for p in &self.pumps {
            let r = self.reservoir_node(p.reservoir);
            all_adj[r].push(p.to);
            all_adj[p.to].push(r);
        }

        let reach = |adj: &[Vec<usize>], seeds: &[usize]| {
            let mut seen = vec![false; n];
            let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
            for &s in seeds {
                seen[s] = true;
            }
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            seen
        };

        let seen = reach(&all_adj, &[0]);
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(HydraulicError::InvalidTopology(format!(
                "network is not connected: `{}` is isolated",
                self.node_id(v)
            )));
        }

        let fixed: Vec<usize> = (0..n).filter(|&v| !matches!(self.kinds[v], NodeKind::Junction(_))).collect();
        let seen = reach(&pipe_adj, &fixed);
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(HydraulicError::DisconnectedDemand { node: self.node_id(v).to_string() });
        }
        Ok(())
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn node_kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, node: usize) -> &str {
        match self.kinds[node] {
            NodeKind::Junction(i) => &self.topology.junctions[i].id,
            NodeKind::Tank(i) => &self.topology.tanks[i].id,
            NodeKind::Reservoir(i) => &self.topology.reservoirs[i].id,
        }
    }

    pub fn junction_count(&self) -> usize {
        self.topology.junctions.len()
    }

    pub fn tank_count(&self) -> usize {
        self.topology.tanks.len()
    }

    pub fn pump_count(&self) -> usize {
        self.pumps.len()
    }

    pub fn pipes(&self) -> &[PipeLink] {
        &self.pipes
    }

    pub fn pumps(&self) -> &[PumpLink] {
        &self.pumps
    }

    pub fn tanks(&self) -> &[Tank] {
        &self.topology.tanks
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.topology.junctions
    }

    pub fn tank_node(&self, tank: usize) -> usize {
        self.junction_count() + tank
    }

    pub fn reservoir_node(&self, reservoir: usize) -> usize {
        self.junction_count() + self.tank_count() + reservoir
    }

    pub fn link_count(&self) -> usize {
        self.pipes.len() + self.pumps.len()
    }

    /// Upper flow bound ū of every pump, in pump order.
    pub fn max_flows(&self) -> Vec<f64> {
        self.pumps.iter().map(|p| p.max_flow).collect()
    }

    /// Inlet heads p_in of every pump (the heads of their reservoirs).
    pub fn inlet_heads(&self) -> Vec<f64> {
        self.pumps
            .iter()
            .map(|p| self.topology.reservoirs[p.reservoir].head)
            .collect()
    }

    pub fn initial_levels(&self) -> Vec<f64> {
        self.topology.tanks.iter().map(|t| t.init_level).collect()
    }

    /// Junctions belonging to the controlled demand zone.
    pub fn zone_junctions(&self) -> impl Iterator<Item = usize> + '_ {
        self.topology
            .junctions
            .iter()
            .enumerate()
            .filter(|(_, j)| j.zone)
            .map(|(i, _)| i)
    }
}
