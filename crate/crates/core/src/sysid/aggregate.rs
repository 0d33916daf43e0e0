use crate::hydronet::Network;

use super::IdentError;

/// Largest level spread tolerated inside one aggregated tank group (m).
pub const MAX_GROUP_SPREAD: f64 = 0.1;

/// Map between physical tank levels and the reduced model state.
///
/// Tanks joined by inter-tank pipes form one group. A group's state is the
/// area-weighted mean level of its members and its area is their sum; lone
/// tanks map to themselves. Groups are ordered by their lowest tank index.
#[derive(Debug, Clone, PartialEq)]
pub struct TankAggregation {
    groups: Vec<Vec<usize>>,
    areas: Vec<f64>,
    tank_areas: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TankAggregation {
    pub fn from_network(net: &Network) -> Self {
        let n_tanks = net.tank_count();
        let mut parent: Vec<usize> = (0..n_tanks).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let first_tank = net.junction_count();
        for p in net.pipes().iter().filter(|p| p.inter_tank) {
            let (a, b) = (p.from - first_tank, p.to - first_tank);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_of_group = Vec::new();
        for t in 0..n_tanks {
            let r = find(&mut parent, t);
            match root_of_group.iter().position(|&x| x == r) {
                Some(g) => groups[g].push(t),
                None => {
                    root_of_group.push(r);
                    groups.push(vec![t]);
                }
            }
        }
        let tanks = net.tanks();
        let tank_areas: Vec<f64> = tanks.iter().map(|t| t.area).collect();
        let areas = groups.iter().map(|g| g.iter().map(|&t| tank_areas[t]).sum()).collect();
        let lower = groups
            .iter()
            .map(|g| g.iter().map(|&t| tanks[t].min_level).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let upper = groups
            .iter()
            .map(|g| g.iter().map(|&t| tanks[t].max_level).fold(f64::INFINITY, f64::min))
            .collect();
        Self { groups, areas, tank_areas, lower, upper }
    }

    /// Model state dimension n.
    pub fn state_dim(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Summed cross-section of each group (m²).
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Tightest operational lower bound across each group's members.
    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    /// Physical levels to model state; rejects groups spread wider than [`MAX_GROUP_SPREAD`].
    pub fn to_state(&self, levels: &[f64]) -> Result<Vec<f64>, IdentError> {
        if levels.len() != self.tank_areas.len() {
            return Err(IdentError::Dimension(format!(
                "expected {} tank levels, got {}",
                self.tank_areas.len(),
                levels.len()
            )));
        }
        self.groups
            .iter()
            .zip(&self.areas)
            .map(|(g, area)| {
                let (lo, hi) = g
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(levels[t]), hi.max(levels[t])));
                if hi - lo > MAX_GROUP_SPREAD {
                    return Err(IdentError::Aggregation(format!(
                        "tank group {g:?} levels differ by {:.4} m",
                        hi - lo
                    )));
                }
                Ok(g.iter().map(|&t| self.tank_areas[t] * levels[t]).sum::<f64>() / area)
            })
            .collect()
    }

    /// Model state to physical levels: every member takes its group level.
    pub fn to_physical(&self, state: &[f64]) -> Vec<f64> {
        let mut levels = vec![0.0; self.tank_areas.len()];
        for (g, &s) in self.groups.iter().zip(state) {
            for &t in g {
                levels[t] = s;
            }
        }
        levels
    }

    /// Stored volume (m³) for a model state.
    pub fn volume(&self, state: &[f64]) -> f64 {
        self.areas.iter().zip(state).map(|(a, h)| a * h).sum()
    }
}
