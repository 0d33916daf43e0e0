use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hydronet::Network;

use super::TankAggregation;

/// Settings for the identification experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationDesign {
    pub seed: u64,
    pub episodes: usize,
    pub episode_length: usize,
    /// Number of distinct flow levels in each staircase, spread over [0, ū].
    pub flow_levels: usize,
    /// Longest hold of one staircase level, in steps.
    pub max_hold: usize,
    pub demand_scale: (f64, f64),
    /// Distance kept from the operating bounds when drawing initial levels (m).
    pub level_margin: f64,
}

impl ExcitationDesign {
    pub fn new(seed: u64, episodes: usize, episode_length: usize) -> Self {
        Self {
            seed,
            episodes,
            episode_length,
            flow_levels: 6,
            max_hold: 3,
            demand_scale: (0.7, 1.3),
            level_margin: 0.1,
        }
    }
}

/// One identification experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Physical tank levels at the start (equal inside aggregated groups).
    pub initial_levels: Vec<f64>,
    /// Pump flows per step, `pump_flows[k][i]`.
    pub pump_flows: Vec<Vec<f64>>,
    /// Multiplier applied to the nominal demand profile.
    pub demand_scale: f64,
}

/// Multi-level pseudo-random staircases with stratified initial levels.
///
/// Initial group levels are Latin-hypercube samples over
/// `[min + margin, max − margin]`, so any set of episodes covers the band
/// evenly. Deterministic for a given seed.
pub fn generate_excitation(net: &Network, aggregation: &TankAggregation, design: &ExcitationDesign) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let n_groups = aggregation.state_dim();
    let episodes = design.episodes;

    let strata: Vec<Vec<usize>> = (0..n_groups)
        .map(|_| {
            let mut order: Vec<usize> = (0..episodes).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();

    let max_flows = net.max_flows();
    let levels = design.flow_levels.max(2);
    (0..episodes)
        .map(|e| {
            let state: Vec<f64> = (0..n_groups)
                .map(|g| {
                    let lo = aggregation.lower_bounds()[g] + design.level_margin;
                    let hi = aggregation.upper_bounds()[g] - design.level_margin;
                    let frac = (strata[g][e] as f64 + rng.gen::<f64>()) / episodes as f64;
                    lo + frac * (hi - lo)
                })
                .collect();
            let initial_levels = aggregation.to_physical(&state);

            let mut pump_flows = vec![vec![0.0; max_flows.len()]; design.episode_length];
            for (i, &umax) in max_flows.iter().enumerate() {
                let mut k = 0;
                while k < design.episode_length {
                    let level = rng.gen_range(0..levels) as f64 / (levels - 1) as f64;
                    let hold = rng.gen_range(1..=design.max_hold.max(1));
                    for row in pump_flows.iter_mut().skip(k).take(hold) {
                        row[i] = (level * umax).clamp(0.0, umax);
                    }
                    k += hold;
                }
            }
            let (lo, hi) = design.demand_scale;
            let demand_scale = lo + rng.gen::<f64>() * (hi - lo);
            Episode { initial_levels, pump_flows, demand_scale }
        })
        .collect()
}
