use std::fmt::Write as _;

use crate::hydronet::{pump_outlet_pressures, DemandAssignment, HydraulicError, HydraulicPlant};

use super::{Episode, IdentError, TankAggregation};

/// One sampled transition of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub d_a: f64,
    pub h_next: Vec<f64>,
    pub p_out: Vec<f64>,
    /// Index of the episode the record came from.
    pub episode: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub records: Vec<Record>,
}

/// What was dropped while collecting a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectionReport {
    pub episodes: usize,
    pub dropped_episodes: usize,
    /// Records skipped because a tank clamped or a group spread too far.
    pub skipped_records: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), IdentError> {
        let need = 10 * (self.n + self.m + 1);
        if self.records.len() < need {
            return Err(IdentError::InsufficientData { records: self.records.len(), required: need });
        }
        for r in &self.records {
            if r.h.len() != self.n || r.h_next.len() != self.n || r.u.len() != self.m || r.p_out.len() != self.m {
                return Err(IdentError::Dimension("record does not match dataset dimensions".into()));
            }
            let values = r.h.iter().chain(&r.u).chain(&r.h_next).chain(&r.p_out).chain(std::iter::once(&r.d_a));
            if values.clone().any(|x| !x.is_finite()) {
                return Err(IdentError::Dimension("record contains non-finite values".into()));
            }
        }
        Ok(())
    }

    /// Splits off the trailing `fraction` of episodes as a validation set.
    ///
    /// Falls back to a record-level split when all records share one episode.
    pub fn split_holdout(&self, fraction: f64) -> (Dataset, Dataset) {
        let mut episodes: Vec<usize> = self.records.iter().map(|r| r.episode).collect();
        episodes.dedup();
        let (train, test): (Vec<Record>, Vec<Record>) = if episodes.len() > 1 {
            let keep = episodes.len() - ((episodes.len() as f64 * fraction).round() as usize).max(1);
            let cutoff = episodes[keep];
            let pos = self.records.iter().position(|r| r.episode == cutoff).unwrap_or(self.records.len());
            (self.records[..pos].to_vec(), self.records[pos..].to_vec())
        } else {
            let pos = self.records.len() - (self.records.len() as f64 * fraction).round() as usize;
            (self.records[..pos].to_vec(), self.records[pos..].to_vec())
        };
        let make = |records| Dataset { n: self.n, m: self.m, dt: self.dt, records };
        (make(train), make(test))
    }

    pub fn csv_header(&self) -> String {
        let mut cols = Vec::new();
        cols.extend((1..=self.n).map(|i| format!("h_{i}")));
        cols.extend((1..=self.m).map(|i| format!("u_{i}")));
        cols.push("d_a".into());
        cols.extend((1..=self.n).map(|i| format!("hnext_{i}")));
        cols.extend((1..=self.m).map(|i| format!("pout_{i}")));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.records {
            let row: Vec<String> = r
                .h
                .iter()
                .chain(&r.u)
                .chain(std::iter::once(&r.d_a))
                .chain(&r.h_next)
                .chain(&r.p_out)
                .map(|x| format!("{x:e}"))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Reads a dataset written by [`Dataset::to_csv`]; all records land in episode 0.
    pub fn from_csv(text: &str, n: usize, m: usize, dt: f64) -> Result<Self, IdentError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let template = Dataset { n, m, dt, records: Vec::new() };
        match lines.next() {
            Some((_, header)) if header.trim() == template.csv_header() => {}
            Some((_, header)) => {
                return Err(IdentError::Parse(format!("line 1: unexpected header `{header}`")));
            }
            None => return Err(IdentError::Parse("empty dataset".into())),
        }
        let width = 2 * n + 2 * m + 1;
        let mut records = Vec::new();
        for (lineno, line) in lines {
            let values: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| IdentError::Parse(format!("line {}: {e}", lineno + 1)))?;
            if values.len() != width {
                return Err(IdentError::Parse(format!(
                    "line {}: expected {width} columns, got {}",
                    lineno + 1,
                    values.len()
                )));
            }
            records.push(Record {
                h: values[..n].to_vec(),
                u: values[n..n + m].to_vec(),
                d_a: values[n + m],
                h_next: values[n + m + 1..2 * n + m + 1].to_vec(),
                p_out: values[2 * n + m + 1..].to_vec(),
                episode: 0,
            });
        }
        Ok(Dataset { records, ..template })
    }
}

/// Runs every episode through the plant and records one transition per step.
///
/// `demand_profile` holds the nominal aggregated demand per step and is
/// repeated cyclically; each episode scales it by its demand factor.
/// Episodes hitting a hydraulic non-convergence are dropped whole.
pub fn collect_dataset(
    plant: &HydraulicPlant,
    aggregation: &TankAggregation,
    episodes: &[Episode],
    demand_profile: &[f64],
    dt: f64,
) -> Result<(Dataset, CollectionReport), IdentError> {
    if demand_profile.is_empty() {
        return Err(IdentError::Dimension("demand profile is empty".into()));
    }
    let net = plant.network();
    let mut report = CollectionReport { episodes: episodes.len(), ..Default::default() };
    let mut records = Vec::new();

    for (e, episode) in episodes.iter().enumerate() {
        match run_episode(plant, aggregation, episode, e, demand_profile, dt) {
            Ok((mut recs, skipped)) => {
                records.append(&mut recs);
                report.skipped_records += skipped;
            }
            Err(IdentError::Hydraulic(HydraulicError::NonConvergence { .. })) => report.dropped_episodes += 1,
            Err(other) => return Err(other),
        }
    }

    if report.dropped_episodes * 10 > episodes.len() {
        return Err(IdentError::TooManyDropped { dropped: report.dropped_episodes, total: episodes.len() });
    }
    let dataset = Dataset { n: aggregation.state_dim(), m: net.pump_count(), dt, records };
    Ok((dataset, report))
}

fn run_episode(
    plant: &HydraulicPlant,
    aggregation: &TankAggregation,
    episode: &Episode,
    index: usize,
    demand_profile: &[f64],
    dt: f64,
) -> Result<(Vec<Record>, usize), IdentError> {
    let net = plant.network();
    let mut state = plant.initial_state(&episode.initial_levels)?;
    let mut records = Vec::with_capacity(episode.pump_flows.len());
    let mut skipped = 0;
    for (k, u) in episode.pump_flows.iter().enumerate() {
        let total = episode.demand_scale * demand_profile[k % demand_profile.len()];
        let demands = DemandAssignment::from_zone_total(net, total)?;
        let quasi = plant.solve_at(&state.tank_levels, u, &demands, Some(&state.link_flows))?;
        let p_out = pump_outlet_pressures(net, &quasi.node_heads);
        let outcome = plant.step(&state, u, &demands, dt)?;
        let clamped = !outcome.depleted.is_empty() || !outcome.overflowed.is_empty();
        match (aggregation.to_state(&state.tank_levels), aggregation.to_state(&outcome.state.tank_levels)) {
            (Ok(h), Ok(h_next)) if !clamped => records.push(Record {
                h,
                u: u.clone(),
                d_a: demands.zone_total(net),
                h_next,
                p_out,
                episode: index,
            }),
            _ => skipped += 1,
        }
        state = outcome.state;
    }
    Ok((records, skipped))
}
