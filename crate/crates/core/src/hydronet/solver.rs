use nalgebra::{DMatrix, DVector};

use super::{headloss_slope, headloss_unchecked, DemandAssignment, HydraulicError, Network, NodeKind, DEFAULT_Q_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Bound on both the nodal mass residual (m³/h) and the pipe energy residual (m).
    pub tolerance: f64,
    pub q_eps: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, q_eps: DEFAULT_Q_EPS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydraulicSolution {
    /// Head at every node (junctions, tanks, reservoirs).
    pub node_heads: Vec<f64>,
    /// Flow on every link (pipes, then pumps), positive from `from` to `to`.
    pub link_flows: Vec<f64>,
    pub iterations: usize,
    pub mass_residual: f64,
    pub energy_residual: f64,
}

impl HydraulicSolution {
    /// Net inflow into each tank (m³/h).
    pub fn tank_inflows(&self, net: &Network) -> Vec<f64> {
        let mut inflow = vec![0.0; net.tank_count()];
        let np = net.pipes().len();
        for (i, p) in net.pipes().iter().enumerate() {
            let q = self.link_flows[i];
            if let NodeKind::Tank(t) = net.node_kind(p.to) {
                inflow[t] += q;
            }
            if let NodeKind::Tank(t) = net.node_kind(p.from) {
                inflow[t] -= q;
            }
        }
        for (i, p) in net.pumps().iter().enumerate() {
            if let NodeKind::Tank(t) = net.node_kind(p.to) {
                inflow[t] += self.link_flows[np + i];
            }
        }
        inflow
    }
}

/// How tank nodes enter a hydraulic solve.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TankBoundary<'a> {
    /// Tanks hold the given levels.
    Fixed(&'a [f64]),
    /// Backward-Euler storage: A·(h − h_old)/dt equals the net inflow.
    Storage { old_levels: &'a [f64], dt: f64 },
}

/// Quasi-static hydraulic solve with tanks held at `tank_levels`.
pub fn solve_steady_state(
    net: &Network,
    tank_levels: &[f64],
    pump_flows: &[f64],
    demands: &DemandAssignment,
) -> Result<HydraulicSolution, HydraulicError> {
    solve(net, TankBoundary::Fixed(tank_levels), pump_flows, demands, None, &SolverOptions::default())
}

fn check_inputs(
    net: &Network,
    boundary: &TankBoundary<'_>,
    pump_flows: &[f64],
    demands: &DemandAssignment,
) -> Result<(), HydraulicError> {
    let levels = match boundary {
        TankBoundary::Fixed(l) => l,
        TankBoundary::Storage { old_levels, dt } => {
            if !(*dt > 0.0 && dt.is_finite()) {
                return Err(HydraulicError::InvalidInput(format!("time step {dt} must be positive")));
            }
            old_levels
        }
    };
    if levels.len() != net.tank_count() || levels.iter().any(|l| !l.is_finite()) {
        return Err(HydraulicError::InvalidInput("tank levels must be finite, one per tank".into()));
    }
    if pump_flows.len() != net.pump_count() {
        return Err(HydraulicError::InvalidInput(format!(
            "expected {} pump flows, got {}",
            net.pump_count(),
            pump_flows.len()
        )));
    }
    for (q, p) in pump_flows.iter().zip(net.pumps()) {
        if !(q.is_finite() && *q >= 0.0 && *q <= p.max_flow) {
            return Err(HydraulicError::InvalidInput(format!("pump flow {q} outside [0, {}]", p.max_flow)));
        }
    }
    if demands.values().len() != net.junction_count() {
        return Err(HydraulicError::InvalidInput("one demand per junction required".into()));
    }
    Ok(())
}

/// Newton iteration in the global-gradient form: each iterate solves a
/// head-only linear system, then recovers pipe flows from the linearised
/// head-loss law. The mass balance is linear, so it holds to rounding after
/// the first iterate.
pub(crate) fn solve(
    net: &Network,
    boundary: TankBoundary<'_>,
    pump_flows: &[f64],
    demands: &DemandAssignment,
    initial_flows: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<HydraulicSolution, HydraulicError> {
    check_inputs(net, &boundary, pump_flows, demands)?;

    let n_nodes = net.node_count();
    let pipes = net.pipes();
    let np = pipes.len();

    // Unknown numbering and fixed heads.
    let mut unknown = vec![usize::MAX; n_nodes];
    let mut fixed_head = vec![0.0; n_nodes];
    let mut storage = Vec::new(); // (unknown index, node, A/dt, old head)
    let mut nu = 0;
    for v in 0..n_nodes {
        match net.node_kind(v) {
            NodeKind::Junction(_) => {
                unknown[v] = nu;
                nu += 1;
            }
            NodeKind::Tank(t) => {
                let tank = &net.tanks()[t];
                match boundary {
                    TankBoundary::Fixed(levels) => fixed_head[v] = tank.elevation + levels[t],
                    TankBoundary::Storage { old_levels, dt } => {
                        unknown[v] = nu;
                        storage.push((nu, v, tank.area / dt, tank.elevation + old_levels[t]));
                        nu += 1;
                    }
                }
            }
            NodeKind::Reservoir(r) => fixed_head[v] = net.topology().reservoirs[r].head,
        }
    }

    // External injection per unknown: pumps in, demands out.
    let mut injection = vec![0.0; nu];
    for (p, q) in net.pumps().iter().zip(pump_flows) {
        if unknown[p.to] != usize::MAX {
            injection[unknown[p.to]] += q;
        }
    }
    for (j, d) in demands.values().iter().enumerate() {
        injection[unknown[j]] -= d;
    }

    let mut flows: Vec<f64> = match initial_flows {
        Some(q) if q.len() >= np && q[..np].iter().all(|x| x.is_finite()) => q[..np].to_vec(),
        _ => vec![0.0; np],
    };
    let mut heads = fixed_head.clone();
    for &(_, v, _, old) in &storage {
        heads[v] = old;
    }

    let residuals = |heads: &[f64], flows: &[f64]| -> (f64, f64) {
        let mut balance = injection.clone();
        let mut energy: f64 = 0.0;
        for (i, p) in pipes.iter().enumerate() {
            let q = flows[i];
            if unknown[p.to] != usize::MAX {
                balance[unknown[p.to]] += q;
            }
            if unknown[p.from] != usize::MAX {
                balance[unknown[p.from]] -= q;
            }
            energy = energy.max((headloss_unchecked(p.k, q) - (heads[p.from] - heads[p.to])).abs());
        }
        for &(u, v, c, old) in &storage {
            balance[u] -= c * (heads[v] - old);
        }
        let mass = balance.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        (mass, energy)
    };

    let mut prev_residual = f64::INFINITY;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for iteration in 1..=opts.max_iterations {
        let mut mat = DMatrix::<f64>::zeros(nu, nu);
        let mut rhs = DVector::<f64>::from_vec(injection.clone());
        let mut offsets = Vec::with_capacity(np);
        let mut conductances = Vec::with_capacity(np);
        for (i, p) in pipes.iter().enumerate() {
            let q = flows[i];
            let slope = headloss_slope(p.k, q, opts.q_eps);
            let g = 1.0 / slope;
            let y = q - headloss_unchecked(p.k, q) / slope;
            offsets.push(y);
            conductances.push(g);
            let (a, b) = (unknown[p.from], unknown[p.to]);
            // Row j: (Σg + c)·H_j − Σ g·H_k = Σ_in y − Σ_out y + injection + c·h_old.
            if b != usize::MAX {
                mat[(b, b)] += g;
                rhs[b] += y;
                if a != usize::MAX {
                    mat[(b, a)] -= g;
                } else {
                    rhs[b] += g * fixed_head[p.from];
                }
            }
            if a != usize::MAX {
                mat[(a, a)] += g;
                rhs[a] -= y;
                if b != usize::MAX {
                    mat[(a, b)] -= g;
                } else {
                    rhs[a] += g * fixed_head[p.to];
                }
            }
        }
        for &(u, _, c, old) in &storage {
            mat[(u, u)] += c;
            rhs[u] += c * old;
        }

        let fail = HydraulicError::NonConvergence { iterations: iteration, residual: f64::INFINITY };
        let solve_linear = |b: &DVector<f64>| -> Option<DVector<f64>> {
            match mat.clone().cholesky() {
                Some(ch) => Some(ch.solve(b)),
                None => mat.clone().lu().solve(b),
            }
        };
        let mut solution = solve_linear(&rhs).ok_or(fail.clone())?;
        // Near-stagnant pipes carry conductances near 1/q_eps; refine so head
        // rounding does not show up as a mass imbalance.
        for _ in 0..2 {
            let correction = solve_linear(&(&rhs - &mat * &solution)).ok_or(fail.clone())?;
            solution += correction;
        }

        let mut full_heads = fixed_head.clone();
        for v in 0..n_nodes {
            if unknown[v] != usize::MAX {
                full_heads[v] = solution[unknown[v]];
            }
        }
        let full_flows: Vec<f64> = pipes
            .iter()
            .enumerate()
            .map(|(i, p)| offsets[i] + conductances[i] * (full_heads[p.from] - full_heads[p.to]))
            .collect();

        // Damped acceptance: halve the step while the residual grows.
        let mut alpha = 1.0;
        let (mut trial_heads, mut trial_flows);
        loop {
            trial_heads = heads
                .iter()
                .zip(&full_heads)
                .map(|(h, f)| h + alpha * (f - h))
                .collect::<Vec<_>>();
            trial_flows = flows
                .iter()
                .zip(&full_flows)
                .map(|(q, f)| q + alpha * (f - q))
                .collect::<Vec<_>>();
            last = residuals(&trial_heads, &trial_flows);
            let r = last.0.max(last.1);
            if r <= prev_residual || alpha < 1e-3 {
                prev_residual = r;
                break;
            }
            alpha *= 0.5;
        }
        let flow_step = flows
            .iter()
            .zip(&trial_flows)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / (1.0 + b.abs())));
        heads = trial_heads;
        flows = trial_flows;

        // Low-resistance pipes pass flow errors that the head residual cannot see.
        if last.0 <= opts.tolerance && last.1 <= opts.tolerance && flow_step <= opts.tolerance {
            let mut link_flows = flows;
            link_flows.extend_from_slice(pump_flows);
            return Ok(HydraulicSolution {
                node_heads: heads,
                link_flows,
                iterations: iteration,
                mass_residual: last.0,
                energy_residual: last.1,
            });
        }
    }
    Err(HydraulicError::NonConvergence { iterations: opts.max_iterations, residual: last.0.max(last.1) })
}
