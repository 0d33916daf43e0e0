mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use periodic_empc::hydronet::{
    headloss, pump_outlet_pressures, solve_steady_state, DemandAssignment, HydraulicError, HydraulicPlant, Network,
    NodeKind,
};

use common::{read_profile, reference_network, single_pipe};

#[test]
fn single_pipe_head_matches_closed_form() {
    let net = single_pipe(10.0, 1.0);
    let demands = DemandAssignment::new(vec![2.0]).unwrap();
    let sol = solve_steady_state(&net, &[10.0], &[0.0], &demands).unwrap();
    let j = net.node_index("J").unwrap();
    assert_abs_diff_eq!(sol.node_heads[j], 10.0 - 2f64.powf(1.852), epsilon = 1e-8);
    assert_abs_diff_eq!(sol.node_heads[j], 6.389_997_09, epsilon = 1e-8);
    assert_abs_diff_eq!(sol.link_flows[0], 2.0, epsilon = 1e-9);
    assert!(sol.mass_residual <= 1e-8);
}

#[test]
fn pump_outlet_is_the_junction_head() {
    let net = single_pipe(10.0, 1.0);
    let demands = DemandAssignment::new(vec![2.0]).unwrap();
    let sol = solve_steady_state(&net, &[10.0], &[1.0], &demands).unwrap();
    let j = net.node_index("J").unwrap();
    assert_eq!(pump_outlet_pressures(&net, &sol.node_heads), vec![sol.node_heads[j]]);
    assert_abs_diff_eq!(sol.node_heads[j], 9.0, epsilon = 1e-8);
}

#[test]
fn hydrostatic_network_has_no_flow() {
    let net = reference_network();
    let mut topo = net.topology().clone();
    for r in &mut topo.reservoirs {
        r.head = 2.0;
    }
    let net = Network::new(topo).unwrap();
    let sol = solve_steady_state(&net, &[2.0, 2.0, 2.0], &[0.0, 0.0], &DemandAssignment::zeros(&net)).unwrap();
    assert!(sol.link_flows.iter().all(|q| q.abs() <= 1e-8), "{:?}", sol.link_flows);
    assert!(sol.node_heads.iter().all(|h| (h - 2.0).abs() <= 1e-12));
    assert!(pump_outlet_pressures(&net, &sol.node_heads).iter().all(|p| (p - 2.0).abs() <= 1e-10));
}

/// Independent root-finder: Newton on the junction balance equations with a
/// finite-difference Jacobian, pipe flows recovered by inverting the head-loss law.
fn nodal_oracle(net: &Network, levels: &[f64], pumps: &[f64], demands: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nj = net.junction_count();
    let fixed = |node: usize| -> f64 {
        match net.node_kind(node) {
            NodeKind::Tank(t) => net.tanks()[t].elevation + levels[t],
            NodeKind::Reservoir(r) => net.topology().reservoirs[r].head,
            NodeKind::Junction(_) => unreachable!(),
        }
    };
    let head_of = |x: &[f64], node: usize| if node < nj { x[node] } else { fixed(node) };
    let flow = |k: f64, dh: f64| dh.signum() * (dh.abs() / k).powf(1.0 / 1.852);
    let residual = |x: &[f64]| -> DVector<f64> {
        let mut r = DVector::from_iterator(nj, demands.iter().map(|d| -d));
        for p in net.pipes() {
            let q = flow(p.k, head_of(x, p.from) - head_of(x, p.to));
            if p.from < nj {
                r[p.from] -= q;
            }
            if p.to < nj {
                r[p.to] += q;
            }
        }
        for (i, p) in net.pumps().iter().enumerate() {
            if p.to < nj {
                r[p.to] += pumps[i];
            }
        }
        r
    };
    let mut x = vec![levels.iter().sum::<f64>() / levels.len() as f64 + 0.1; nj];
    for _ in 0..200 {
        let r = residual(&x);
        if r.amax() < 1e-11 {
            break;
        }
        let mut jac = DMatrix::zeros(nj, nj);
        for c in 0..nj {
            let h = 1e-7 * x[c].abs().max(1.0);
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let col = (residual(&xp) - residual(&xm)) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let dx = jac.lu().solve(&(-&r)).expect("oracle Jacobian is singular");
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + alpha * b).collect();
            if residual(&trial).norm() < r.norm() || alpha < 1e-6 {
                x = trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    let flows = net.pipes().iter().map(|p| flow(p.k, head_of(&x, p.from) - head_of(&x, p.to))).collect();
    (x, flows)
}

#[test]
fn reference_network_matches_nodal_oracle() {
    let net = reference_network();
    let demand = read_profile("demand.csv");
    let nominal = demand.iter().sum::<f64>() / demand.len() as f64;
    for (levels, pumps) in [
        (vec![2.2, 2.2, 2.1], vec![50.0, 50.0]),
        (vec![2.6, 2.55, 1.7], vec![90.0, 20.0]),
        (vec![1.8, 1.85, 2.5], vec![10.0, 75.0]),
    ] {
        let d = DemandAssignment::from_zone_total(&net, nominal).unwrap();
        let sol = solve_steady_state(&net, &levels, &pumps, &d).unwrap();
        let (heads, flows) = nodal_oracle(&net, &levels, &pumps, d.values());
        for (a, b) in sol.link_flows.iter().zip(&flows) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
        for (a, b) in sol.node_heads.iter().zip(&heads) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
        assert_eq!(&sol.link_flows[net.pipes().len()..], &pumps[..]);
    }
}

#[test]
fn converged_solve_conserves_mass_and_energy() {
    let net = reference_network();
    let d = DemandAssignment::from_zone_total(&net, 140.0).unwrap();
    let sol = solve_steady_state(&net, &[2.4, 2.38, 1.9], &[80.0, 35.0], &d).unwrap();
    let nj = net.junction_count();
    let mut balance = vec![0.0; nj];
    for (l, p) in net.pipes().iter().enumerate() {
        if p.from < nj {
            balance[p.from] -= sol.link_flows[l];
        }
        if p.to < nj {
            balance[p.to] += sol.link_flows[l];
        }
        let dh = sol.node_heads[p.from] - sol.node_heads[p.to];
        assert_abs_diff_eq!(headloss(p.k, sol.link_flows[l]).unwrap(), dh, epsilon = 1e-8);
    }
    for (i, p) in net.pumps().iter().enumerate() {
        balance[p.to] += sol.link_flows[net.pipes().len() + i];
    }
    for j in 0..nj {
        assert!((balance[j] - d.values()[j]).abs() <= 1e-8, "junction {j}: {}", balance[j] - d.values()[j]);
    }
    let pumped: f64 = 80.0 + 35.0;
    let stored: f64 = sol.tank_inflows(&net).iter().sum();
    assert_abs_diff_eq!(pumped, 140.0 + stored, epsilon = 1e-6);
}

#[test]
fn solves_are_bit_identical() {
    let net = reference_network();
    let d = DemandAssignment::from_zone_total(&net, 100.0).unwrap();
    let a = solve_steady_state(&net, &[2.2, 2.2, 2.1], &[60.0, 40.0], &d).unwrap();
    let b = solve_steady_state(&net, &[2.2, 2.2, 2.1], &[60.0, 40.0], &d).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stranded_demand_is_reported() {
    let json = r#"{
      "junctions": [{"id": "J", "demand_share": 1.0}, {"id": "K", "demand_share": 1.0}],
      "tanks": [{"id": "T", "area": 10.0, "min_level": 0.5, "max_level": 3.0, "init_level": 1.0}],
      "reservoirs": [{"id": "R", "head": 0.0}],
      "pipes": [{"from": "J", "to": "T", "K": 1.0}],
      "pumps": [{"id": "P", "from": "R", "to": "J", "max_flow": 10.0}, {"id": "Q", "from": "R", "to": "K", "max_flow": 10.0}]
    }"#;
    assert!(matches!(Network::from_json(json), Err(HydraulicError::DisconnectedDemand { .. })));
}

#[test]
fn pump_flow_outside_range_is_rejected() {
    let net = reference_network();
    let d = DemandAssignment::zeros(&net);
    assert!(solve_steady_state(&net, &[2.0, 2.0, 2.0], &[120.0, 0.0], &d).is_err());
    assert!(solve_steady_state(&net, &[2.0, 2.0, 2.0], &[-1.0, 0.0], &d).is_err());
    assert!(DemandAssignment::new(vec![-1.0]).is_err());
}

fn single_tank() -> HydraulicPlant {
    let json = r#"{
      "junctions": [{"id": "J", "demand_share": 1.0}],
      "tanks": [{"id": "T", "area": 100.0, "min_level": 0.5, "max_level": 3.0, "init_level": 1.0, "height": 4.0}],
      "reservoirs": [{"id": "R", "head": 0.0}],
      "pipes": [{"from": "J", "to": "T", "K": 1e-3}],
      "pumps": [{"id": "P", "from": "R", "to": "J", "max_flow": 100.0}]
    }"#;
    HydraulicPlant::new(Network::from_json(json).unwrap())
}

#[test]
fn tank_integrates_net_inflow() {
    let plant = single_tank();
    let state = plant.initial_state(&[1.0]).unwrap();
    let zero = DemandAssignment::zeros(plant.network());
    let out = plant.step(&state, &[50.0], &zero, 1.0).unwrap();
    assert_abs_diff_eq!(out.state.tank_levels[0], 1.5, epsilon = 1e-9);
    assert_abs_diff_eq!(out.state.sim_time, 1.0, epsilon = 1e-12);

    let balanced = DemandAssignment::new(vec![30.0]).unwrap();
    let out = plant.step(&state, &[30.0], &balanced, 1.0).unwrap();
    assert_abs_diff_eq!(out.state.tank_levels[0], 1.0, epsilon = 1e-9);
}

#[test]
fn draining_tank_is_clamped_and_flagged() {
    let plant = single_tank();
    let state = plant.initial_state(&[0.2]).unwrap();
    let d = DemandAssignment::new(vec![40.0]).unwrap();
    let out = plant.step(&state, &[0.0], &d, 1.0).unwrap();
    assert_eq!(out.state.tank_levels[0], 0.0);
    assert_eq!(out.depleted, vec![0]);
}

#[test]
fn one_hour_step_agrees_with_minute_steps() {
    let net = reference_network();
    let plant = HydraulicPlant::new(net.clone());
    let d = DemandAssignment::from_zone_total(&net, 150.0).unwrap();
    for (levels, pumps) in [(vec![2.2, 2.2, 2.1], vec![90.0, 20.0]), (vec![2.5, 2.45, 1.8], vec![0.0, 100.0])] {
        let start = plant.initial_state(&levels).unwrap();
        let coarse = plant.step(&start, &pumps, &d, 1.0).unwrap().state;
        let mut fine = start.clone();
        for _ in 0..60 {
            fine = plant.step(&fine, &pumps, &d, 1.0 / 60.0).unwrap().state;
        }
        for (a, b) in coarse.tank_levels.iter().zip(&fine.tank_levels) {
            assert!((a - b).abs() <= 1e-3, "coarse {a} vs fine {b}");
        }
        assert_abs_diff_eq!(coarse.sim_time, fine.sim_time, epsilon = 1e-9);
    }
}

#[test]
fn step_conserves_stored_volume() {
    let net = reference_network();
    let plant = HydraulicPlant::new(net.clone());
    let d = DemandAssignment::from_zone_total(&net, 120.0).unwrap();
    let start = plant.initial_state(&[2.2, 2.2, 2.1]).unwrap();
    let out = plant.step(&start, &[70.0, 60.0], &d, 1.0).unwrap();
    let volume = |l: &[f64]| net.tanks().iter().zip(l).map(|(t, h)| t.area * h).sum::<f64>();
    let change = volume(&out.state.tank_levels) - volume(&start.tank_levels);
    assert_abs_diff_eq!(change, 130.0 - 120.0, epsilon = 1e-6);
}
