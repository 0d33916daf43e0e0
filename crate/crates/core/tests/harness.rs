mod common;

use std::sync::OnceLock;

use periodic_empc::harness::{
    demand_follower, follower_inputs, prepare, run_closed_loop, run_follower, run_proposed, run_with_hook, synth_days,
    HarnessError, LinearPlant, NetworkPlant, Plant, PreparedScenario, Profile, ScenarioConfig,
};
use periodic_empc::hydronet::HydraulicPlant;

use common::reference_dir;

fn scenario() -> ScenarioConfig {
    ScenarioConfig::load(&reference_dir().join("scenario.json")).unwrap()
}

fn prepared() -> &'static PreparedScenario {
    static PREP: OnceLock<PreparedScenario> = OnceLock::new();
    PREP.get_or_init(|| prepare(&scenario()).unwrap())
}

fn linear_plant(prep: &PreparedScenario) -> LinearPlant {
    LinearPlant::new(prep.models.clone(), prep.aggregation.clone(), &prep.initial_levels()).unwrap()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn scenario_invariants_are_checked() {
    let mut bad = scenario();
    bad.perturbation = 0.7;
    assert!(matches!(prepare(&bad), Err(HarnessError::Scenario(_))));

    let mut short = scenario();
    short.price = Profile::Values(vec![0.5; 23]);
    assert!(matches!(prepare(&short), Err(HarnessError::Scenario(_))));

    let mut levels = scenario();
    levels.initial_levels = Some(vec![3.5, 2.0, 2.0]);
    assert!(matches!(prepare(&levels), Err(HarnessError::Scenario(_))));

    let mut missing = scenario();
    missing.topology = "nowhere.json".into();
    let msg = prepare(&missing).unwrap_err().to_string();
    assert!(msg.contains("nowhere.json"), "{msg}");
}

#[test]
fn malformed_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, "{\n  \"topology\": \"t.json\",\n  \"price\": [1, 2,\n}\n").unwrap();
    match ScenarioConfig::load(&path) {
        Err(HarnessError::Format { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
    std::fs::write(&path, "{\"topology\": \"t.json\", \"price\": [1], \"demand\": [1], \"colour\": 1}").unwrap();
    assert!(matches!(ScenarioConfig::load(&path), Err(HarnessError::Format { .. })));
}

#[test]
fn nominal_linear_day_needs_no_fallback() {
    let prep = prepared();
    let days = synth_days(&prep.demand, 0, 0.0, 1);
    let mut plant = linear_plant(prep);
    let log = run_closed_loop(prep, &mut plant, &days, "nominal").unwrap();
    assert_eq!(log.records.len(), 24);
    assert_eq!(log.fallbacks, 0);
    assert_eq!(log.violations, 0);
    assert!(log.records.iter().all(|r| r.feasible));
    assert!(distance(plant.state(), prep.trajectory.terminal()) <= prep.config.terminal_radius * (1.0 + 1e-5));
}

#[test]
fn five_linear_days_end_in_the_ball() {
    let prep = prepared();
    let days = synth_days(&prep.demand, 0, 0.0, 5);
    let mut plant = linear_plant(prep);
    let log = run_closed_loop(prep, &mut plant, &days, "five days").unwrap();
    assert_eq!(log.records.len(), 5 * 24);
    let r = prep.config.terminal_radius * (1.0 + 1e-5);
    for day in 1..5 {
        let last = &log.records[day * 24 - 1];
        let midnight = &log.records[day * 24];
        if last.feasible {
            assert!(distance(&midnight.state, prep.trajectory.terminal()) <= r, "day {day}");
        }
    }
    if log.records[119].feasible {
        assert!(distance(plant.state(), prep.trajectory.terminal()) <= r);
    }
}

#[test]
fn hydraulic_day_respects_bounds_and_conserves_water() {
    let prep = prepared();
    let log = run_proposed(prep).unwrap();
    assert_eq!(log.violations, 0);
    assert!(log.price_flow_correlation().unwrap() < 0.0);

    let areas: Vec<f64> = prep.network.tanks().iter().map(|t| t.area).collect();
    let volume = |levels: &[f64]| levels.iter().zip(&areas).map(|(h, a)| h * a).sum::<f64>();
    let stored = volume(&log.final_levels) - volume(&log.records[0].levels);
    let pumped: f64 = log.total_flows().iter().sum::<f64>() * prep.config.dt;
    let consumed: f64 = log.records.iter().map(|r| r.d_real).sum::<f64>() * prep.config.dt;
    assert!((stored - (pumped - consumed)).abs() <= 0.01 * pumped, "{stored} vs {}", pumped - consumed);
    assert_eq!(log.total_cost, log.records.iter().map(|r| r.cost).sum::<f64>());
}

#[test]
fn runs_are_reproducible_and_fair() {
    let prep = prepared();
    let a = run_proposed(prep).unwrap();
    let b = run_proposed(prep).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let f = run_follower(prep).unwrap();
    assert_eq!(f.records.len(), a.records.len());
    for (x, y) in a.records.iter().zip(&f.records) {
        assert_eq!((x.d_real, x.price), (y.d_real, y.price));
    }
    assert!(a.total_cost < f.total_cost);
}

#[test]
fn csv_has_expected_columns() {
    let prep = prepared();
    let days = synth_days(&prep.demand, 0, 0.0, 1);
    let mut plant = linear_plant(prep);
    let csv = run_closed_loop(prep, &mut plant, &days, "csv").unwrap().to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,h1,h2,h3,u1,u2,u_total,price,d_real,d_forecast,cost_cum,feasible,fallback"
    );
    assert_eq!(lines.count(), 24);
}

#[test]
fn follower_split_and_offset() {
    assert_eq!(follower_inputs(120.0, &[100.0, 100.0], 0.0), vec![60.0, 60.0]);
    assert_eq!(follower_inputs(0.0, &[100.0, 100.0], 0.0), vec![0.0, 0.0]);
    assert_eq!(follower_inputs(90.0, &[100.0, 50.0], 0.0), vec![60.0, 30.0]);
    assert_eq!(follower_inputs(190.0, &[100.0, 100.0], 10.0), vec![100.0, 100.0]);
    assert_eq!(follower_inputs(10.0, &[100.0, 100.0], -20.0), vec![0.0, 0.0]);
}

#[test]
fn idle_network_keeps_its_volume() {
    let prep = prepared();
    let mut plant = NetworkPlant::new(HydraulicPlant::new(prep.network.clone()), &[2.6, 2.5, 1.9]).unwrap();
    let areas: Vec<f64> = prep.network.tanks().iter().map(|t| t.area).collect();
    let volume = |l: &[f64]| l.iter().zip(&areas).map(|(h, a)| h * a).sum::<f64>();
    let before = volume(&plant.tank_levels());
    plant.advance(&[0.0, 0.0], 0.0, 1.0).unwrap();
    assert!((volume(&plant.tank_levels()) - before).abs() <= 1e-6 * before);
}

#[test]
fn follower_lands_in_terminal_ball() {
    let prep = prepared();
    let days = synth_days(&prep.demand, 0, 0.0, 2);
    let mut plant = NetworkPlant::new(HydraulicPlant::new(prep.network.clone()), &prep.initial_levels()).unwrap();
    let log = demand_follower(prep, &mut plant, &days, "follower").unwrap();
    let end = prep.aggregation.to_state(&plant.tank_levels()).unwrap();
    assert!(distance(&end, prep.trajectory.terminal()) <= prep.config.terminal_radius);
    assert!(log.price_flow_correlation().unwrap() > 0.0);
}

#[test]
fn fault_injection_applies_cached_second_term() {
    let prep = prepared();
    let days = synth_days(&prep.demand, 0, 0.0, 1);
    let mut plant = linear_plant(prep);
    let mut expected = None;
    let log = run_with_hook(prep, &mut plant, &days, "fault", &mut |ctrl, t| {
        if t == 11.0 {
            expected = Some(ctrl.previous().unwrap().u_seq[1].clone());
            ctrl.set_terminal_radius(1e-9)?;
        }
        Ok(())
    })
    .unwrap();
    let rec = &log.records[11];
    assert!(rec.fallback && !rec.feasible);
    assert_eq!(Some(rec.u.clone()), expected);
    assert_ne!(rec.u, prep.trajectory.u_star[11]);
    assert!(log.records[..11].iter().all(|r| !r.fallback));
}

#[derive(Clone)]
struct Failing {
    inner: LinearPlant,
    left: usize,
}

impl Plant for Failing {
    fn tank_levels(&self) -> Vec<f64> {
        self.inner.tank_levels()
    }

    fn advance(&mut self, u: &[f64], d: f64, dt: f64) -> Result<Vec<f64>, HarnessError> {
        if self.left == 0 {
            return Err(HarnessError::Scenario("solver stalled".into()));
        }
        self.left -= 1;
        self.inner.advance(u, d, dt)
    }
}

#[test]
fn plant_failure_keeps_partial_log() {
    let prep = prepared();
    let days = synth_days(&prep.demand, 0, 0.0, 1);
    let mut plant = Failing { inner: linear_plant(prep), left: 3 };
    match run_closed_loop(prep, &mut plant, &days, "failing") {
        Err(HarnessError::Aborted { t, partial, .. }) => {
            assert_eq!(t, 3.0);
            assert_eq!(partial.records.len(), 3);
        }
        other => panic!("unexpected {other:?}"),
    }
}
