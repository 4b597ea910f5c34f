mod common;

use std::sync::OnceLock;

use pitlane_core::model::{build_stint_grid, StintSpec, TrackData};
use pitlane_core::stint::{solve_stint_on_grid, default_solve_options, Limits, StintSolution};
use pitlane_core::validate::{
    battery_limited_scenario, flat_out_run, read_trajectory_csv, simulate_nonlinear,
    simulate_stint, SimInit, SimInputs,
};

fn five_laps() -> &'static (StintSolution, TrackData) {
    static CELL: OnceLock<(StintSolution, TrackData)> = OnceLock::new();
    CELL.get_or_init(|| {
        let c = common::setup();
        let spec = StintSpec::regular(5, c.tables.t_charge_max, &c.model.params, &c.tables).unwrap();
        let grid = build_stint_grid(&c.track, 5).unwrap();
        let sol = solve_stint_on_grid(&spec, &grid, &c.model, Limits::default(), &default_solve_options())
            .unwrap();
        assert!(sol.is_valid());
        (sol, grid)
    })
}

#[test]
fn coastdown_matches_closed_form() {
    let c = common::setup();
    let err = common::oracles::coastdown_error(&c.model);
    assert!(err <= 1e-4, "{err:e}");
    // the run must actually decelerate, and its time uses the speed trace
    let grid = common::straight_track(1200.0, 4.0);
    let n = grid.len();
    let inputs = SimInputs {
        f_m: vec![0.0; n],
        f_brake_f: vec![0.0; n],
    };
    let v0 = 60.0;
    let init = SimInit {
        e_kin: 0.5 * c.model.params.chassis.m_kg * v0 * v0,
        e_b: c.model.params.battery.e_b_0_j,
        theta_b: 300.0,
        theta_m: 320.0,
    };
    let sim = simulate_nonlinear(&inputs, &grid, &c.model, init).unwrap();
    assert!(sim.v[n - 1] < 0.8 * v0);
    let leth: Vec<f64> = sim.v.iter().map(|v| 1.0 / v).collect();
    let t = pitlane_core::interp::trapezoid(&grid.steps(), &leth);
    assert!((t - sim.t_stint).abs() <= 1e-12 * t);
}

#[test]
fn heavy_braking_aborts() {
    let c = common::setup();
    let grid = common::straight_track(400.0, 4.0);
    let n = grid.len();
    let inputs = SimInputs {
        f_m: vec![0.0; n],
        f_brake_f: vec![8000.0; n],
    };
    let init = SimInit {
        e_kin: 0.5 * c.model.params.chassis.m_kg * 400.0,
        e_b: c.model.params.battery.e_b_0_j,
        theta_b: 300.0,
        theta_m: 320.0,
    };
    let err = simulate_nonlinear(&inputs, &grid, &c.model, init).unwrap_err();
    assert_eq!(err.kind(), "simulation");
}

#[test]
fn optimal_stint_replays_with_small_drift() {
    let c = common::setup();
    let (sol, grid) = five_laps();
    let cmp = simulate_stint(sol, grid, &c.model).unwrap();
    let r = &cmp.report;
    assert!(r.energy_drift.abs() <= 0.03, "{}", r.energy_drift);
    assert!(r.t_stint_rel_error.abs() <= 0.01, "{}", r.t_stint_rel_error);
    assert!(r.friction_violation <= 1e-3, "{}", r.friction_violation);
    assert!(r.bookkeeping_error <= 1e-6, "{}", r.bookkeeping_error);
    // the drift is normalised by the energy the charge returns
    let charged = c.model.params.battery.e_b_0_j - sol.spec.e_b_terminal;
    assert!((r.e_b_charged - charged).abs() <= 1e-9 * charged);
    assert!(
        ((r.e_b_end_sim - r.e_b_end_convex) / charged - r.energy_drift).abs() <= 1e-12
    );
}

#[test]
fn trajectory_csv_roundtrip() {
    let (sol, _) = five_laps();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("stint.csv");
    sol.traj.write_csv(&p).unwrap();
    let back = read_trajectory_csv(&p).unwrap();
    assert_eq!(back, sol.traj);
}

#[test]
fn battery_limited_stint_cools_onto_terminal_bound() {
    let c = common::setup();
    let r = battery_limited_scenario(&c.model, &c.track, 5, c.tables.t_charge_max, 5.0).unwrap();
    assert!(r.valid);
    assert!(r.terminal_active, "slack {}", r.terminal_slack);
    assert!(r.gradually_decreasing, "rise {}", r.max_rise);
    let tb = &r.solution.as_ref().unwrap().traj.theta_b;
    assert!(tb[tb.len() - 1] < tb[0]);
}

#[test]
fn battery_stays_below_ceiling_with_nominal_cooling() {
    let c = common::setup();
    let r = battery_limited_scenario(&c.model, &c.track, 5, c.tables.t_charge_max, 1.0).unwrap();
    let th = &c.model.params.thermal;
    let tb = &r.solution.as_ref().unwrap().traj.theta_b;
    assert!(tb.iter().all(|&v| v <= th.theta_b_max_k * (1.0 + 1e-9)));
    assert!(r.terminal_slack >= -1e-6 * th.theta_b_max_k);
}

#[test]
fn flat_out_run_on_one_lap() {
    let c = common::setup();
    let grid = build_stint_grid(&c.track, 1).unwrap();
    let ch = &c.model.params.chassis;
    let bat = &c.model.params.battery;
    let run = flat_out_run(&grid, &c.model, bat.e_b_0_j).unwrap();
    let last = run.v.len() - 1;
    assert!((run.v[0] - ch.v_min_mps).abs() <= 1e-9 && (run.v[last] - ch.v_min_mps).abs() <= 1e-9);
    for k in 1..last {
        if grid.pit_mask[k] {
            assert!(run.v[k] <= ch.v_pit_max_mps * (1.0 + 1e-12));
        }
    }
    assert!(run.t.windows(2).all(|w| w[1] > w[0]));
    assert!(run.e_b_end() < bat.e_b_0_j);
    // no energy management can only be faster than the energy-limited optimum
    let spec = StintSpec::regular(1, c.tables.t_charge_max, &c.model.params, &c.tables).unwrap();
    let sol = solve_stint_on_grid(&spec, &grid, &c.model, Limits::default(), &default_solve_options())
        .unwrap();
    assert!(run.t_stint <= sol.t_stint * 1.02, "{} vs {}", run.t_stint, sol.t_stint);
}
