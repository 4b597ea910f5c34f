mod common;

use std::sync::OnceLock;

use pitlane_core::map::{
    default_charge_grid, read_samples_csv, sweep_final_stints, sweep_stint_times,
    write_samples_csv, StintSample, SweepOptions,
};
use pitlane_core::model::{build_stint_grid, StintSpec};
use pitlane_core::stint::{default_solve_options, solve_stint_on_grid, Limits};

const MONOTONE_TOL: f64 = 1e-6;
const LAPS: [usize; 3] = [1, 2, 3];

fn charges() -> Vec<f64> {
    vec![30.0, 60.0, common::setup().tables.t_charge_max]
}

fn sweep(jobs: usize) -> Vec<StintSample> {
    let c = common::setup();
    sweep_stint_times(&c.model, &c.track, &c.tables, &LAPS, &charges(), SweepOptions { jobs }).unwrap()
}

/// Bitwise view, so that infeasible cells (NaN time) compare equal.
fn bits(s: &[StintSample]) -> Vec<(usize, u64, bool, u64, bool, String)> {
    s.iter()
        .map(|x| {
            (x.n_laps, x.t_charge.to_bits(), x.is_final, x.t_stint.to_bits(), x.valid, x.status.clone())
        })
        .collect()
}

fn serial() -> &'static Vec<StintSample> {
    static CELL: OnceLock<Vec<StintSample>> = OnceLock::new();
    CELL.get_or_init(|| sweep(1))
}

#[test]
fn sweep_matches_standalone_solves() {
    let c = common::setup();
    let s = serial();
    assert_eq!(s.len(), 9);
    assert!(s.iter().filter(|x| x.valid).count() >= 8);
    for cell in s {
        let spec = StintSpec::regular(cell.n_laps, cell.t_charge, &c.model.params, &c.tables).unwrap();
        let grid = build_stint_grid(&c.track, cell.n_laps).unwrap();
        let sol =
            solve_stint_on_grid(&spec, &grid, &c.model, Limits::default(), &default_solve_options())
                .unwrap();
        let tag = format!("N={} t_c={}", cell.n_laps, cell.t_charge);
        assert_eq!(cell.valid, sol.is_valid(), "{tag}");
        assert_eq!(cell.status, format!("{:?}", sol.status), "{tag}");
        if cell.valid {
            assert_eq!(cell.t_stint.to_bits(), sol.t_stint.to_bits(), "{tag}");
        }
    }
}

#[test]
fn worker_count_does_not_change_the_map() {
    assert_eq!(bits(&sweep(2)), bits(serial()));
}

#[test]
fn stint_time_grows_with_laps_and_falls_with_charge() {
    let s = serial();
    // infeasible cells (too little charge for the laps) drop out
    let at = |n: usize, t: f64| {
        s.iter()
            .find(|x| x.n_laps == n && x.t_charge == t && x.valid)
            .map(|x| x.t_stint)
    };
    let ch = charges();
    let mut compared = 0;
    for &t in &ch {
        for w in LAPS.windows(2) {
            if let (Some(a), Some(b)) = (at(w[0], t), at(w[1], t)) {
                assert!(b > a, "t_c={t}");
                compared += 1;
            }
        }
    }
    for &n in &LAPS {
        for w in ch.windows(2) {
            if let (Some(a), Some(b)) = (at(n, w[0]), at(n, w[1])) {
                assert!(b <= a * (1.0 + MONOTONE_TOL), "N={n}");
                compared += 1;
            }
        }
    }
    assert!(compared >= 10);
}

#[test]
fn final_stint_is_never_slower() {
    let c = common::setup();
    let t_max = c.tables.t_charge_max;
    let finals =
        sweep_final_stints(&c.model, &c.track, &c.tables, &LAPS, SweepOptions { jobs: 1 }).unwrap();
    assert_eq!(finals.len(), 3);
    for f in &finals {
        assert!(f.is_final && f.valid);
        let reg = serial()
            .iter()
            .find(|x| x.n_laps == f.n_laps && x.t_charge == t_max)
            .unwrap();
        assert!(f.t_stint <= reg.t_stint * (1.0 + MONOTONE_TOL), "N={}", f.n_laps);
    }
}

#[test]
fn samples_roundtrip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("map.csv");
    write_samples_csv(serial(), &p).unwrap();
    assert_eq!(bits(&read_samples_csv(&p).unwrap()), bits(serial()));
}

#[test]
fn bad_sweep_arguments_are_rejected() {
    let c = common::setup();
    let t_max = c.tables.t_charge_max;
    let run = |laps: &[usize], ch: &[f64]| {
        sweep_stint_times(&c.model, &c.track, &c.tables, laps, ch, SweepOptions::default())
    };
    assert_eq!(run(&[], &[30.0]).unwrap_err().kind(), "argument");
    assert_eq!(run(&[0], &[30.0]).unwrap_err().kind(), "argument");
    assert_eq!(run(&[1], &[t_max * 1.1]).unwrap_err().kind(), "argument");
    let grid = default_charge_grid(t_max);
    assert_eq!(grid.last().copied(), Some(t_max));
    assert!(grid.windows(2).all(|w| w[1] > w[0]));
}
