mod common;

use common::oracles;

use pitlane_core::charge::{
    build_charge_tables, build_em_init_temp_table, build_energy_table, DEFAULT_DT,
};
use pitlane_core::interp::interp_clamped;
use pitlane_core::synthetic;

const EXP_TOL: f64 = 1e-6;

#[test]
fn em_cooldown_follows_exponential() {
    let err = oracles::em_cooldown_error(&synthetic::vehicle_params());
    assert!(err <= EXP_TOL, "{err:e}");
}

#[test]
fn em_cooldown_of_eighty_kelvin_over_three_time_constants() {
    let mut th = synthetic::vehicle_params().thermal;
    th.theta_m_c_k = 300.0;
    th.theta_m_max_k = 380.0;
    let tau = th.c_m_jpk / th.lambda_m_wpk;
    let n = 3000;
    let grid: Vec<f64> = (0..=n).map(|k| 3.0 * tau * k as f64 / n as f64).collect();
    let out = build_em_init_temp_table(&th, &grid).unwrap();
    let drop = th.theta_m_max_k - out[n];
    let exact = 80.0 * (1.0 - (-3.0f64).exp());
    assert!((drop - exact).abs() <= EXP_TOL, "{drop} vs {exact}");
}

#[test]
fn charge_energy_under_linear_voltage() {
    let p = synthetic::vehicle_params();
    let err = oracles::linear_voltage_charge_error(&p);
    assert!(err <= EXP_TOL, "{err:e}");
    // V = a + b·E: the full charge takes ln((E_max + a/b)/(E_min + a/b))/(b·I)
    let mut bat = p.battery.clone();
    let (a, b) = (600.0, 2e-5);
    bat.v_oc.energy_j = vec![bat.e_b_min_j, bat.e_b_max_j];
    bat.v_oc.voltage_v = bat.v_oc.energy_j.iter().map(|e| a + b * e).collect();
    let (t, _) = build_energy_table(&bat, 0.1).unwrap();
    let c = a / b;
    let t_full = ((bat.e_b_max_j + c) / (bat.e_b_min_j + c)).ln() / (b * bat.i_charge_a);
    assert!((t.last().unwrap() - t_full).abs() <= 1e-6 * t_full);
}

#[test]
fn terminal_temperature_under_constant_loss() {
    let err = oracles::battery_heating_error(&synthetic::vehicle_params());
    assert!(err <= EXP_TOL, "{err:e}");
}

#[test]
fn synthetic_tables_are_consistent() {
    let p = synthetic::vehicle_params();
    let tab = build_charge_tables(&p, p.battery.alpha_ch, DEFAULT_DT).unwrap();
    let usable = p.battery.e_b_max_j - p.battery.e_b_min_j;
    assert_eq!(*tab.e_b_ch.last().unwrap(), usable);
    assert!(tab.e_b_ch.windows(2).all(|w| w[1] > w[0]));
    assert!(tab.theta_b_n.iter().all(|&v| v <= p.thermal.theta_b_max_k));
    assert!(tab.theta_b_n.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    for e in [0.0, 1e5, 0.37 * usable, usable] {
        let t = tab.time_for_energy(e).unwrap();
        let back = interp_clamped(&tab.t_grid, &tab.e_b_ch, t);
        assert!((back - e).abs() <= 1e-6 * usable);
    }
    assert!(tab.time_for_energy(usable * 1.01).is_none());
}
