//! The published synthetic car and circuits used by the examples and tests.
//!
//! Everything here is deterministic: the same call always yields the same
//! data, and the CLI writes these tables to disk verbatim.

use std::f64::consts::PI;

use crate::fitting::{internal_power, BatterySheetRow, MotorMapRow};
use crate::model::{
    BatteryParams, DrivetrainParams, R0Curve, ThermalParams, VehicleChassis, VehicleParams,
    VocCurve,
};

pub fn vehicle_params() -> VehicleParams {
    VehicleParams {
        chassis: VehicleChassis {
            m_kg: 900.0,
            g_mps2: 9.81,
            rho_kgpm3: 1.2,
            c_d: 0.9,
            c_l: 2.2,
            a_f_m2: 1.1,
            c_r: 0.012,
            mu_x_f: 1.5,
            mu_y_f: 1.5,
            mu_x_r: 1.5,
            mu_y_r: 1.5,
            l_f_m: 1.4,
            l_r_m: 1.2,
            h_g_m: 0.32,
            h_p_m: 0.4,
            l_gp_m: 0.1,
            delta_brake: 0.6,
            r_w_m: 0.3,
            v_min_mps: 2.0,
            v_pit_max_mps: 16.0,
        },
        drivetrain: DrivetrainParams {
            eta_fd: 0.97,
            gamma_fd: 7.5,
            t_m_max_nm: 300.0,
            p_m_max_w: 150e3,
            alpha_inv_per_w: 2e-7,
            p_aux_w: 4000.0,
        },
        thermal: ThermalParams {
            c_m_jpk: 6000.0,
            c_b_jpk: 4e4,
            lambda_m_wpk: 50.0,
            lambda_b_wpk: 300.0,
            theta_m_c_k: 338.0,
            theta_b_c_k: 288.0,
            theta_m_max_k: 423.0,
            theta_b_max_k: 318.0,
            theta_ref_k: 298.0,
        },
        battery: BatteryParams {
            e_b_min_j: 9e6,
            e_b_max_j: 14e6,
            e_b_0_j: 14e6,
            alpha_ch: 0.05,
            i_charge_a: 70.0,
            v_oc: VocCurve {
                energy_j: vec![0.0, 4e6, 8e6, 12e6, 14e6, 16e6],
                voltage_v: vec![500.0, 590.0, 620.0, 650.0, 665.0, 680.0],
            },
            r_0: R0Curve {
                energy_j: vec![0.0, 4e6, 8e6, 12e6, 16e6],
                resistance_ohm: vec![0.09, 0.07, 0.06, 0.058, 0.06],
            },
        },
    }
}

/// Track CSV of a stadium oval: two straights joined by semicircles, with
/// straight pit-out and pit-in segments. Rows every `step` metres.
pub fn oval_track_csv(straight: f64, radius: f64, pit_out: f64, pit_in: f64, step: f64) -> String {
    let arc = PI * radius;
    let lap = 2.0 * straight + 2.0 * arc;
    let total = pit_out + lap + pit_in;
    let n = (total / step).ceil() as usize;
    let mut s_rows: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
    // exact seams so the pit flag switches on the right samples
    s_rows.extend([pit_out, pit_out + lap, total]);
    s_rows.sort_by(f64::total_cmp);
    s_rows.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut out = String::from("s,kappa,theta,phi,pit\n");
    for s in s_rows {
        let pit = s < pit_out - 1e-9 || s > pit_out + lap + 1e-9;
        let u = s - pit_out;
        let in_arc = |a: f64| u > a + 1e-9 && u < a + arc - 1e-9;
        let kappa = if !pit && (in_arc(straight) || in_arc(2.0 * straight + arc)) {
            1.0 / radius
        } else {
            0.0
        };
        out.push_str(&format!("{s},{kappa},0,0,{}\n", u8::from(pit)));
    }
    out
}

/// The circuit used for the synthetic race: 300 m straights, 60 m radius
/// turns, 60 m of pit lane at each end.
pub fn race_track_csv() -> String {
    oval_track_csv(300.0, 60.0, 60.0, 60.0, 2.0)
}

/// The geometry-check oval: 500 m straights, 100 m radius turns.
pub fn reference_oval_csv() -> String {
    oval_track_csv(500.0, 100.0, 60.0, 40.0, 2.0)
}

/// EM loss in watts: copper, iron, friction and a constant drive overhead.
pub fn em_loss_w(omega: f64, torque: f64) -> f64 {
    0.044 * torque * torque + 0.0166 * omega.powf(1.6) + 0.33 * omega + 200.0
}

/// Motor map on the feasible torque-speed region.
pub fn motor_map(params: &VehicleParams) -> Vec<MotorMapRow> {
    let d = &params.drivetrain;
    let v_top = 70.0;
    let omega_max = v_top * d.gamma_fd / params.chassis.r_w_m;
    let mut rows = Vec::new();
    for i in 0..30 {
        let omega = 20.0 + (omega_max - 20.0) * i as f64 / 29.0;
        for j in 0..=20 {
            let torque = -d.t_m_max_nm + 2.0 * d.t_m_max_nm * j as f64 / 20.0;
            if (torque * omega).abs() > d.p_m_max_w * (1.0 + 1e-12) {
                continue;
            }
            rows.push(MotorMapRow {
                omega_rad_s: omega,
                torque_nm: torque,
                p_loss_w: em_loss_w(omega, torque),
            });
        }
    }
    rows
}

/// `(P_ac, P_dc)` pairs generated from the configured inverter coefficient.
pub fn inverter_samples(params: &VehicleParams) -> Vec<(f64, f64)> {
    let a = params.drivetrain.alpha_inv_per_w;
    (-10..=10)
        .map(|k| {
            let p_ac = k as f64 * 0.1 * params.drivetrain.p_m_max_w;
            (p_ac, a * p_ac * p_ac + p_ac)
        })
        .collect()
}

/// `(P_b, P_i)` pairs generated from the configured charge-loss coefficient at
/// the reference state of charge.
pub fn charge_loss_samples(params: &VehicleParams) -> Vec<(f64, f64)> {
    let b = &params.battery;
    let e_mid = 0.5 * (b.e_b_min_j + b.e_b_max_j);
    let inv_psc = 1.0 / b.p_sc(e_mid, params.thermal.theta_ref_k, params.thermal.theta_ref_k);
    (-10..=10)
        .map(|k| {
            let p_b = k as f64 * 15e3;
            (p_b, internal_power(p_b, inv_psc, b.alpha_ch))
        })
        .collect()
}

/// Battery sheet sampled on the union of the curve breakpoints.
pub fn battery_sheet(params: &VehicleParams) -> Vec<BatterySheetRow> {
    let b = &params.battery;
    let mut e: Vec<f64> = b.v_oc.energy_j.iter().chain(&b.r_0.energy_j).copied().collect();
    e.sort_by(f64::total_cmp);
    e.dedup();
    e.into_iter()
        .map(|energy_j| BatterySheetRow {
            energy_j,
            voltage_v: b.v_oc_at(energy_j),
            resistance_ohm: b.r_0_at(energy_j),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_track_str;

    #[test]
    fn race_track_lengths() {
        let t = parse_track_str(&race_track_csv(), 4.0).unwrap();
        assert!((t.lap_length - (600.0 + 120.0 * PI)).abs() < 1e-9);
        assert_eq!(t.pit_out_length, 60.0);
        assert_eq!(t.pit_in_length, 60.0);
        let corner = t.kappa.iter().filter(|&&k| k > 0.0).count();
        assert!(corner > 0);
    }

    #[test]
    fn map_respects_power_limit() {
        let p = vehicle_params();
        let rows = motor_map(&p);
        assert!(rows.len() > 300);
        assert!(rows
            .iter()
            .all(|r| (r.omega_rad_s * r.torque_nm).abs() <= p.drivetrain.p_m_max_w * (1.0 + 1e-9)));
    }
}
