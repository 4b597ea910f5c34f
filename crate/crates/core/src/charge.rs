//! Pit-stop lookup tables keyed by charge time.
//!
//! Charging always ends at `E_b,max` with the battery at its temperature
//! ceiling, so every table is produced by one integration backwards from the
//! end of the charge (energy, battery temperature) or forwards from the start
//! of it (EM temperature, which only cools while the car stands).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::interp_clamped;
use crate::model::{BatteryParams, ThermalParams, VehicleParams};

pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeTables {
    pub t_grid: Vec<f64>,
    /// Energy recharged in `t` seconds, ending full.
    pub e_b_ch: Vec<f64>,
    /// Highest admissible end-of-stint battery temperature.
    pub theta_b_n: Vec<f64>,
    /// EM temperature after `t` seconds of cooling from its ceiling.
    pub theta_m_init: Vec<f64>,
    pub t_charge_max: f64,
    pub dt: f64,
}

impl ChargeTables {
    pub fn energy_at(&self, t: f64) -> f64 {
        interp_clamped(&self.t_grid, &self.e_b_ch, t)
    }

    pub fn theta_b_n_at(&self, t: f64) -> f64 {
        interp_clamped(&self.t_grid, &self.theta_b_n, t)
    }

    pub fn theta_m_init_at(&self, t: f64) -> f64 {
        interp_clamped(&self.t_grid, &self.theta_m_init, t)
    }

    /// Charge time that puts back `e` joules; inverse of [`Self::energy_at`].
    pub fn time_for_energy(&self, e: f64) -> Option<f64> {
        let top = *self.e_b_ch.last()?;
        if !(e >= 0.0 && e <= top * (1.0 + 1e-12)) {
            return None;
        }
        Some(interp_clamped(&self.e_b_ch, &self.t_grid, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let t: ChargeTables = serde_json::from_str(&text)?;
        if t.t_grid.len() < 2
            || t.t_grid.len() != t.e_b_ch.len()
            || t.t_grid.len() != t.theta_b_n.len()
            || t.t_grid.len() != t.theta_m_init.len()
        {
            return Err(Error::Validation("charge tables have inconsistent lengths".into()));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("integration step must lie in (0, 1] s, got {dt}")))
    }
}

fn rk4<const N: usize>(f: &dyn Fn(&[f64; N]) -> [f64; N], y: &[f64; N], h: f64) -> [f64; N] {
    let add = |a: &[f64; N], b: &[f64; N], c: f64| {
        let mut r = *a;
        for i in 0..N {
            r[i] += c * b[i];
        }
        r
    };
    let k1 = f(y);
    let k2 = f(&add(y, &k1, 0.5 * h));
    let k3 = f(&add(y, &k2, 0.5 * h));
    let k4 = f(&add(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Step sizes of the backwards charge integration: full `dt` steps and one
/// shortened last step that lands on `E_b,min` exactly.
fn charge_steps(bat: &BatteryParams, dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    if !(bat.i_charge_a > 0.0) {
        return Err(Error::Validation("charging current must be positive".into()));
    }
    let voc = bat.v_oc_table();
    voc.validate("v_oc curve")?;
    if voc.x_min() > bat.e_b_min_j || voc.x_max() < bat.e_b_max_j {
        return Err(Error::Validation(
            "v_oc table does not cover [e_b_min_j, e_b_max_j]".into(),
        ));
    }
    let i = bat.i_charge_a;
    let f = |y: &[f64; 1]| [-bat.v_oc_at(y[0]) * i];
    let mut e = [bat.e_b_max_j];
    let mut steps = Vec::new();
    let max_steps = 1e8 as usize;
    loop {
        let next = rk4(&f, &e, dt);
        if next[0] > bat.e_b_min_j {
            steps.push(dt);
            e = next;
        } else {
            // bisection on the last step length
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if rk4(&f, &e, mid)[0] > bat.e_b_min_j {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if hi > 1e-12 {
                steps.push(hi);
            }
            return Ok(steps);
        }
        if steps.len() > max_steps || !e[0].is_finite() {
            return Err(Error::Integration("charge energy integration did not terminate".into()));
        }
    }
}

fn cumulative(steps: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(steps.len() + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for h in steps {
        acc += h;
        t.push(acc);
    }
    t
}

/// Recharged energy against charge time under constant current,
/// `dE_b/dt = V_oc(E_b)·I`, for charges that end at `E_b,max`.
pub fn build_energy_table(bat: &BatteryParams, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let steps = charge_steps(bat, dt)?;
    let i = bat.i_charge_a;
    let f = |y: &[f64; 1]| [-bat.v_oc_at(y[0]) * i];
    let mut e = [bat.e_b_max_j];
    let mut ech = vec![0.0];
    for (k, &h) in steps.iter().enumerate() {
        e = rk4(&f, &e, h);
        if k + 1 == steps.len() {
            e[0] = bat.e_b_min_j;
        }
        ech.push(bat.e_b_max_j - e[0]);
    }
    Ok((cumulative(&steps), ech))
}

/// Heat released in the pack while charging at `I`, for internal energy `e`
/// and temperature `theta`. Internal power is `V_oc·I`; the terminal power
/// follows from the two-branch loss model.
pub fn charging_heat(bat: &BatteryParams, theta_ref: f64, alpha_ch: f64, e: f64, theta: f64) -> f64 {
    let i = bat.i_charge_a;
    let v = bat.v_oc_at(e);
    let r = bat.r_0_at(e) * theta_ref / theta;
    (v * i + i * i * r) / (1.0 - alpha_ch) - v * i
}

/// Integrates `C_b·dϑ/dt = P_loss − λ_b·(ϑ − ϑ_b,c)` backwards from
/// `ϑ_b,max` at the end of the charge. Entry `k` is the temperature the pack
/// may have when a charge of `t_grid[k]` seconds starts; values are capped at
/// the ceiling.
pub fn integrate_terminal_temperature(
    bat: &BatteryParams,
    thermal: &ThermalParams,
    steps: &[f64],
    loss: &dyn Fn(f64, f64) -> f64,
) -> Result<Vec<f64>> {
    let i = bat.i_charge_a;
    let f = |y: &[f64; 2]| {
        let de = -bat.v_oc_at(y[0]) * i;
        let dth = -(loss(y[0], y[1]) - thermal.lambda_b_wpk * (y[1] - thermal.theta_b_c_k))
            / thermal.c_b_jpk;
        [de, dth]
    };
    let mut y = [bat.e_b_max_j, thermal.theta_b_max_k];
    let mut out = vec![thermal.theta_b_max_k];
    for &h in steps {
        y = rk4(&f, &y, h);
        if !(y[1].is_finite() && y[1] > 0.0) {
            return Err(Error::Integration(format!(
                "battery temperature diverged ({}); reduce the step size",
                y[1]
            )));
        }
        out.push(y[1].min(thermal.theta_b_max_k));
    }
    Ok(out)
}

pub fn build_terminal_temp_table(
    bat: &BatteryParams,
    thermal: &ThermalParams,
    alpha_ch: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let steps = charge_steps(bat, dt)?;
    let loss = |e: f64, th: f64| charging_heat(bat, thermal.theta_ref_k, alpha_ch, e, th);
    let theta = integrate_terminal_temperature(bat, thermal, &steps, &loss)?;
    Ok((cumulative(&steps), theta))
}

/// EM temperature after idling `t` seconds under full cooling, starting at
/// its ceiling, sampled on `t_grid`.
pub fn build_em_init_temp_table(thermal: &ThermalParams, t_grid: &[f64]) -> Result<Vec<f64>> {
    let rate = thermal.lambda_m_wpk / thermal.c_m_jpk;
    let f = |y: &[f64; 1]| [-rate * (y[0] - thermal.theta_m_c_k)];
    let mut y = [thermal.theta_m_max_k];
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(y[0]);
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        check_dt(h.max(f64::MIN_POSITIVE))?;
        y = rk4(&f, &y, h);
        out.push(y[0].max(thermal.theta_m_c_k));
    }
    Ok(out)
}

pub fn build_charge_tables(params: &VehicleParams, alpha_ch: f64, dt: f64) -> Result<ChargeTables> {
    let (t_grid, e_b_ch) = build_energy_table(&params.battery, dt)?;
    let (_, theta_b_n) = build_terminal_temp_table(&params.battery, &params.thermal, alpha_ch, dt)?;
    let theta_m_init = build_em_init_temp_table(&params.thermal, &t_grid)?;
    let t_charge_max = *t_grid.last().expect("nonempty grid");
    Ok(ChargeTables {
        t_grid,
        e_b_ch,
        theta_b_n,
        theta_m_init,
        t_charge_max,
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn flat_battery(v: f64, i: f64) -> BatteryParams {
        let mut b = synthetic::vehicle_params().battery;
        b.v_oc.voltage_v = vec![v; b.v_oc.voltage_v.len()];
        b.i_charge_a = i;
        b
    }

    #[test]
    fn constant_voltage_energy() {
        let b = flat_battery(400.0, 90.0);
        let (t, e) = build_energy_table(&b, 0.1).unwrap();
        assert_eq!(e[0], 0.0);
        let e60 = interp_clamped(&t, &e, 60.0);
        assert!((e60 - 2.16e6).abs() < 1e-6 * 2.16e6, "{e60}");
        assert_eq!(*e.last().unwrap(), b.e_b_max_j - b.e_b_min_j);
    }

    #[test]
    fn longer_charges_average_less_power() {
        let p = synthetic::vehicle_params();
        let (t, e) = build_energy_table(&p.battery, 0.1).unwrap();
        let avg = |k: usize| e[k] / t[k];
        assert!(avg(100) > avg(t.len() / 2));
        assert!(avg(t.len() / 2) > avg(t.len() - 1));
    }

    #[test]
    fn lossless_uncooled_pack_stays_at_ceiling() {
        let mut p = synthetic::vehicle_params();
        p.battery.r_0.resistance_ohm.iter_mut().for_each(|r| *r = 0.0);
        p.thermal.lambda_b_wpk = 0.0;
        let (_, th) = build_terminal_temp_table(&p.battery, &p.thermal, 0.0, 0.1).unwrap();
        assert!(th.iter().all(|&v| v == p.thermal.theta_b_max_k));
    }

    #[test]
    fn em_cooldown_limits() {
        let th = synthetic::vehicle_params().thermal;
        let grid: Vec<f64> = (0..=30000).map(|k| k as f64 * 0.1).collect();
        let out = build_em_init_temp_table(&th, &grid).unwrap();
        assert_eq!(out[0], th.theta_m_max_k);
        assert!((out.last().unwrap() - th.theta_m_c_k).abs() < 1e-3);
        assert!(out.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_uncovered_voltage_table() {
        let mut b = synthetic::vehicle_params().battery;
        b.v_oc.energy_j[0] = b.e_b_min_j + 1.0;
        assert!(build_energy_table(&b, 0.1).is_err());
        assert!(build_energy_table(&synthetic::vehicle_params().battery, 2.0).is_err());
    }
}
