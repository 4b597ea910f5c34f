use std::path::Path;

use serde::{Deserialize, Serialize};

use super::powertrain::{
    em_force_loss_samples, fit_charge_loss_alpha, fit_inverter_alpha, MotorMapRow,
};
use super::quadform::{fit_quadratic_form, fit_quadratic_form_with_offset, FeatureMap, FitOptions, FitSample, Sign};
use crate::error::{Error, Result};
use crate::model::{FitBundle, VehicleParams};

/// One row of a battery characterisation sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySheetRow {
    pub energy_j: f64,
    pub voltage_v: f64,
    pub resistance_ohm: f64,
}

pub fn read_battery_sheet(path: &Path) -> Result<Vec<BatterySheetRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let row: BatterySheetRow = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !(row.resistance_ohm > 0.0 && row.voltage_v > 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("non-positive voltage or resistance at E = {}", row.energy_j),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Raw component data. Missing optional tables fall back to the vehicle
/// parameters (battery curves) or to the configured coefficients.
#[derive(Debug, Clone, Default)]
pub struct ComponentData {
    pub motor_map: Vec<MotorMapRow>,
    pub battery_sheet: Option<Vec<BatterySheetRow>>,
    /// `(P_ac, P_dc)` pairs
    pub inverter: Option<Vec<(f64, f64)>>,
    /// `(P_b, P_i)` pairs
    pub charge_loss: Option<Vec<(f64, f64)>>,
}

const TEMPERATURE_POINTS: usize = 41;
/// Temperature surrogate offset as a multiple of the window ceiling. The
/// fit error falls monotonically with the offset; twice the ceiling keeps it
/// well under 0.1% without inflating the cone coefficients.
pub const TEMPERATURE_OFFSET_FACTOR: f64 = 2.0;

fn temperature_samples(lo: f64, hi: f64) -> Vec<FitSample> {
    (0..TEMPERATURE_POINTS)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / (TEMPERATURE_POINTS - 1) as f64;
            FitSample::new(vec![t], t)
        })
        .collect()
}

/// Identity samples of `ϑ` over the operating window `[ϑ_c, ϑ_max]`.
pub fn em_temperature_samples(params: &VehicleParams) -> Vec<FitSample> {
    let t = &params.thermal;
    temperature_samples(t.theta_m_c_k, t.theta_m_max_k)
}

pub fn battery_temperature_samples(params: &VehicleParams) -> Vec<FitSample> {
    let t = &params.thermal;
    temperature_samples(t.theta_b_c_k, t.theta_b_max_k)
}

/// `P_sc = V_oc²/R_0 · ϑ/ϑ_ref` on the usable energy window times the
/// temperature window.
pub fn battery_psc_samples(
    params: &VehicleParams,
    sheet: Option<&[BatterySheetRow]>,
) -> Vec<FitSample> {
    let b = &params.battery;
    let t = &params.thermal;
    let theta_ref = t.theta_ref_k;
    let thetas: Vec<f64> = (0..9)
        .map(|i| t.theta_b_c_k + (t.theta_b_max_k - t.theta_b_c_k) * i as f64 / 8.0)
        .collect();
    let points: Vec<(f64, f64)> = match sheet {
        Some(rows) => rows
            .iter()
            .filter(|r| r.energy_j >= b.e_b_min_j && r.energy_j <= b.e_b_max_j)
            .map(|r| (r.energy_j, r.voltage_v * r.voltage_v / r.resistance_ohm))
            .collect(),
        None => (0..=20)
            .map(|i| {
                let e = b.e_b_min_j + b.usable_energy() * i as f64 / 20.0;
                (e, b.p_sc(e, theta_ref, theta_ref))
            })
            .collect(),
    };
    let mut out = Vec::with_capacity(points.len() * thetas.len());
    for &(e, p_ref) in &points {
        for &th in &thetas {
            out.push(FitSample::new(vec![e, th], p_ref * th / theta_ref));
        }
    }
    out
}

/// Fits every component surrogate. The stint-time surface and final-stint
/// quadratic are left empty; they come from the stint map.
pub fn fit_component_models(
    params: &VehicleParams,
    data: &ComponentData,
    opts: &FitOptions,
) -> Result<FitBundle> {
    params.validate()?;
    let d = &params.drivetrain;
    let em = em_force_loss_samples(&data.motor_map, d.gamma_fd, params.chassis.r_w_m);
    if em.samples.is_empty() {
        return Err(Error::Argument("motor map has no usable rows".into()));
    }
    // relative to the largest AC-side force so near-zero losses do not dominate
    let f_ac_max = em
        .samples
        .iter()
        .map(|s| (s.features[1] + s.target).abs())
        .fold(0.0, f64::max);
    let em_opts = FitOptions {
        rmse_reference: Some(f_ac_max),
        ..*opts
    };
    let q_m_l = fit_quadratic_form(&em.samples, FeatureMap::EmLoss, Sign::Psd, &em_opts)?;

    let temp_opts = FitOptions {
        rmse_reference: None,
        ..*opts
    };
    let temperature = |samples: Vec<FitSample>, ceiling: f64| {
        fit_quadratic_form_with_offset(
            &samples,
            FeatureMap::Temperature,
            Sign::Nsd,
            TEMPERATURE_OFFSET_FACTOR * ceiling,
            &temp_opts,
        )
    };
    let th = &params.thermal;
    let q_m_theta = temperature(em_temperature_samples(params), th.theta_m_max_k)?;
    let q_b_theta = temperature(battery_temperature_samples(params), th.theta_b_max_k)?;
    let psc = battery_psc_samples(params, data.battery_sheet.as_deref());
    if psc.is_empty() {
        return Err(Error::Argument(
            "battery sheet has no rows inside the usable energy window".into(),
        ));
    }
    let q_b_l = fit_quadratic_form(&psc, FeatureMap::Battery, Sign::Nsd, &temp_opts)?;

    let (alpha_inv, alpha_inv_flagged) = match &data.inverter {
        Some(s) => {
            let f = fit_inverter_alpha(s)?;
            (f.value, f.flagged)
        }
        None => (d.alpha_inv_per_w, false),
    };
    let (alpha_ch, alpha_ch_flagged) = match &data.charge_loss {
        Some(s) => {
            let f = fit_charge_loss_alpha(s)?;
            (f.alpha_ch, f.flagged)
        }
        None => (params.battery.alpha_ch, false),
    };

    let bundle = FitBundle {
        q_m_l,
        q_m_theta,
        q_b_l,
        q_b_theta,
        alpha_inv,
        alpha_inv_flagged,
        alpha_ch,
        alpha_ch_flagged,
        q_s: None,
        d_s_f: None,
    };
    bundle.validate()?;
    Ok(bundle)
}
