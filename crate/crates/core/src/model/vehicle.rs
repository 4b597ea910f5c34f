use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Table1D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleChassis {
    pub m_kg: f64,
    pub g_mps2: f64,
    pub rho_kgpm3: f64,
    pub c_d: f64,
    /// Downforce coefficient, positive for downforce.
    pub c_l: f64,
    pub a_f_m2: f64,
    pub c_r: f64,
    pub mu_x_f: f64,
    pub mu_y_f: f64,
    pub mu_x_r: f64,
    pub mu_y_r: f64,
    pub l_f_m: f64,
    pub l_r_m: f64,
    pub h_g_m: f64,
    pub h_p_m: f64,
    /// Horizontal CoG-to-CoP distance; positive puts the CoP behind the CoG.
    pub l_gp_m: f64,
    /// Front share of the mechanical brake force.
    pub delta_brake: f64,
    pub r_w_m: f64,
    pub v_min_mps: f64,
    pub v_pit_max_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivetrainParams {
    pub eta_fd: f64,
    pub gamma_fd: f64,
    pub t_m_max_nm: f64,
    pub p_m_max_w: f64,
    pub alpha_inv_per_w: f64,
    pub p_aux_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    pub c_m_jpk: f64,
    pub c_b_jpk: f64,
    pub lambda_m_wpk: f64,
    pub lambda_b_wpk: f64,
    pub theta_m_c_k: f64,
    pub theta_b_c_k: f64,
    pub theta_m_max_k: f64,
    pub theta_b_max_k: f64,
    pub theta_ref_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocCurve {
    pub energy_j: Vec<f64>,
    pub voltage_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct R0Curve {
    pub energy_j: Vec<f64>,
    pub resistance_ohm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    pub e_b_min_j: f64,
    pub e_b_max_j: f64,
    pub e_b_0_j: f64,
    pub alpha_ch: f64,
    pub i_charge_a: f64,
    pub v_oc: VocCurve,
    pub r_0: R0Curve,
}

impl BatteryParams {
    pub fn v_oc_table(&self) -> Table1D {
        Table1D {
            x: self.v_oc.energy_j.clone(),
            y: self.v_oc.voltage_v.clone(),
        }
    }

    pub fn r_0_table(&self) -> Table1D {
        Table1D {
            x: self.r_0.energy_j.clone(),
            y: self.r_0.resistance_ohm.clone(),
        }
    }

    pub fn v_oc_at(&self, e: f64) -> f64 {
        crate::interp::interp_clamped(&self.v_oc.energy_j, &self.v_oc.voltage_v, e)
    }

    pub fn r_0_at(&self, e: f64) -> f64 {
        crate::interp::interp_clamped(&self.r_0.energy_j, &self.r_0.resistance_ohm, e)
    }

    /// Short-circuit power `V_oc² / R_0 · ϑ / ϑ_ref`.
    pub fn p_sc(&self, e: f64, theta: f64, theta_ref: f64) -> f64 {
        let v = self.v_oc_at(e);
        v * v / self.r_0_at(e) * theta / theta_ref
    }

    pub fn usable_energy(&self) -> f64 {
        self.e_b_max_j - self.e_b_min_j
    }
}

/// Every physical parameter of the car, as read from the vehicle config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub chassis: VehicleChassis,
    pub drivetrain: DrivetrainParams,
    pub thermal: ThermalParams,
    pub battery: BatteryParams,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be positive, got {v}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be nonnegative, got {v}")))
    }
}

impl VehicleParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: VehicleParams = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::TomlDe(inner) => Error::Config(format!("{}: {inner}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.chassis;
        for (n, v) in [
            ("m_kg", c.m_kg),
            ("g_mps2", c.g_mps2),
            ("rho_kgpm3", c.rho_kgpm3),
            ("c_d", c.c_d),
            ("a_f_m2", c.a_f_m2),
            ("c_r", c.c_r),
            ("mu_x_f", c.mu_x_f),
            ("mu_y_f", c.mu_y_f),
            ("mu_x_r", c.mu_x_r),
            ("mu_y_r", c.mu_y_r),
            ("l_f_m", c.l_f_m),
            ("l_r_m", c.l_r_m),
            ("h_g_m", c.h_g_m),
            ("h_p_m", c.h_p_m),
            ("l_gp_m", c.l_gp_m),
            ("r_w_m", c.r_w_m),
            ("v_min_mps", c.v_min_mps),
            ("v_pit_max_mps", c.v_pit_max_mps),
        ] {
            positive(n, v)?;
        }
        if !c.c_l.is_finite() {
            return Err(Error::Validation("c_l must be finite".into()));
        }
        if !(c.delta_brake > 0.0 && c.delta_brake < 1.0) {
            return Err(Error::Validation("delta_brake must lie in (0, 1)".into()));
        }
        if c.v_min_mps >= c.v_pit_max_mps {
            return Err(Error::Validation("v_min_mps must be below v_pit_max_mps".into()));
        }

        let d = &self.drivetrain;
        if !(d.eta_fd > 0.0 && d.eta_fd <= 1.0) {
            return Err(Error::Validation("eta_fd must lie in (0, 1]".into()));
        }
        positive("gamma_fd", d.gamma_fd)?;
        positive("t_m_max_nm", d.t_m_max_nm)?;
        positive("p_m_max_w", d.p_m_max_w)?;
        nonneg("alpha_inv_per_w", d.alpha_inv_per_w)?;
        nonneg("p_aux_w", d.p_aux_w)?;

        let t = &self.thermal;
        for (n, v) in [
            ("c_m_jpk", t.c_m_jpk),
            ("c_b_jpk", t.c_b_jpk),
            ("lambda_m_wpk", t.lambda_m_wpk),
            ("lambda_b_wpk", t.lambda_b_wpk),
            ("theta_m_c_k", t.theta_m_c_k),
            ("theta_b_c_k", t.theta_b_c_k),
            ("theta_ref_k", t.theta_ref_k),
        ] {
            positive(n, v)?;
        }
        if t.theta_m_c_k >= t.theta_m_max_k || t.theta_b_c_k >= t.theta_b_max_k {
            return Err(Error::Validation(
                "coolant temperatures must be below the ceilings".into(),
            ));
        }

        let b = &self.battery;
        if !(b.e_b_min_j < b.e_b_max_j) || b.e_b_min_j < 0.0 {
            return Err(Error::Validation("need 0 ≤ e_b_min_j < e_b_max_j".into()));
        }
        if b.e_b_0_j != b.e_b_max_j {
            return Err(Error::Validation(
                "e_b_0_j must equal e_b_max_j (stints start full)".into(),
            ));
        }
        positive("i_charge_a", b.i_charge_a)?;
        if !(b.alpha_ch.is_finite() && b.alpha_ch < 1.0) {
            return Err(Error::Validation("alpha_ch must be finite and below 1".into()));
        }
        let voc = b.v_oc_table();
        voc.validate("v_oc curve")?;
        if !voc.is_nondecreasing() {
            return Err(Error::Validation(
                "v_oc must be nondecreasing in energy".into(),
            ));
        }
        if voc.y.iter().any(|&v| v <= 0.0) {
            return Err(Error::Validation("v_oc must be positive".into()));
        }
        let r0 = b.r_0_table();
        r0.validate("r_0 curve")?;
        if r0.y.iter().any(|&r| r < 0.0) {
            return Err(Error::Validation("r_0 must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn max_em_force(&self) -> f64 {
        self.drivetrain.t_m_max_nm * self.drivetrain.gamma_fd / self.chassis.r_w_m
    }

    /// True when the battery has no internal resistance anywhere.
    pub fn ideal_battery(&self) -> bool {
        self.battery.r_0.resistance_ohm.iter().all(|&r| r == 0.0)
    }

    /// Static front-axle load on flat ground at rest.
    pub fn static_front_load(&self) -> f64 {
        let c = &self.chassis;
        c.m_kg * c.g_mps2 * c.l_r_m / (c.l_f_m + c.l_r_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn shipped_params_validate_and_roundtrip() {
        let p = synthetic::vehicle_params();
        p.validate().unwrap();
        let text = p.to_toml_string().unwrap();
        let back = VehicleParams::from_toml_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn rejects_bad_brake_balance() {
        let mut p = synthetic::vehicle_params();
        p.chassis.delta_brake = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let p = synthetic::vehicle_params();
        let text = p.to_toml_string().unwrap().replace("m_kg", "mass");
        assert!(VehicleParams::from_toml_str(&text).is_err());
    }
}
