use serde::{Deserialize, Serialize};

use super::{FitBundle, VehicleParams};
use crate::charge::ChargeTables;
use crate::error::{Error, Result};

/// Physical parameters together with the fitted surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleModel {
    pub params: VehicleParams,
    pub fits: FitBundle,
}

impl VehicleModel {
    pub fn new(params: VehicleParams, fits: FitBundle) -> Result<Self> {
        params.validate()?;
        fits.validate()?;
        Ok(VehicleModel { params, fits })
    }
}

/// One stint request with its boundary values resolved from the charge tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintSpec {
    pub n_laps: usize,
    pub t_charge: f64,
    pub is_final: bool,
    /// Lower bound on `E_b(S)`.
    pub e_b_terminal: f64,
    /// Upper bound on `ϑ_b(S)`.
    pub theta_b_n: f64,
    pub theta_m_init: f64,
}

impl StintSpec {
    /// A regular stint followed by a charge of `t_charge` seconds.
    pub fn regular(
        n_laps: usize,
        t_charge: f64,
        params: &VehicleParams,
        tables: &ChargeTables,
    ) -> Result<Self> {
        if n_laps < 1 {
            return Err(Error::Argument("a stint needs at least one lap".into()));
        }
        if !(t_charge >= 0.0 && t_charge <= tables.t_charge_max * (1.0 + 1e-12)) {
            return Err(Error::Argument(format!(
                "charge time {t_charge} s outside [0, {}]",
                tables.t_charge_max
            )));
        }
        Ok(StintSpec {
            n_laps,
            t_charge,
            is_final: false,
            e_b_terminal: params.battery.e_b_0_j - tables.energy_at(t_charge),
            theta_b_n: tables.theta_b_n_at(t_charge),
            theta_m_init: tables.theta_m_init_at(t_charge),
        })
    }

    /// The last stint: no charge follows, so the battery may be emptied and
    /// no thermal margin is kept.
    pub fn final_stint(
        n_laps: usize,
        params: &VehicleParams,
        tables: &ChargeTables,
    ) -> Result<Self> {
        let mut s = Self::regular(n_laps, tables.t_charge_max, params, tables)?;
        s.is_final = true;
        s.e_b_terminal = params.battery.e_b_min_j;
        s.theta_b_n = params.thermal.theta_b_max_k;
        Ok(s)
    }

    pub fn validate(&self, params: &VehicleParams) -> Result<()> {
        if self.n_laps < 1 {
            return Err(Error::Argument("a stint needs at least one lap".into()));
        }
        if self.is_final && self.theta_b_n != params.thermal.theta_b_max_k {
            return Err(Error::Validation(
                "final stints end at the battery temperature ceiling".into(),
            ));
        }
        if !(self.e_b_terminal <= params.battery.e_b_0_j) {
            return Err(Error::Validation(
                "terminal energy bound above the initial energy".into(),
            ));
        }
        Ok(())
    }
}
