use serde::{Deserialize, Serialize};

use super::StintTrajectory;
use crate::model::VehicleModel;

/// Stints whose lethargy relaxation is looser than this are not physical.
pub const LETHARGY_SLACK_LIMIT: f64 = 1e-4;

/// Tolerance (relative to the largest axle force) for calling a row active.
const ACTIVE_TOL: f64 = 1e-5;

/// Maximum relative slack of each convex relaxation over the stint, plus
/// which branch of the piecewise constraints carried each node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tightness {
    /// `(dt/ds − 1/v) / (dt/ds)`
    pub lethargy: f64,
    /// `(E_kin − ½mv²) / E_kin`
    pub kinetic_energy: f64,
    /// EM loss force above the surrogate, over `max(F_m,l, floor)`
    pub em_loss: f64,
    /// inverter loss above `α·F_ac²·ds/dt`, same normalisation
    pub inverter: f64,
    /// battery loss above `F_i²/F_sc`, same normalisation
    pub battery_loss: f64,
    /// node of the worst lethargy slack
    pub lethargy_argmax: usize,
    pub traction_row_active: usize,
    pub regen_row_active: usize,
    pub both_rows_active: usize,
    pub discharge_branch_active: usize,
    pub charge_branch_active: usize,
    pub physically_invalid: bool,
}

pub fn tightness_report(t: &StintTrajectory, model: &VehicleModel) -> Tightness {
    let prm = &model.params;
    let fits = &model.fits;
    let m = prm.chassis.m_kg;
    let eta = prm.drivetrain.eta_fd;
    let c_r = prm.chassis.c_r;
    let n = t.len();
    // force floor: 0.1% of the EM force at full power and 30 m/s
    let floor = 1e-3 * prm.drivetrain.p_m_max_w / 30.0;

    let mut out = Tightness {
        lethargy: 0.0,
        kinetic_energy: 0.0,
        em_loss: 0.0,
        inverter: 0.0,
        battery_loss: 0.0,
        lethargy_argmax: 0,
        traction_row_active: 0,
        regen_row_active: 0,
        both_rows_active: 0,
        discharge_branch_active: 0,
        charge_branch_active: 0,
        physically_invalid: false,
    };
    let f_scale = t
        .f_z_f
        .iter()
        .chain(&t.f_z_r)
        .fold(1.0f64, |a, &b| a.max(b.abs()));
    for k in 0..n {
        let v = t.v[k].max(f64::MIN_POSITIVE);
        let lam = t.lethargy[k];
        let s_leth = if lam > 0.0 { (lam - 1.0 / v) / lam } else { 0.0 };
        if s_leth > out.lethargy {
            out.lethargy = s_leth;
            out.lethargy_argmax = k;
        }
        let ek = t.e_kin[k];
        if ek > 0.0 {
            out.kinetic_energy = out.kinetic_energy.max((ek - 0.5 * m * v * v) / ek);
        }

        let f_ml = t.f_ac[k] - t.f_m[k];
        let need_m = fits.q_m_l.eval(&[v, t.f_m[k]]);
        out.em_loss = out.em_loss.max((f_ml - need_m) / f_ml.abs().max(floor));

        let f_inv = t.f_dc[k] - t.f_ac[k];
        let need_inv = fits.alpha_inv * t.f_ac[k].powi(2) / lam.max(f64::MIN_POSITIVE);
        out.inverter = out.inverter.max((f_inv - need_inv) / f_inv.abs().max(floor));

        let need_b = if t.f_sc[k] > 0.0 {
            t.f_i[k].powi(2) / t.f_sc[k]
        } else {
            0.0
        };
        out.battery_loss = out
            .battery_loss
            .max((t.f_b_l[k] - need_b) / t.f_b_l[k].abs().max(floor));

        let rest = -c_r * t.f_z_r[k] - t.f_brake_r[k];
        let trac = (eta * t.f_m[k] + rest - t.f_x_r[k]).abs() <= ACTIVE_TOL * f_scale;
        let regen = (t.f_m[k] / eta + rest - t.f_x_r[k]).abs() <= ACTIVE_TOL * f_scale;
        match (trac, regen) {
            (true, true) => out.both_rows_active += 1,
            (true, false) => out.traction_row_active += 1,
            (false, true) => out.regen_row_active += 1,
            _ => {}
        }
        let dis = t.f_b[k] + t.f_b_l[k];
        let chg = (1.0 - fits.alpha_ch) * t.f_b[k] + t.f_b_l[k];
        if dis >= chg {
            out.discharge_branch_active += 1;
        } else {
            out.charge_branch_active += 1;
        }
    }
    out.physically_invalid = out.lethargy > LETHARGY_SLACK_LIMIT;
    out
}
