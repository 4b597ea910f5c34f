//! Minimum-time control of a single stint.

mod report;
mod transcribe;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conic::{solve_with, ConicSolution, SolveOptions, SolveStatus};
use crate::error::Result;
use crate::interp::trapezoid;
use crate::model::{build_stint_grid, StintSpec, TrackData, VehicleModel};

pub use report::{tightness_report, Tightness, LETHARGY_SLACK_LIMIT};
pub use transcribe::{
    col, transcribe_stint, Limits, Var, E_SCALE, F_SCALE, LAM_SCALE, T_SCALE, VARS_PER_NODE,
    V_SCALE,
};

/// Node trajectories of a solved stint, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintTrajectory {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub lethargy: Vec<f64>,
    pub e_kin: Vec<f64>,
    pub e_b: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub f_m: Vec<f64>,
    pub f_ac: Vec<f64>,
    pub f_dc: Vec<f64>,
    pub f_b: Vec<f64>,
    pub f_i: Vec<f64>,
    pub f_b_l: Vec<f64>,
    pub f_sc: Vec<f64>,
    pub f_m_c: Vec<f64>,
    pub f_b_c: Vec<f64>,
    pub f_brake_f: Vec<f64>,
    pub f_brake_r: Vec<f64>,
    pub f_x_f: Vec<f64>,
    pub f_x_r: Vec<f64>,
    pub f_y_f: Vec<f64>,
    pub f_y_r: Vec<f64>,
    pub f_z_f: Vec<f64>,
    pub f_z_r: Vec<f64>,
}

impl StintTrajectory {
    pub const COLUMNS: [&'static str; 24] = [
        "s", "v", "lethargy", "e_kin", "e_b", "theta_b", "theta_m", "f_m", "f_ac", "f_dc", "f_b",
        "f_i", "f_b_l", "f_sc", "f_m_c", "f_b_c", "f_brake_f", "f_brake_r", "f_x_f", "f_x_r",
        "f_y_f", "f_y_r", "f_z_f", "f_z_r",
    ];

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn columns(&self) -> [&Vec<f64>; 24] {
        [
            &self.s,
            &self.v,
            &self.lethargy,
            &self.e_kin,
            &self.e_b,
            &self.theta_b,
            &self.theta_m,
            &self.f_m,
            &self.f_ac,
            &self.f_dc,
            &self.f_b,
            &self.f_i,
            &self.f_b_l,
            &self.f_sc,
            &self.f_m_c,
            &self.f_b_c,
            &self.f_brake_f,
            &self.f_brake_r,
            &self.f_x_f,
            &self.f_x_r,
            &self.f_y_f,
            &self.f_y_r,
            &self.f_z_f,
            &self.f_z_r,
        ]
    }

    fn from_solution(x: &[f64], grid: &TrackData, model: &VehicleModel) -> Self {
        let n = grid.len();
        let th = &model.params.thermal;
        let delta = model.params.chassis.delta_brake;
        let get = |v: Var, scale: f64, shift: f64| -> Vec<f64> {
            (0..n).map(|k| x[col(k, v)] * scale + shift).collect()
        };
        let f = |v: Var| get(v, F_SCALE, 0.0);
        let f_brake_f = f(Var::FbrF);
        StintTrajectory {
            s: grid.s_grid.clone(),
            v: get(Var::V, V_SCALE, 0.0),
            lethargy: get(Var::Lam, LAM_SCALE, 0.0),
            e_kin: get(Var::Ek, E_SCALE, 0.0),
            e_b: get(Var::Eb, E_SCALE, 0.0),
            theta_b: get(Var::Tb, T_SCALE, th.theta_b_c_k),
            theta_m: get(Var::Tm, T_SCALE, th.theta_m_c_k),
            f_m: f(Var::Fm),
            f_ac: f(Var::Fac),
            f_dc: f(Var::Fdc),
            f_b: f(Var::Fb),
            f_i: f(Var::Fi),
            f_b_l: f(Var::Fbl),
            f_sc: f(Var::Fsc),
            f_m_c: f(Var::Fmc),
            f_b_c: f(Var::Fbc),
            f_brake_r: f_brake_f.iter().map(|b| b * (1.0 - delta) / delta).collect(),
            f_brake_f,
            f_x_f: f(Var::FxF),
            f_x_r: f(Var::FxR),
            f_y_f: f(Var::FyF),
            f_y_r: f(Var::FyR),
            f_z_f: f(Var::FzF),
            f_z_r: f(Var::FzR),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::COLUMNS)?;
        let cols = self.columns();
        for k in 0..self.len() {
            w.write_record(cols.iter().map(|c| format!("{:?}", c[k])))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintSolution {
    pub spec: StintSpec,
    pub status: SolveStatus,
    /// False unless the solver certified optimality.
    pub trusted: bool,
    pub t_stint: f64,
    pub duality_gap: f64,
    pub solve_seconds: f64,
    pub traj: StintTrajectory,
    pub tightness: Option<Tightness>,
}

/// JSON summary written next to the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintSummary {
    pub n_laps: usize,
    pub t_charge: f64,
    pub is_final: bool,
    pub status: SolveStatus,
    pub trusted: bool,
    pub t_stint: f64,
    pub e_b_start: f64,
    pub e_b_end: f64,
    pub e_b_terminal_bound: f64,
    pub theta_b_end: f64,
    pub theta_b_end_bound: f64,
    pub theta_m_start: f64,
    pub v_start: f64,
    pub v_end: f64,
    pub tightness: Option<Tightness>,
}

impl StintSolution {
    pub fn is_valid(&self) -> bool {
        self.trusted && self.tightness.as_ref().is_some_and(|t| !t.physically_invalid)
    }

    pub fn summary(&self) -> StintSummary {
        let t = &self.traj;
        let last = t.len().saturating_sub(1);
        StintSummary {
            n_laps: self.spec.n_laps,
            t_charge: self.spec.t_charge,
            is_final: self.spec.is_final,
            status: self.status,
            trusted: self.trusted,
            t_stint: self.t_stint,
            e_b_start: t.e_b[0],
            e_b_end: t.e_b[last],
            e_b_terminal_bound: self.spec.e_b_terminal,
            theta_b_end: t.theta_b[last],
            theta_b_end_bound: self.spec.theta_b_n,
            theta_m_start: t.theta_m[0],
            v_start: t.v[0],
            v_end: t.v[last],
            tightness: self.tightness.clone(),
        }
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary())? + "\n")?;
        Ok(())
    }
}

/// Solver settings used for stints unless the caller overrides them.
///
/// The gap target is far below what the stint time needs: multipliers of the
/// loss cones at crawl speed are tiny, so a looser target leaves visible slack
/// in those relaxations.
pub fn default_solve_options() -> SolveOptions {
    SolveOptions {
        tol: 1e-11,
        feas_tol: 1e-6,
        accept_gap: Some(1e-8),
        max_iter: 300,
        verbose: false,
    }
}

/// Transcribes and solves a stint on a prepared grid.
pub fn solve_stint_on_grid(
    spec: &StintSpec,
    grid: &TrackData,
    model: &VehicleModel,
    limits: Limits,
    opts: &SolveOptions,
) -> Result<StintSolution> {
    let prog = transcribe_stint(spec, grid, model, limits)?;
    let sol: ConicSolution = solve_with(&prog, opts)?;
    let trusted = sol.is_optimal();
    if !trusted {
        log::warn!(
            "stint N={} t_c={:.1}: solver status {:?}, trajectories untrusted",
            spec.n_laps,
            spec.t_charge,
            sol.status
        );
    }
    let traj = StintTrajectory::from_solution(&sol.x, grid, model);
    let steps = grid.steps();
    let t_stint = trapezoid(&steps, &traj.lethargy);
    let tightness = trusted.then(|| tightness_report(&traj, model));
    Ok(StintSolution {
        spec: spec.clone(),
        status: sol.status,
        trusted,
        t_stint,
        duality_gap: sol.duality_gap,
        solve_seconds: sol.solve_seconds,
        traj,
        tightness,
    })
}

/// Lays out the stint grid on `track` and solves it with default settings.
pub fn solve_stint(spec: &StintSpec, track: &TrackData, model: &VehicleModel) -> Result<StintSolution> {
    let grid = build_stint_grid(track, spec.n_laps)?;
    solve_stint_on_grid(spec, &grid, model, Limits::default(), &default_solve_options())
}
