//! Checks of convex solutions against the un-relaxed models, the flat-out
//! reference strategy, and the thermal scenarios.
//!
//! The simulator marches along the same grid with the same trapezoidal rule
//! as the transcription, so any difference to the convex trajectory comes from
//! the relaxations and surrogate fits rather than from the integration scheme.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::charge::{build_charge_tables, ChargeTables, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::fitting::internal_power;
use crate::interp::trapezoid;
use crate::model::{build_stint_grid, StintSpec, TrackData, VehicleModel};
use crate::stint::{
    default_solve_options, solve_stint_on_grid, Limits, StintSolution, StintSummary,
    StintTrajectory,
};

/// Fixed-point sweeps allowed for the implicit battery update of one step.
const BATTERY_ITERS: usize = 100;

/// Open-loop inputs, one value per grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimInputs {
    pub f_m: Vec<f64>,
    pub f_brake_f: Vec<f64>,
}

impl SimInputs {
    pub fn from_trajectory(t: &StintTrajectory) -> Self {
        SimInputs {
            f_m: t.f_m.clone(),
            f_brake_f: t.f_brake_f.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimInit {
    pub e_kin: f64,
    pub e_b: f64,
    pub theta_b: f64,
    pub theta_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub e_kin: Vec<f64>,
    pub e_b: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub f_m_l: Vec<f64>,
    pub f_b: Vec<f64>,
    pub f_i: Vec<f64>,
    pub f_x_f: Vec<f64>,
    pub f_x_r: Vec<f64>,
    pub f_y_f: Vec<f64>,
    pub f_y_r: Vec<f64>,
    pub f_z_f: Vec<f64>,
    pub f_z_r: Vec<f64>,
    /// Worst friction-ellipse usage over both axles, 1 on the ellipse.
    pub friction_usage: f64,
    pub t_stint: f64,
}

/// Per-node chassis quantities in SI units.
struct Chassis {
    m: f64,
    mg: f64,
    drag_c: f64,
    down_c: f64,
    c_r: f64,
    eta: f64,
    delta: f64,
    brake_r: f64,
    l_f: f64,
    l_r: f64,
    h_g: f64,
    h_p: f64,
    l_gp: f64,
    mu: [f64; 4],
}

struct Loads {
    fx: [f64; 2],
    fy: [f64; 2],
    fz: [f64; 2],
}

impl Chassis {
    fn new(model: &VehicleModel) -> Self {
        let c = &model.params.chassis;
        Chassis {
            m: c.m_kg,
            mg: c.m_kg * c.g_mps2,
            drag_c: c.c_d * c.a_f_m2 * c.rho_kgpm3 / c.m_kg,
            down_c: c.c_l * c.a_f_m2 * c.rho_kgpm3 / c.m_kg,
            c_r: c.c_r,
            eta: model.params.drivetrain.eta_fd,
            delta: c.delta_brake,
            brake_r: (1.0 - c.delta_brake) / c.delta_brake,
            l_f: c.l_f_m,
            l_r: c.l_r_m,
            h_g: c.h_g_m,
            h_p: c.h_p_m,
            l_gp: c.l_gp_m,
            mu: [c.mu_x_f, c.mu_y_f, c.mu_x_r, c.mu_y_r],
        }
    }

    /// Rear-axle force delivered by the motor, before rolling and brakes.
    fn motor_force(&self, f_m: f64) -> f64 {
        if f_m >= 0.0 {
            self.eta * f_m
        } else {
            f_m / self.eta
        }
    }

    /// `dE/ds = c0 − β·E` for fixed inputs at a node.
    fn accel_coeffs(&self, g: &TrackData, k: usize, f_m: f64, f_brf: f64) -> (f64, f64) {
        let (th, ph) = (g.theta[k], g.phi[k]);
        let c0 = self.motor_force(f_m)
            - self.c_r * self.mg * th.cos() * ph.cos()
            - f_brf / self.delta
            - self.mg * th.sin();
        (c0, self.drag_c + self.c_r * self.down_c)
    }

    fn normal_sum(&self, g: &TrackData, k: usize, e: f64) -> f64 {
        self.down_c * e + self.mg * g.theta[k].cos() * g.phi[k].cos()
    }

    /// Axle normal forces for a given net longitudinal force `a`.
    fn fz(&self, g: &TrackData, k: usize, e: f64, a: f64) -> [f64; 2] {
        let z = self.normal_sum(g, k, e);
        let pitch = a * self.h_g
            + self.mg * g.theta[k].sin() * self.h_g
            + (self.drag_c * self.h_p + self.down_c * self.l_gp) * e;
        let rear = (pitch + z * self.l_f) / (self.l_f + self.l_r);
        [z - rear, rear]
    }

    fn fy(&self, g: &TrackData, k: usize, e: f64) -> [f64; 2] {
        let y = 2.0 * e * g.kappa[k] - self.mg * g.phi[k].sin();
        let l = self.l_f + self.l_r;
        [y * self.l_r / l, y * self.l_f / l]
    }

    fn loads(&self, g: &TrackData, k: usize, e: f64, f_m: f64, f_brf: f64) -> Loads {
        let (c0, beta) = self.accel_coeffs(g, k, f_m, f_brf);
        let a = c0 - beta * e;
        let fz = self.fz(g, k, e, a);
        Loads {
            fx: [
                -self.c_r * fz[0] - f_brf,
                self.motor_force(f_m) - self.c_r * fz[1] - self.brake_r * f_brf,
            ],
            fy: self.fy(g, k, e),
            fz,
        }
    }

    /// Longitudinal grip left on an axle after the lateral demand.
    fn long_capacity(&self, fz: f64, fy: f64, axle: usize) -> f64 {
        let (mx, my) = (self.mu[2 * axle], self.mu[2 * axle + 1]);
        if fz <= 0.0 {
            return 0.0;
        }
        let r = fy / (my * fz);
        mx * fz * (1.0 - r * r).max(0.0).sqrt()
    }

    fn usage(&self, l: &Loads) -> f64 {
        (0..2)
            .map(|i| {
                let (mx, my) = (self.mu[2 * i], self.mu[2 * i + 1]);
                (l.fx[i] / mx).hypot(l.fy[i] / my) / l.fz[i].max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

/// Un-relaxed powertrain evaluated at speed `v` and motor force `f_m`.
struct Powertrain<'a> {
    model: &'a VehicleModel,
}

impl Powertrain<'_> {
    /// `(F_m,l, F_b)`: EM loss force and battery terminal force.
    fn terminal(&self, v: f64, f_m: f64) -> (f64, f64) {
        let d = &self.model.params.drivetrain;
        let f_ml = self.model.fits.q_m_l.eval(&[v, f_m]);
        let f_ac = f_m + f_ml;
        let f_dc = f_ac + d.alpha_inv_per_w * f_ac * f_ac * v;
        (f_ml, f_dc + d.p_aux_w / v)
    }

    /// Internal battery force for a terminal force `f_b`, with the tabulated
    /// open-circuit voltage and resistance.
    fn internal(&self, v: f64, f_b: f64, e_b: f64, theta_b: f64) -> f64 {
        let p = &self.model.params;
        let p_sc = p.battery.p_sc(e_b, theta_b, p.thermal.theta_ref_k);
        let inv = if p_sc.is_finite() && p_sc > 0.0 { 1.0 / p_sc } else { 0.0 };
        internal_power(f_b * v, inv, p.battery.alpha_ch) / v
    }
}

fn check_speed(model: &VehicleModel, s: f64, v: f64) -> Result<()> {
    let floor = 0.5 * model.params.chassis.v_min_mps;
    if v.is_finite() && v >= floor {
        Ok(())
    } else {
        Err(Error::SimulationAborted {
            position: s,
            reason: format!("speed {v:.3} m/s fell below {floor:.3} m/s"),
        })
    }
}

/// Integrates the un-relaxed vehicle with open-loop node inputs.
///
/// Lethargy is exactly `1/v`, losses are evaluated as equalities, cooling is
/// Newtonian and the short-circuit power comes from the tabulated `V_oc` and
/// `R_0`. Aborts when the speed drops below half of `v_min` or the battery
/// cannot deliver the requested power.
pub fn simulate_nonlinear(
    inputs: &SimInputs,
    grid: &TrackData,
    model: &VehicleModel,
    init: SimInit,
) -> Result<SimTrajectory> {
    let n = grid.len();
    if inputs.f_m.len() != n || inputs.f_brake_f.len() != n {
        return Err(Error::Argument(format!(
            "inputs have {} and {} values for {n} nodes",
            inputs.f_m.len(),
            inputs.f_brake_f.len()
        )));
    }
    grid.check_invariants()?;
    let ch = Chassis::new(model);
    let pt = Powertrain { model };
    let th = &model.params.thermal;
    let h = grid.ds;
    let half = 0.5 * h;

    let mut out = SimTrajectory {
        s: grid.s_grid.clone(),
        v: Vec::with_capacity(n),
        e_kin: Vec::with_capacity(n),
        e_b: Vec::with_capacity(n),
        theta_b: Vec::with_capacity(n),
        theta_m: Vec::with_capacity(n),
        f_m_l: Vec::with_capacity(n),
        f_b: Vec::with_capacity(n),
        f_i: Vec::with_capacity(n),
        f_x_f: Vec::with_capacity(n),
        f_x_r: Vec::with_capacity(n),
        f_y_f: Vec::with_capacity(n),
        f_y_r: Vec::with_capacity(n),
        f_z_f: Vec::with_capacity(n),
        f_z_r: Vec::with_capacity(n),
        friction_usage: 0.0,
        t_stint: 0.0,
    };
    let push_node = |out: &mut SimTrajectory, k: usize, e: f64, st: [f64; 3], pw: [f64; 3]| {
        let l = ch.loads(grid, k, e, inputs.f_m[k], inputs.f_brake_f[k]);
        out.friction_usage = out.friction_usage.max(ch.usage(&l));
        out.v.push((2.0 * e / ch.m).sqrt());
        out.e_kin.push(e);
        out.e_b.push(st[0]);
        out.theta_b.push(st[1]);
        out.theta_m.push(st[2]);
        out.f_m_l.push(pw[0]);
        out.f_b.push(pw[1]);
        out.f_i.push(pw[2]);
        out.f_x_f.push(l.fx[0]);
        out.f_x_r.push(l.fx[1]);
        out.f_y_f.push(l.fy[0]);
        out.f_y_r.push(l.fy[1]);
        out.f_z_f.push(l.fz[0]);
        out.f_z_r.push(l.fz[1]);
    };

    let mut e = init.e_kin;
    let v0 = (2.0 * e / ch.m).sqrt();
    check_speed(model, grid.s_grid[0], v0)?;
    let (f_ml0, f_b0) = pt.terminal(v0, inputs.f_m[0]);
    let f_i0 = pt.internal(v0, f_b0, init.e_b, init.theta_b);
    if !f_i0.is_finite() {
        return Err(power_limit(grid.s_grid[0]));
    }
    push_node(
        &mut out,
        0,
        e,
        [init.e_b, init.theta_b, init.theta_m],
        [f_ml0, f_b0, f_i0],
    );

    for k in 0..n - 1 {
        let j = k + 1;
        let (c0k, bk) = ch.accel_coeffs(grid, k, inputs.f_m[k], inputs.f_brake_f[k]);
        let (c0j, bj) = ch.accel_coeffs(grid, j, inputs.f_m[j], inputs.f_brake_f[j]);
        e = (e + half * (c0k - bk * e + c0j)) / (1.0 + half * bj);
        let v = (2.0 * e.max(0.0) / ch.m).sqrt();
        check_speed(model, grid.s_grid[j], v)?;
        let (f_ml, f_b) = pt.terminal(v, inputs.f_m[j]);

        let vk = out.v[k];
        let heat_m_k = out.f_m_l[k] - th.lambda_m_wpk * (out.theta_m[k] - th.theta_m_c_k) / vk;
        let tm = (th.c_m_jpk * out.theta_m[k]
            + half * (heat_m_k + f_ml + th.lambda_m_wpk * th.theta_m_c_k / v))
            / (th.c_m_jpk + half * th.lambda_m_wpk / v);

        let heat_b_k = out.f_i[k]
            - out.f_b[k]
            - th.lambda_b_wpk * (out.theta_b[k] - th.theta_b_c_k) / vk;
        let (mut eb, mut tb) = (out.e_b[k] - h * out.f_i[k], out.theta_b[k]);
        let mut f_i = out.f_i[k];
        let mut converged = false;
        for _ in 0..BATTERY_ITERS {
            f_i = pt.internal(v, f_b, eb, tb);
            if !f_i.is_finite() {
                return Err(power_limit(grid.s_grid[j]));
            }
            let eb_new = out.e_b[k] - half * (out.f_i[k] + f_i);
            let tb_new = (th.c_b_jpk * out.theta_b[k]
                + half * (heat_b_k + f_i - f_b + th.lambda_b_wpk * th.theta_b_c_k / v))
                / (th.c_b_jpk + half * th.lambda_b_wpk / v);
            let moved = (eb_new - eb).abs() <= 1e-12 * eb.abs().max(1.0)
                && (tb_new - tb).abs() <= 1e-12 * tb.abs();
            eb = eb_new;
            tb = tb_new;
            if moved {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Integration(format!(
                "battery update did not settle at s = {:.1} m",
                grid.s_grid[j]
            )));
        }
        push_node(&mut out, j, e, [eb, tb, tm], [f_ml, f_b, f_i]);
    }
    let leth: Vec<f64> = out.v.iter().map(|v| 1.0 / v).collect();
    out.t_stint = trapezoid(&grid.steps(), &leth);
    Ok(out)
}

fn power_limit(s: f64) -> Error {
    Error::SimulationAborted {
        position: s,
        reason: "requested power exceeds what the battery can deliver".into(),
    }
}

/// Nonlinear against convex end states. Drifts are nonlinear minus convex;
/// a negative energy drift means the real car ends with less energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub n_nodes: usize,
    /// Energy the stint is allowed to use, `E_b(0) − E_b,terminal`.
    pub e_b_charged: f64,
    pub e_b_end_convex: f64,
    pub e_b_end_sim: f64,
    /// `(E_b^sim(S) − E_b^cvx(S)) / e_b_charged`
    pub energy_drift: f64,
    pub theta_b_end_convex: f64,
    pub theta_b_end_sim: f64,
    pub theta_b_drift: f64,
    pub theta_m_end_convex: f64,
    pub theta_m_end_sim: f64,
    pub theta_m_drift: f64,
    pub max_abs_theta_b_dev: f64,
    pub max_abs_theta_m_dev: f64,
    pub t_stint_convex: f64,
    pub t_stint_sim: f64,
    pub t_stint_rel_error: f64,
    /// Worst friction-ellipse overshoot, `max(usage − 1, 0)`.
    pub friction_violation: f64,
    /// `|E_b(0) − E_b(S) − ∫F_i ds|` relative to the energy used.
    pub bookkeeping_error: f64,
}

impl DriftReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub report: DriftReport,
    pub sim: SimTrajectory,
    pub convex: StintTrajectory,
}

impl Comparison {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "s",
            "v_convex",
            "v_sim",
            "e_b_convex",
            "e_b_sim",
            "theta_b_convex",
            "theta_b_sim",
            "theta_m_convex",
            "theta_m_sim",
        ])?;
        let (c, s) = (&self.convex, &self.sim);
        for k in 0..s.s.len() {
            w.write_record(
                [
                    s.s[k],
                    c.v[k],
                    s.v[k],
                    c.e_b[k],
                    s.e_b[k],
                    c.theta_b[k],
                    s.theta_b[k],
                    c.theta_m[k],
                    s.theta_m[k],
                ]
                .iter()
                .map(|x| format!("{x:?}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replays the inputs of a convex trajectory through the simulator.
pub fn compare_trajectory(
    convex: &StintTrajectory,
    grid: &TrackData,
    model: &VehicleModel,
    e_b_charged: f64,
) -> Result<Comparison> {
    if convex.len() != grid.len() {
        return Err(Error::Argument(format!(
            "trajectory has {} nodes, grid has {}",
            convex.len(),
            grid.len()
        )));
    }
    if !(e_b_charged > 0.0) {
        return Err(Error::Argument("charged energy must be positive".into()));
    }
    let init = SimInit {
        e_kin: convex.e_kin[0],
        e_b: convex.e_b[0],
        theta_b: convex.theta_b[0],
        theta_m: convex.theta_m[0],
    };
    let sim = simulate_nonlinear(&SimInputs::from_trajectory(convex), grid, model, init)?;
    let last = grid.len() - 1;
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let t_cvx = trapezoid(&grid.steps(), &convex.lethargy);
    let used = sim.e_b[0] - sim.e_b[last];
    let integral = trapezoid(&grid.steps(), &sim.f_i);
    let report = DriftReport {
        n_nodes: grid.len(),
        e_b_charged,
        e_b_end_convex: convex.e_b[last],
        e_b_end_sim: sim.e_b[last],
        energy_drift: (sim.e_b[last] - convex.e_b[last]) / e_b_charged,
        theta_b_end_convex: convex.theta_b[last],
        theta_b_end_sim: sim.theta_b[last],
        theta_b_drift: sim.theta_b[last] - convex.theta_b[last],
        theta_m_end_convex: convex.theta_m[last],
        theta_m_end_sim: sim.theta_m[last],
        theta_m_drift: sim.theta_m[last] - convex.theta_m[last],
        max_abs_theta_b_dev: dev(&sim.theta_b, &convex.theta_b),
        max_abs_theta_m_dev: dev(&sim.theta_m, &convex.theta_m),
        t_stint_convex: t_cvx,
        t_stint_sim: sim.t_stint,
        t_stint_rel_error: (sim.t_stint - t_cvx) / t_cvx,
        friction_violation: (sim.friction_usage - 1.0).max(0.0),
        bookkeeping_error: (used - integral).abs() / used.abs().max(f64::MIN_POSITIVE),
    };
    Ok(Comparison {
        report,
        sim,
        convex: convex.clone(),
    })
}

/// [`compare_trajectory`] for a solved stint, normalising by the energy its
/// terminal bound allows it to use.
pub fn simulate_stint(
    sol: &StintSolution,
    grid: &TrackData,
    model: &VehicleModel,
) -> Result<Comparison> {
    let charged = model.params.battery.e_b_0_j - sol.spec.e_b_terminal;
    compare_trajectory(&sol.traj, grid, model, charged)
}

/// Reads a trajectory CSV as written by [`StintTrajectory::write_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<StintTrajectory> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = StintTrajectory::COLUMNS
        .iter()
        .map(|c| {
            header.iter().position(|h| h == *c).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {c}"),
            })
        })
        .collect::<Result<_>>()?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, &i) in idx.iter().enumerate() {
            let v: f64 = rec.get(i).unwrap_or("").trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                message: format!("bad number in column {}", StintTrajectory::COLUMNS[c]),
            })?;
            cols[c].push(v);
        }
    }
    let mut it = cols.into_iter();
    let mut next = || it.next().expect("column count");
    Ok(StintTrajectory {
        s: next(),
        v: next(),
        lethargy: next(),
        e_kin: next(),
        e_b: next(),
        theta_b: next(),
        theta_m: next(),
        f_m: next(),
        f_ac: next(),
        f_dc: next(),
        f_b: next(),
        f_i: next(),
        f_b_l: next(),
        f_sc: next(),
        f_m_c: next(),
        f_b_c: next(),
        f_brake_f: next(),
        f_brake_r: next(),
        f_x_f: next(),
        f_x_r: next(),
        f_y_f: next(),
        f_y_r: next(),
        f_z_f: next(),
        f_z_r: next(),
    })
}

/// Maximum-performance run over one stint grid with no energy management.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatOutRun {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    /// Elapsed time at each node.
    pub t: Vec<f64>,
    pub e_b: Vec<f64>,
    pub t_stint: f64,
}

impl FlatOutRun {
    pub fn e_b_end(&self) -> f64 {
        *self.e_b.last().expect("nonempty run")
    }
}

/// Largest kinetic energy at which the lateral demand at node `k` still fits
/// inside both friction ellipses, found by bisection.
fn cornering_limit(ch: &Chassis, g: &TrackData, k: usize, e_top: f64) -> f64 {
    let ok = |e: f64| {
        let fz = ch.fz(g, k, e, 0.0);
        let fy = ch.fy(g, k, e);
        (0..2).all(|i| fz[i] > 0.0 && fy[i].abs() <= ch.mu[2 * i + 1] * fz[i])
    };
    if ok(e_top) {
        return e_top;
    }
    let (mut lo, mut hi) = (0.0, e_top);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Forward-backward speed profile at full power and full grip, then the
/// battery drain of that profile under the un-relaxed powertrain. Motor
/// braking recovers energy up to the motor limits; the rest is friction
/// braking. Temperatures are not tracked.
pub fn flat_out_run(grid: &TrackData, model: &VehicleModel, e_b0: f64) -> Result<FlatOutRun> {
    grid.check_invariants()?;
    let ch = Chassis::new(model);
    let pt = Powertrain { model };
    let prm = &model.params;
    let n = grid.len();
    let h = grid.ds;
    let e_min = 0.5 * ch.m * prm.chassis.v_min_mps.powi(2);
    let e_pit = 0.5 * ch.m * prm.chassis.v_pit_max_mps.powi(2);
    let e_top = 0.5 * ch.m * 150.0f64.powi(2);
    let f_max = prm.max_em_force();
    let p_max = prm.drivetrain.p_m_max_w;

    let mut lim: Vec<f64> = (0..n).map(|k| cornering_limit(&ch, grid, k, e_top)).collect();
    for k in 0..n {
        if grid.pit_mask[k] {
            lim[k] = lim[k].min(e_pit);
        }
    }
    lim[0] = e_min;
    lim[n - 1] = e_min;

    // the load transfer depends on the force it limits; a few sweeps settle it
    let settle = |k: usize, e: f64, force: &dyn Fn([f64; 2], [f64; 2]) -> f64| -> f64 {
        let fy = ch.fy(grid, k, e);
        let mut a = 0.0;
        for _ in 0..4 {
            a = force(ch.fz(grid, k, e, a), fy);
        }
        a
    };
    let mut e = lim.clone();
    for k in 0..n - 1 {
        let ek = e[k];
        let v = (2.0 * ek / ch.m).sqrt();
        let f_lim = f_max.min(p_max / v);
        let resist = ch.drag_c * ek + ch.mg * grid.theta[k].sin();
        let a = settle(k, ek, &|fz, fy| {
            let rear = (ch.eta * f_lim - ch.c_r * fz[1]).min(ch.long_capacity(fz[1], fy[1], 1));
            rear - ch.c_r * fz[0] - resist
        });
        e[k + 1] = e[k + 1].min(ek + h * a.max(0.0));
    }
    for k in (0..n - 1).rev() {
        let ej = e[k + 1];
        let resist = ch.drag_c * ej + ch.mg * grid.theta[k + 1].sin();
        let b = settle(k + 1, ej, &|fz, fy| {
            let grip = ch.long_capacity(fz[0], fy[0], 0) + ch.long_capacity(fz[1], fy[1], 1);
            -(grip + resist)
        });
        e[k] = e[k].min(ej - h * b.min(0.0));
    }

    let mut e_b = vec![e_b0];
    let mut t = vec![0.0];
    let v: Vec<f64> = e.iter().map(|x| (2.0 * x / ch.m).sqrt()).collect();
    for k in 0..n - 1 {
        let em = 0.5 * (e[k] + e[k + 1]);
        let vm = (2.0 * em / ch.m).sqrt();
        let (th, ph) = (
            0.5 * (grid.theta[k] + grid.theta[k + 1]),
            0.5 * (grid.phi[k] + grid.phi[k + 1]),
        );
        // total tyre force needed on top of rolling resistance
        let need = (e[k + 1] - e[k]) / h
            + ch.drag_c * em
            + ch.mg * th.sin()
            + ch.c_r * (ch.down_c * em + ch.mg * th.cos() * ph.cos());
        let f_m = if need >= 0.0 {
            need / ch.eta
        } else {
            (ch.eta * need).max(-f_max.min(p_max / vm))
        };
        let (_, f_b) = pt.terminal(vm, f_m);
        let f_i = pt.internal(vm, f_b, *e_b.last().unwrap(), prm.thermal.theta_ref_k);
        if !f_i.is_finite() {
            return Err(power_limit(grid.s_grid[k]));
        }
        e_b.push(e_b[k] - h * f_i);
        t.push(t[k] + 0.5 * h * (1.0 / v[k] + 1.0 / v[k + 1]));
    }
    Ok(FlatOutRun {
        s: grid.s_grid.clone(),
        t_stint: *t.last().unwrap(),
        v,
        t,
        e_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStint {
    pub index: usize,
    /// Fractional only for a final stint cut short by the flag.
    pub n_laps: f64,
    pub t_start: f64,
    pub t_stint: f64,
    /// Zero after the last stint.
    pub t_charge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub t_race: f64,
    /// Laps per full stint: the most the battery allows at full power.
    pub stint_laps: usize,
    pub t_stint: f64,
    pub t_charge: f64,
    pub e_b_used: f64,
    pub total_laps: f64,
    pub stints: Vec<BaselineStint>,
}

impl Baseline {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Laps completed `dt` seconds into a run, counted from the end of pit-out.
fn laps_after(run: &FlatOutRun, grid: &TrackData, dt: f64, n_laps: usize) -> f64 {
    let s = crate::interp::interp_clamped(&run.t, &run.s, dt);
    ((s - grid.lap_start) / grid.lap_length).clamp(0.0, n_laps as f64)
}

/// Flat-out strategy: each stint runs at full power until one more lap would
/// drain the battery below `E_b,min`, then the car charges back to full.
/// The last stint ends wherever the car is when time runs out.
pub fn flat_out_baseline(
    track: &TrackData,
    model: &VehicleModel,
    tables: &ChargeTables,
    t_race: f64,
) -> Result<Baseline> {
    if !(t_race > 0.0) {
        return Err(Error::Argument("race duration must be positive".into()));
    }
    let bat = &model.params.battery;
    let mut best: Option<(usize, FlatOutRun, TrackData)> = None;
    for n in 1.. {
        let grid = build_stint_grid(track, n)?;
        let run = flat_out_run(&grid, model, bat.e_b_0_j)?;
        if run.e_b.iter().any(|&e| e < bat.e_b_min_j) {
            break;
        }
        best = Some((n, run, grid));
    }
    let (n, run, grid) = best.ok_or_else(|| {
        Error::Infeasible("one flat-out lap already drains the battery below its floor".into())
    })?;
    let used = bat.e_b_0_j - run.e_b_end();
    let t_charge = tables.time_for_energy(used).ok_or_else(|| {
        Error::Validation(format!("no charge time in the tables restores {used:.0} J"))
    })?;

    let mut stints = Vec::new();
    let mut t = 0.0;
    let mut laps = 0.0;
    while t < t_race {
        let left = t_race - t;
        let index = stints.len();
        if run.t_stint <= left {
            laps += n as f64;
            stints.push(BaselineStint {
                index,
                n_laps: n as f64,
                t_start: t,
                t_stint: run.t_stint,
                t_charge,
            });
            t += run.t_stint + t_charge;
        } else {
            let part = laps_after(&run, &grid, left, n);
            laps += part;
            stints.push(BaselineStint {
                index,
                n_laps: part,
                t_start: t,
                t_stint: left,
                t_charge: 0.0,
            });
            break;
        }
    }
    if let Some(last) = stints.last_mut() {
        last.t_charge = 0.0;
    }
    Ok(Baseline {
        t_race,
        stint_laps: n,
        t_stint: run.t_stint,
        t_charge,
        e_b_used: used,
        total_laps: laps,
        stints,
    })
}

/// The model with battery cooling divided by `factor`.
pub fn with_weaker_battery_cooling(model: &VehicleModel, factor: f64) -> Result<VehicleModel> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Argument(format!("cooling factor must be positive, got {factor}")));
    }
    let mut m = model.clone();
    m.params.thermal.lambda_b_wpk /= factor;
    m.params.validate()?;
    Ok(m)
}

/// Stint solved with weakened battery cooling, plus the shape checks on its
/// battery temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryLimitedReport {
    pub factor: f64,
    pub summary: StintSummary,
    /// Largest rise of `ϑ_b` between consecutive nodes after the first.
    pub max_rise: f64,
    /// `ϑ_b,N − ϑ_b(S)`, zero when the terminal bound is met with equality.
    pub terminal_slack: f64,
    pub terminal_active: bool,
    pub gradually_decreasing: bool,
    pub valid: bool,
    #[serde(skip)]
    pub solution: Option<StintSolution>,
}

/// Rise allowed between nodes before `ϑ_b` stops counting as decreasing.
pub const MONOTONE_TOL_K: f64 = 0.1;

/// Solves a stint with battery cooling divided by `factor` and checks that
/// the battery temperature falls steadily onto its terminal bound. The charge
/// tables are rebuilt for the weaker cooling.
pub fn battery_limited_scenario(
    model: &VehicleModel,
    track: &TrackData,
    n_laps: usize,
    t_charge: f64,
    factor: f64,
) -> Result<BatteryLimitedReport> {
    let weak = with_weaker_battery_cooling(model, factor)?;
    let tables = build_charge_tables(&weak.params, weak.fits.alpha_ch, DEFAULT_DT)?;
    let spec = StintSpec::regular(n_laps, t_charge, &weak.params, &tables)?;
    let grid = build_stint_grid(track, n_laps)?;
    let sol = solve_stint_on_grid(&spec, &grid, &weak, Limits::default(), &default_solve_options())?;
    if !sol.trusted {
        return Err(Error::Solver {
            status: sol.status,
            context: format!("battery-limited stint with cooling / {factor}"),
        });
    }
    let tb = &sol.traj.theta_b;
    let max_rise = tb[1..]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = spec.theta_b_n - tb[tb.len() - 1];
    let active = slack.abs() < 1e-6 * weak.params.thermal.theta_b_max_k;
    let decreasing = max_rise <= MONOTONE_TOL_K;
    Ok(BatteryLimitedReport {
        factor,
        summary: sol.summary(),
        max_rise,
        terminal_slack: slack,
        terminal_active: active,
        gradually_decreasing: decreasing,
        valid: sol.is_valid(),
        solution: Some(sol),
    })
}

/// A stint whose only binding limits are thermal: weak battery cooling and no
/// energy floor. The optimum then wants to spend time rather than distance on
/// cooling, which the lethargy relaxation allows and the tightness check
/// should catch.
pub fn thermally_dominated_stint(
    model: &VehicleModel,
    track: &TrackData,
    tables: &ChargeTables,
    n_laps: usize,
    factor: f64,
) -> Result<StintSolution> {
    let weak = with_weaker_battery_cooling(model, factor)?;
    let spec = StintSpec::regular(n_laps, tables.t_charge_max, &weak.params, tables)?;
    let grid = build_stint_grid(track, n_laps)?;
    let limits = Limits {
        thermal_ceilings: true,
        energy_floor: false,
    };
    solve_stint_on_grid(&spec, &grid, &weak, limits, &default_solve_options())
}
