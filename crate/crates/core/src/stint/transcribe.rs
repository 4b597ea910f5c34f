use crate::conic::{Affine, ConicProgram};
use crate::error::{Error, Result};
use crate::fitting::QuadFormFit;
use crate::model::{StintSpec, TrackData, VehicleModel};

/// Decision variables of one grid node, in solver units.
///
/// `Lam` is `10·dt/ds` [s/m], `V` is `v/10` [m/s], energies are in MJ,
/// temperatures are `(ϑ − ϑ_coolant)/100` [K] and forces are in kN. The rear
/// brake force and the auxiliary terms are eliminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Var {
    Lam,
    V,
    Ek,
    Eb,
    Tb,
    Tm,
    Fm,
    Fac,
    Fdc,
    Fb,
    Fi,
    Fbl,
    Fsc,
    Fmc,
    Fbc,
    FbrF,
    FxF,
    FxR,
    FyF,
    FyR,
    FzF,
    FzR,
}

pub const VARS_PER_NODE: usize = 22;

pub const LAM_SCALE: f64 = 0.1;
pub const V_SCALE: f64 = 10.0;
pub const E_SCALE: f64 = 1e6;
pub const T_SCALE: f64 = 100.0;
pub const F_SCALE: f64 = 1e3;

/// Column of `var` at node `k`.
pub fn col(k: usize, var: Var) -> usize {
    k * VARS_PER_NODE + var as usize
}

/// Which optional limits to impose. Both default to on; switching them off
/// is used for sensitivity studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// `ϑ_m ≤ ϑ_m,max`, `ϑ_b ≤ ϑ_b,max` and the terminal battery temperature.
    pub thermal_ceilings: bool,
    /// `E_b ≥ E_b,min` and the terminal energy bound.
    pub energy_floor: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            thermal_ceilings: true,
            energy_floor: true,
        }
    }
}

/// Rotated cone `a·b ≥ ‖z‖²`, rescaled to `(a/s)·(b·s)` so the two sides
/// have comparable magnitude inside the solver.
fn rotated(p: &mut ConicProgram, a: Affine, b: Affine, z: Vec<Affine>, s: f64) -> Result<()> {
    p.add_rotated_cone_affine(a * (1.0 / s), b * s, z)?;
    Ok(())
}

/// `Lᵀ·x` for a fitted form, with `x` given as affine expressions.
fn factor_times(fit: &QuadFormFit, x: &[Affine]) -> Vec<Affine> {
    fit.factor_rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(x)
                .fold(Affine::zero(), |acc, (&c, xi)| acc + xi.clone() * c)
                .compact()
        })
        .collect()
}

fn check_inputs(spec: &StintSpec, grid: &TrackData, model: &VehicleModel) -> Result<()> {
    spec.validate(&model.params)?;
    match grid.n_laps {
        Some(n) if n == spec.n_laps => {}
        other => {
            return Err(Error::Argument(format!(
                "grid is laid out for {other:?} laps, stint asks for {}",
                spec.n_laps
            )))
        }
    }
    grid.check_invariants()?;
    let f = &model.fits;
    for (name, fit, dim) in [
        ("q_m_l", &f.q_m_l, 3),
        ("q_m_theta", &f.q_m_theta, 2),
        ("q_b_l", &f.q_b_l, 3),
        ("q_b_theta", &f.q_b_theta, 2),
    ] {
        if fit.dim() != dim {
            return Err(Error::Config(format!("{name} must be {dim}x{dim}")));
        }
    }
    Ok(())
}

/// Builds the minimum-stint-time program on `grid`.
///
/// Dynamics use the trapezoidal rule on node values; the objective is the
/// trapezoidal integral of the lethargy in seconds.
pub fn transcribe_stint(
    spec: &StintSpec,
    grid: &TrackData,
    model: &VehicleModel,
    limits: Limits,
) -> Result<ConicProgram> {
    check_inputs(spec, grid, model)?;
    let prm = &model.params;
    let fits = &model.fits;
    let ch = &prm.chassis;
    let dr = &prm.drivetrain;
    let th = &prm.thermal;
    let bat = &prm.battery;
    let n = grid.len();
    let h = grid.ds;
    let m = ch.m_kg;
    let mg = m * ch.g_mps2;
    let kmg = mg / F_SCALE;

    let mut p = ConicProgram::new();
    let names = [
        "lam", "v", "ek", "eb", "tb", "tm", "fm", "fac", "fdc", "fb", "fi", "fbl", "fsc", "fmc",
        "fbc", "fbrf", "fxf", "fxr", "fyf", "fyr", "fzf", "fzr",
    ];
    let f_max = prm.max_em_force() / F_SCALE;
    let tb_max = (th.theta_b_max_k - th.theta_b_c_k) / T_SCALE;
    let tm_max = (th.theta_m_max_k - th.theta_m_c_k) / T_SCALE;
    for k in 0..n {
        for name in names {
            p.add_var(format!("{name}[{k}]"));
        }
        let inf = f64::INFINITY;
        for v in [Var::Lam, Var::V, Var::Ek, Var::Fbl, Var::Fsc, Var::Fmc, Var::Fbc, Var::FbrF] {
            p.set_bounds(col(k, v), 0.0, inf);
        }
        p.set_bounds(col(k, Var::Fm), -f_max, f_max);
        let eb_lo = if limits.energy_floor {
            bat.e_b_min_j / E_SCALE
        } else {
            -inf
        };
        p.set_bounds(col(k, Var::Eb), eb_lo, bat.e_b_max_j / E_SCALE);
        if limits.thermal_ceilings {
            p.set_bounds(col(k, Var::Tb), -inf, tb_max);
            p.set_bounds(col(k, Var::Tm), -inf, tm_max);
        }
    }

    // boundary values
    let ek_min = 0.5 * m * ch.v_min_mps.powi(2) / E_SCALE;
    let ek_pit = 0.5 * m * ch.v_pit_max_mps.powi(2) / E_SCALE;
    p.fix(col(0, Var::Ek), ek_min);
    p.fix(col(n - 1, Var::Ek), ek_min);
    for k in 0..n {
        if grid.pit_mask[k] && k != 0 && k != n - 1 {
            p.set_bounds(col(k, Var::Ek), 0.0, ek_pit);
        }
    }
    p.fix(col(0, Var::Eb), bat.e_b_0_j / E_SCALE);
    p.fix(col(0, Var::Tb), tb_max);
    p.fix(col(0, Var::Tm), (spec.theta_m_init - th.theta_m_c_k) / T_SCALE);
    if limits.thermal_ceilings {
        let last = col(n - 1, Var::Tb);
        let ub = ((spec.theta_b_n - th.theta_b_c_k) / T_SCALE).min(tb_max);
        p.set_bounds(last, f64::NEG_INFINITY, ub);
    }
    if limits.energy_floor {
        let last = col(n - 1, Var::Eb);
        let lb = (spec.e_b_terminal / E_SCALE).max(p.lower[last]);
        p.set_bounds(last, lb, bat.e_b_max_j / E_SCALE);
    }

    let x = |k: usize, v: Var| Affine::var(col(k, v));
    let xs = |k: usize, v: Var, c: f64| Affine::term(col(k, v), c);

    // aero per MJ of kinetic energy, in kN
    let drag_c = ch.c_d * ch.a_f_m2 * ch.rho_kgpm3 / m * E_SCALE / F_SCALE;
    let down_c = ch.c_l * ch.a_f_m2 * ch.rho_kgpm3 / m * E_SCALE / F_SCALE;
    let brake_r = (1.0 - ch.delta_brake) / ch.delta_brake;
    // net longitudinal force [kN] at node k
    let accel = |k: usize| -> Affine {
        x(k, Var::FxF) + x(k, Var::FxR) + xs(k, Var::Ek, -drag_c)
            + Affine::constant(-kmg * grid.theta[k].sin())
    };

    let q_ml = &fits.q_m_l;
    let q_mt = &fits.q_m_theta;
    let q_bl = &fits.q_b_l;
    let q_bt = &fits.q_b_theta;
    let em_cool_off = q_mt.offset - th.theta_m_c_k;
    let bat_cool_off = q_bt.offset - th.theta_b_c_k;
    let p_sc0 = q_bl.offset;
    let v_ref: f64 = 30.0;

    for k in 0..n {
        let (kap, theta, phi) = (grid.kappa[k], grid.theta[k], grid.phi[k]);

        // lethargy: (dt/ds)·v ≥ 1
        rotated(&mut p, x(k, Var::Lam), x(k, Var::V), vec![Affine::constant(1.0)], 1.0)?;
        // kinetic energy: E ≥ ½ m v²
        rotated(
            &mut p,
            xs(k, Var::Ek, 2.0 * E_SCALE / (m * V_SCALE * V_SCALE)),
            Affine::constant(1.0),
            vec![x(k, Var::V)],
            3.0,
        )?;

        // axles
        p.add_eq(
            x(k, Var::FxF) + xs(k, Var::FzF, ch.c_r) + x(k, Var::FbrF),
        )?;
        let rear_rest = xs(k, Var::FzR, -ch.c_r) + xs(k, Var::FbrF, -brake_r);
        p.add_le2(
            x(k, Var::FxR),
            xs(k, Var::Fm, dr.eta_fd) + rear_rest.clone(),
        )?;
        p.add_le2(x(k, Var::FxR), xs(k, Var::Fm, 1.0 / dr.eta_fd) + rear_rest)?;
        p.add_eq(
            xs(k, Var::Ek, 2.0 * E_SCALE / F_SCALE * kap)
                - x(k, Var::FyF)
                - x(k, Var::FyR)
                - Affine::constant(kmg * phi.sin()),
        )?;
        p.add_eq(
            x(k, Var::FzF) + x(k, Var::FzR)
                - xs(k, Var::Ek, down_c)
                - Affine::constant(kmg * theta.cos() * phi.cos()),
        )?;
        p.add_eq(xs(k, Var::FyF, ch.l_f_m) - xs(k, Var::FyR, ch.l_r_m))?;
        // pitch: (dE/ds)·h_G = F_zR l_R − F_zF l_F − m g sinθ h_G − F_drag h_P − F_down l_GP
        p.add_eq(
            accel(k) * ch.h_g_m - xs(k, Var::FzR, ch.l_r_m)
                + xs(k, Var::FzF, ch.l_f_m)
                + Affine::constant(kmg * theta.sin() * ch.h_g_m)
                + xs(k, Var::Ek, drag_c * ch.h_p_m + down_c * ch.l_gp_m),
        )?;
        p.add_friction_cone(
            col(k, Var::FxF),
            col(k, Var::FyF),
            col(k, Var::FzF),
            ch.mu_x_f,
            ch.mu_y_f,
        )?;
        p.add_friction_cone_affine(
            x(k, Var::FxR),
            x(k, Var::FyR),
            x(k, Var::FzR),
            ch.mu_x_r,
            ch.mu_y_r,
        )?;

        // EM power region: |F_m| ≤ P_max·dt/ds
        let p_lim = dr.p_m_max_w / F_SCALE * LAM_SCALE;
        p.add_le2(x(k, Var::Fm), xs(k, Var::Lam, p_lim))?;
        p.add_le2(xs(k, Var::Fm, -1.0), xs(k, Var::Lam, p_lim))?;

        // EM losses: (F_ac − F_m)·v ≥ yᵀ Q y, y = [1, v, F_m] in SI
        let y_m = [
            Affine::constant(1.0),
            xs(k, Var::V, V_SCALE),
            xs(k, Var::Fm, F_SCALE),
        ];
        rotated(
            &mut p,
            (x(k, Var::Fac) - x(k, Var::Fm)) * F_SCALE,
            xs(k, Var::V, V_SCALE),
            factor_times(q_ml, &y_m),
            (300.0 / v_ref).sqrt(),
        )?;

        // EM cooling: (−F̄_m,c)·v ≥ −x_ϑᵀ Q x_ϑ with
        // F̄_m,c = F_m,c/λ_m − (ϑ_m,0 − ϑ_m,c)·dt/ds
        let neg_fbar_m = xs(k, Var::Lam, em_cool_off * LAM_SCALE)
            + xs(k, Var::Fmc, -F_SCALE / th.lambda_m_wpk);
        let x_m = [
            Affine::constant(1.0),
            xs(k, Var::Tm, T_SCALE).with_constant(th.theta_m_c_k),
        ];
        rotated(
            &mut p,
            neg_fbar_m,
            xs(k, Var::V, V_SCALE),
            factor_times(q_mt, &x_m),
            (em_cool_off / (v_ref * v_ref)).sqrt(),
        )?;

        // inverter: (F_dc − F_ac)·dt/ds ≥ α_inv·F_ac²
        let alpha = fits.alpha_inv;
        if alpha > 0.0 {
            // in SI: 100·(fdc − fac)·lam ≥ α·10⁶·fac²
            rotated(
                &mut p,
                x(k, Var::Fdc) - x(k, Var::Fac),
                x(k, Var::Lam),
                vec![xs(k, Var::Fac, (alpha * F_SCALE * F_SCALE / (F_SCALE * LAM_SCALE)).sqrt())],
                0.1,
            )?;
        } else {
            p.add_ge2(x(k, Var::Fdc), x(k, Var::Fac))?;
        }
        // auxiliaries
        p.add_eq(
            x(k, Var::Fb) - x(k, Var::Fdc) - xs(k, Var::Lam, dr.p_aux_w / F_SCALE * LAM_SCALE),
        )?;

        // short-circuit force: F_sc = F̄_sc + P_sc,0·dt/ds, F̄_sc·v ≤ xᵀ Q x
        let neg_fbar_sc = xs(k, Var::Lam, p_sc0 * LAM_SCALE) + xs(k, Var::Fsc, -F_SCALE);
        let x_b = [
            Affine::constant(1.0),
            xs(k, Var::Eb, E_SCALE),
            xs(k, Var::Tb, T_SCALE).with_constant(th.theta_b_c_k),
        ];
        rotated(
            &mut p,
            neg_fbar_sc,
            xs(k, Var::V, V_SCALE),
            factor_times(q_bl, &x_b),
            (0.15 * p_sc0 / (v_ref * v_ref)).sqrt(),
        )?;
        // battery losses: F_b,l·F_sc ≥ F_i²
        rotated(
            &mut p,
            x(k, Var::Fbl),
            x(k, Var::Fsc),
            vec![x(k, Var::Fi)],
            0.03,
        )?;
        p.add_ge2(x(k, Var::Fi), x(k, Var::Fb) + x(k, Var::Fbl))?;
        p.add_ge2(
            x(k, Var::Fi),
            xs(k, Var::Fb, 1.0 - fits.alpha_ch) + x(k, Var::Fbl),
        )?;

        // battery cooling
        let neg_fbar_b = xs(k, Var::Lam, bat_cool_off * LAM_SCALE)
            + xs(k, Var::Fbc, -F_SCALE / th.lambda_b_wpk);
        let x_bt = [
            Affine::constant(1.0),
            xs(k, Var::Tb, T_SCALE).with_constant(th.theta_b_c_k),
        ];
        rotated(
            &mut p,
            neg_fbar_b,
            xs(k, Var::V, V_SCALE),
            factor_times(q_bt, &x_bt),
            (bat_cool_off / (v_ref * v_ref)).sqrt(),
        )?;
    }

    // trapezoidal dynamics
    let half = 0.5 * h;
    for k in 0..n - 1 {
        let j = k + 1;
        p.add_eq(
            x(j, Var::Ek) - x(k, Var::Ek) - (accel(k) + accel(j)) * (half * F_SCALE / E_SCALE),
        )?;
        let heat_m = |i: usize| x(i, Var::Fac) - x(i, Var::Fm) - x(i, Var::Fmc);
        p.add_eq(
            (x(j, Var::Tm) - x(k, Var::Tm)) * (th.c_m_jpk * T_SCALE)
                - (heat_m(k) + heat_m(j)) * (half * F_SCALE),
        )?;
        let heat_b = |i: usize| x(i, Var::Fi) - x(i, Var::Fb) - x(i, Var::Fbc);
        p.add_eq(
            (x(j, Var::Tb) - x(k, Var::Tb)) * (th.c_b_jpk * T_SCALE)
                - (heat_b(k) + heat_b(j)) * (half * F_SCALE),
        )?;
        p.add_eq(
            (x(j, Var::Eb) - x(k, Var::Eb)) * E_SCALE + (x(k, Var::Fi) + x(j, Var::Fi)) * (half * F_SCALE),
        )?;
        p.add_objective(&Affine::term(col(k, Var::Lam), half * LAM_SCALE));
        p.add_objective(&Affine::term(col(j, Var::Lam), half * LAM_SCALE));
    }
    Ok(p)
}
