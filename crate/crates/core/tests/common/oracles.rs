//! Closed-form and generate-and-recover checks shared by the module tests
//! and the acceptance run. Each returns the measured error so callers can
//! pin their own tolerance.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pitlane_core::charge::{
    build_em_init_temp_table, build_energy_table, integrate_terminal_temperature, ChargeTables,
};
use pitlane_core::fitting::{
    fit_charge_loss_alpha, fit_inverter_alpha, fit_quadratic_form_with_offset, internal_power,
    FeatureMap, FitOptions, FitSample, Sign,
};
use pitlane_core::map::{fit_final_surface, fit_stint_surface, StintSample};
use pitlane_core::model::{build_stint_grid, StintSpec, TrackData, VehicleModel, VehicleParams};
use pitlane_core::stint::{col, transcribe_stint, Limits, StintSolution, Var, F_SCALE};
use pitlane_core::validate::{simulate_nonlinear, SimInit, SimInputs};

// ---------------------------------------------------------------------------
// physics

/// Worst trapezoid residual of the kinetic-energy, EM-temperature,
/// battery-temperature and battery-energy equations, rebuilt in SI units from
/// the trajectory and divided by `m·g·ds`.
pub fn dynamics_residual(sol: &StintSolution, grid: &TrackData, model: &VehicleModel) -> f64 {
    let ch = &model.params.chassis;
    let th = &model.params.thermal;
    let t = &sol.traj;
    let h = grid.ds;
    let mg = ch.m_kg * ch.g_mps2;
    let drag = ch.rho_kgpm3 * ch.c_d * ch.a_f_m2 / ch.m_kg;
    let acc = |k: usize| t.f_x_f[k] + t.f_x_r[k] - drag * t.e_kin[k] - mg * grid.theta[k].sin();
    let heat_m = |k: usize| t.f_ac[k] - t.f_m[k] - t.f_m_c[k];
    let heat_b = |k: usize| t.f_i[k] - t.f_b[k] - t.f_b_c[k];
    let mut worst: f64 = 0.0;
    for k in 0..t.len() - 1 {
        let j = k + 1;
        for r in [
            t.e_kin[j] - t.e_kin[k] - 0.5 * h * (acc(k) + acc(j)),
            th.c_m_jpk * (t.theta_m[j] - t.theta_m[k]) - 0.5 * h * (heat_m(k) + heat_m(j)),
            th.c_b_jpk * (t.theta_b[j] - t.theta_b[k]) - 0.5 * h * (heat_b(k) + heat_b(j)),
            t.e_b[j] - t.e_b[k] + 0.5 * h * (t.f_i[k] + t.f_i[j]),
        ] {
            worst = worst.max(r.abs() / (mg * h));
        }
    }
    worst
}

pub struct StaticLoads {
    /// Equality rows touching the axle loads of the probed node.
    pub rows: usize,
    /// Worst relative row residual at the lever-rule loads.
    pub residual: f64,
    /// Same for an even split, which must fail.
    pub even_split_residual: f64,
}

/// Probes the transcribed rows at a level straight node with the car at rest
/// and rolling resistance off, where only the lever rule
/// `F_z,f = m·g·l_R/(l_F + l_R)` remains.
pub fn static_axle_loads(model: &VehicleModel, tables: &ChargeTables, track: &TrackData) -> StaticLoads {
    let mut model = model.clone();
    model.params.chassis.c_r = 0.0;
    let spec = StintSpec::regular(1, tables.t_charge_max, &model.params, tables).unwrap();
    let grid = build_stint_grid(track, 1).unwrap();
    let prog = transcribe_stint(&spec, &grid, &model, Limits::default()).unwrap();
    let k = (1..grid.len() - 1)
        .find(|&k| grid.kappa[k] == 0.0 && grid.theta[k] == 0.0 && grid.phi[k] == 0.0)
        .expect("level straight node");
    let ch = &model.params.chassis;
    let mg = ch.m_kg * ch.g_mps2;
    let front = mg * ch.l_r_m / (ch.l_f_m + ch.l_r_m);
    let (zf, zr) = (col(k, Var::FzF), col(k, Var::FzR));
    let probe = |fzf: f64, fzr: f64| -> (usize, f64) {
        let mut x = vec![0.0; prog.n_vars()];
        x[zf] = fzf / F_SCALE;
        x[zr] = fzr / F_SCALE;
        let mut rows = 0;
        let mut worst: f64 = 0.0;
        for row in &prog.eq_constraints {
            if row.coefs.iter().any(|&(i, _)| i == zf || i == zr) {
                rows += 1;
                let scale = row.coefs.iter().map(|&(i, a)| (a * x[i]).abs()).sum::<f64>()
                    + row.rhs.abs();
                worst = worst.max((row.lhs(&x) - row.rhs).abs() / scale);
            }
        }
        (rows, worst)
    };
    let (rows, residual) = probe(front, mg - front);
    StaticLoads {
        rows,
        residual,
        even_split_residual: probe(0.5 * mg, 0.5 * mg).1,
    }
}

/// Coasting on a level straight against
/// `E(s) = (E₀ + c/β)·e^{−βs} − c/β`, `c = c_r·m·g`,
/// `β = ρA(c_d + c_r·c_l)/m`. Returns the worst relative error.
pub fn coastdown_error(model: &VehicleModel) -> f64 {
    let ch = &model.params.chassis;
    let grid = super::straight_track(1200.0, 4.0);
    let n = grid.len();
    let inputs = SimInputs {
        f_m: vec![0.0; n],
        f_brake_f: vec![0.0; n],
    };
    let v0 = 60.0;
    let e0 = 0.5 * ch.m_kg * v0 * v0;
    let init = SimInit {
        e_kin: e0,
        e_b: model.params.battery.e_b_0_j,
        theta_b: 300.0,
        theta_m: 320.0,
    };
    let sim = simulate_nonlinear(&inputs, &grid, model, init).unwrap();
    let c = ch.c_r * ch.m_kg * ch.g_mps2;
    let beta = ch.rho_kgpm3 * ch.a_f_m2 * (ch.c_d + ch.c_r * ch.c_l) / ch.m_kg;
    sim.s
        .iter()
        .zip(&sim.e_kin)
        .map(|(s, e)| {
            let exact = (e0 + c / beta) * (-beta * s).exp() - c / beta;
            (e - exact).abs() / exact
        })
        .fold(0.0, f64::max)
}

/// EM cool-down table against `ϑ_c + (ϑ_max − ϑ_c)·e^{−λt/C}` [K].
pub fn em_cooldown_error(p: &VehicleParams) -> f64 {
    let th = &p.thermal;
    let grid: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.1).collect();
    let out = build_em_init_temp_table(th, &grid).unwrap();
    let tau = th.c_m_jpk / th.lambda_m_wpk;
    grid.iter()
        .zip(&out)
        .map(|(t, v)| {
            let exact = th.theta_m_c_k + (th.theta_m_max_k - th.theta_m_c_k) * (-t / tau).exp();
            (v - exact).abs()
        })
        .fold(0.0, f64::max)
}

/// Backwards battery temperature under a constant loss `P` above the cooling
/// capacity: `ϑ(T − τ) = ϑ_eq − (ϑ_eq − ϑ_max)·e^{λτ/C}` [K].
pub fn battery_heating_error(p: &VehicleParams) -> f64 {
    let th = &p.thermal;
    let loss = th.lambda_b_wpk * (th.theta_b_max_k - th.theta_b_c_k) + 2000.0;
    let steps = vec![0.1; 1500];
    let out = integrate_terminal_temperature(&p.battery, th, &steps, &|_, _| loss).unwrap();
    let eq = th.theta_b_c_k + loss / th.lambda_b_wpk;
    let rate = th.lambda_b_wpk / th.c_b_jpk;
    out.iter()
        .enumerate()
        .map(|(k, v)| {
            let exact = eq - (eq - th.theta_b_max_k) * (rate * 0.1 * k as f64).exp();
            (v - exact).abs()
        })
        .fold(0.0, f64::max)
}

/// Charge energy under `V = a + b·E`, where `E + a/b` grows like `e^{bIt}`;
/// worst relative error.
pub fn linear_voltage_charge_error(p: &VehicleParams) -> f64 {
    let mut bat = p.battery.clone();
    let (a, b) = (600.0, 2e-5);
    bat.v_oc.energy_j = vec![bat.e_b_min_j, bat.e_b_max_j];
    bat.v_oc.voltage_v = bat.v_oc.energy_j.iter().map(|e| a + b * e).collect();
    let i = bat.i_charge_a;
    let (t, e) = build_energy_table(&bat, 0.1).unwrap();
    let c = a / b;
    let exact = |t: f64| bat.e_b_max_j - ((bat.e_b_max_j + c) * (-b * i * t).exp() - c);
    t.iter()
        .zip(&e)
        .skip(1)
        .map(|(&t, &e)| (e - exact(t)).abs() / exact(t))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// fit recovery

fn random_psd(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> Vec<Vec<f64>> {
    let l: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..d)
        .map(|i| (0..d).map(|j| (0..rank).map(|k| l[i][k] * l[j][k]).sum()).collect())
        .collect()
}

pub fn xqx(q: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * q[i][j] * x[j];
        }
    }
    s
}

pub fn frobenius_rel(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

fn raw_inputs(map: FeatureMap, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match map {
        FeatureMap::EmLoss => vec![rng.random_range(5.0..80.0), rng.random_range(-4e3..4e3)],
        FeatureMap::StintTime => vec![rng.random_range(5.0..120.0), rng.random_range(1.0..10.0)],
        FeatureMap::Battery => vec![rng.random_range(9.0..14.0), rng.random_range(2.9..3.3)],
        FeatureMap::Temperature => vec![rng.random_range(2.9..3.6)],
        FeatureMap::Identity => (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

pub struct Recovery {
    pub error: f64,
    pub sign_violation: f64,
}

/// Fits a random rank-`rank` form of the given sign from 60 exact samples.
pub fn quad_form_recovery(map: FeatureMap, sign: Sign, seed: u64, rank: usize) -> Recovery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = map.apply(&raw_inputs(map, &mut rng)).len();
    let mut q = random_psd(&mut rng, d, rank);
    let offset = match sign {
        Sign::Psd => 0.0,
        Sign::Nsd => {
            q.iter_mut().flatten().for_each(|v| *v = -*v);
            rng.random_range(1.0..5.0)
        }
    };
    let samples: Vec<FitSample> = (0..60)
        .map(|_| {
            let raw = raw_inputs(map, &mut rng);
            let t = xqx(&q, &map.apply(&raw)) + offset;
            FitSample::new(raw, t)
        })
        .collect();
    let fit = fit_quadratic_form_with_offset(&samples, map, sign, offset, &FitOptions::default())
        .unwrap();
    Recovery {
        error: frobenius_rel(&fit.q, &q),
        sign_violation: fit.sign_violation(),
    }
}

/// Every PSD and NSD case of [`quad_form_recovery`] used by the suites.
pub fn all_quad_form_recoveries() -> Vec<(String, Recovery)> {
    let mut out = Vec::new();
    for (seed, map, sign, d) in [
        (1, FeatureMap::EmLoss, Sign::Psd, 3),
        (2, FeatureMap::StintTime, Sign::Psd, 3),
        (3, FeatureMap::Identity, Sign::Psd, 3),
        (4, FeatureMap::Battery, Sign::Nsd, 3),
        (5, FeatureMap::Temperature, Sign::Nsd, 2),
    ] {
        for rank in 1..=d {
            let r = quad_form_recovery(map, sign, seed * 10 + rank as u64, rank);
            out.push((format!("{map:?}/{sign:?}/rank {rank}"), r));
        }
    }
    out
}

/// Relative error of the recovered inverter coefficient.
pub fn inverter_recovery() -> f64 {
    let alpha = 3.7e-7;
    let samples: Vec<(f64, f64)> = (0..41)
        .map(|i| {
            let p = -2e5 + 1e4 * i as f64;
            (p, p + alpha * p * p)
        })
        .collect();
    let fit = fit_inverter_alpha(&samples).unwrap();
    assert!(!fit.flagged);
    (fit.value - alpha).abs() / alpha
}

/// Relative errors of the recovered `α_ch` and `1/P_sc`.
pub fn charge_loss_recovery() -> (f64, f64) {
    let (alpha, inv_psc) = (0.042, 1.0 / 2.4e6);
    let samples: Vec<(f64, f64)> = (0..41)
        .map(|i| {
            let pb = -2e5 + 1e4 * i as f64;
            (pb, internal_power(pb, inv_psc, alpha))
        })
        .collect();
    // the generator must satisfy P_i − P_i²/P_sc = P_b' on both branches
    for &(pb, pi) in &samples {
        let pb_eff = if pb < 0.0 { (1.0 - alpha) * pb } else { pb };
        assert!((pi - pi * pi * inv_psc - pb_eff).abs() <= 1e-9 * pb.abs().max(1.0));
    }
    let fit = fit_charge_loss_alpha(&samples).unwrap();
    assert!(!fit.flagged);
    (
        (fit.alpha_ch - alpha).abs() / alpha,
        (fit.inv_p_sc - inv_psc).abs() / inv_psc,
    )
}

pub const STINT_SURFACE: [[f64; 3]; 3] = [
    [330.0, 11.0, -300.0],
    [11.0, 0.62, -7.0],
    [-300.0, -7.0, 900.0],
];

/// Map samples generated from [`STINT_SURFACE`], plus an infeasible cell and
/// a final stint that the fit must skip.
pub fn stint_surface_samples() -> Vec<StintSample> {
    let q: Vec<Vec<f64>> = STINT_SURFACE.iter().map(|r| r.to_vec()).collect();
    let mut samples = Vec::new();
    for n in 1..=7 {
        for t in [6.0, 11.0, 20.0, 37.0, 68.0, 110.0] {
            samples.push(StintSample {
                n_laps: n,
                t_charge: t,
                is_final: false,
                t_stint: xqx(&q, &[1.0, t, n as f64]) / t,
                valid: true,
                status: "Optimal".into(),
            });
        }
    }
    samples.push(StintSample {
        n_laps: 8,
        t_charge: 110.0,
        is_final: false,
        t_stint: f64::NAN,
        valid: false,
        status: "Infeasible".into(),
    });
    samples.push(StintSample {
        n_laps: 3,
        t_charge: 110.0,
        is_final: true,
        t_stint: 1.0,
        valid: true,
        status: "Optimal".into(),
    });
    samples
}

pub fn stint_surface_recovery() -> Recovery {
    let fit = fit_stint_surface(&stint_surface_samples(), &FitOptions::default()).unwrap();
    let q: Vec<Vec<f64>> = STINT_SURFACE.iter().map(|r| r.to_vec()).collect();
    Recovery {
        error: frobenius_rel(&fit.q, &q),
        sign_violation: fit.sign_violation(),
    }
}

pub const FINAL_FIT: [f64; 3] = [1.8, 101.5, 12.0];

/// Worst relative coefficient error of the final-stint fit.
pub fn final_fit_recovery() -> f64 {
    let d = FINAL_FIT;
    let samples: Vec<StintSample> = (1..=9)
        .map(|n| {
            let nf = n as f64;
            StintSample {
                n_laps: n,
                t_charge: 110.0,
                is_final: true,
                t_stint: d[0] * nf * nf + d[1] * nf + d[2],
                valid: true,
                status: "Optimal".into(),
            }
        })
        .collect();
    let fit = fit_final_surface(&samples).unwrap();
    (0..3)
        .map(|i| (fit.d[i] - d[i]).abs() / d[i])
        .fold(0.0, f64::max)
}
