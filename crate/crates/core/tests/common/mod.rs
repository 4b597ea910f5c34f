#![allow(dead_code)]

pub mod oracles;

use std::sync::OnceLock;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pitlane_core::charge::{build_charge_tables, ChargeTables, DEFAULT_DT};
use pitlane_core::conic::{Affine, ConicProgram};
use pitlane_core::fitting::{
    fit_component_models, ComponentData, FeatureMap, FinalStintFit, FitOptions, QuadFormFit, Sign,
};
use pitlane_core::model::{parse_track_str, TrackData, VehicleModel};
use pitlane_core::race::RaceProblem;
use pitlane_core::synthetic;

pub const DS: f64 = 4.0;

pub struct Setup {
    pub model: VehicleModel,
    pub tables: ChargeTables,
    pub track: TrackData,
}

/// Synthetic car with fitted surrogates, its charge tables and the race oval.
pub fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = synthetic::vehicle_params();
        let data = ComponentData {
            motor_map: synthetic::motor_map(&p),
            battery_sheet: None,
            inverter: Some(synthetic::inverter_samples(&p)),
            charge_loss: Some(synthetic::charge_loss_samples(&p)),
        };
        let fits = fit_component_models(&p, &data, &FitOptions::default()).unwrap();
        let tables = build_charge_tables(&p, fits.alpha_ch, DEFAULT_DT).unwrap();
        let model = VehicleModel::new(p, fits).unwrap();
        let track = parse_track_str(&synthetic::race_track_csv(), DS).unwrap();
        Setup {
            model,
            tables,
            track,
        }
    })
}

/// A straight, flat track of `length` metres with no pit lane.
pub fn straight_track(length: f64, step: f64) -> TrackData {
    let n = (length / step).round() as usize;
    let mut csv = String::from("s,kappa,theta,phi,pit\n");
    for i in 0..=n {
        csv.push_str(&format!("{},0,0,0,0\n", i as f64 * step));
    }
    parse_track_str(&csv, step).unwrap()
}

// ---------------------------------------------------------------------------
// randomised SOCPs with a known optimum

pub struct KnownSocp {
    pub program: ConicProgram,
    pub optimum: f64,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(1e-12..1.0);
    let v: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// `min cᵀx` s.t. `A_i x + b_i ∈ Q^{d_i}`, built backwards from a primal
/// point `x*` and dual cone vectors `z_i` that satisfy the KKT conditions:
/// active cones put `s_i` on the boundary with `z_i = μ(t, −u)`, inactive
/// ones are interior with `z_i = 0`, and `c = Σ A_iᵀ z_i`. The optimum is
/// then `cᵀx*` by weak duality.
pub fn known_socp(seed: u64) -> KnownSocp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..9usize);
    let cones = n + rng.random_range(1..4usize);
    let x_star: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
    let mut c = vec![0.0; n];
    let mut prog = ConicProgram::new();
    for j in 0..n {
        prog.add_var(format!("x{j}"));
    }
    // the first n cones are active so the dual multipliers span the space
    for i in 0..cones {
        let d = rng.random_range(2..5usize);
        let a: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..n).map(|_| gauss(&mut rng)).collect())
            .collect();
        let u: Vec<f64> = (0..d - 1).map(|_| gauss(&mut rng)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let active = i < n || rng.random_bool(0.3);
        let t = if active {
            norm
        } else {
            norm + rng.random_range(0.5..2.0)
        };
        let s: Vec<f64> = std::iter::once(t).chain(u.iter().copied()).collect();
        if active {
            let mu = rng.random_range(0.5..2.0);
            let z: Vec<f64> = std::iter::once(mu * t)
                .chain(u.iter().map(|v| -mu * v))
                .collect();
            for (r, row) in a.iter().enumerate() {
                for j in 0..n {
                    c[j] += row[j] * z[r];
                }
            }
        }
        let affine = |r: usize| -> Affine {
            let ax: f64 = a[r].iter().zip(&x_star).map(|(p, q)| p * q).sum();
            let mut e = Affine::constant(s[r] - ax);
            for j in 0..n {
                e = e.with_term(j, a[r][j]);
            }
            e
        };
        prog.add_soc(affine(0), (1..d).map(affine).collect()).unwrap();
    }
    for (j, cj) in c.iter().enumerate() {
        prog.set_objective(j, *cj);
    }
    let optimum = c.iter().zip(&x_star).map(|(p, q)| p * q).sum();
    KnownSocp {
        program: prog,
        optimum,
    }
}

// ---------------------------------------------------------------------------
// race problems and an exhaustive reference solver

pub fn stint_form(q: [[f64; 3]; 3]) -> QuadFormFit {
    QuadFormFit {
        q: q.iter().map(|r| r.to_vec()).collect(),
        offset: 0.0,
        sign: Sign::Psd,
        map: FeatureMap::StintTime,
        rmse_normalized: 0.0,
        n_samples: 0,
        ill_conditioned: false,
        poor_fit: false,
    }
}

/// Random race with a PSD surface `Q = LLᵀ + ε·I` shaped like a real map.
pub fn random_race(seed: u64) -> RaceProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = [[0.0; 3]; 3];
    // loosely modelled on a fitted synthetic surface
    let base = [[18.0, 0.0, 0.0], [0.6, 0.5, 0.0], [-17.0, -0.4, 25.0]];
    for i in 0..3 {
        for j in 0..=i {
            l[i][j] = base[i][j] * rng.random_range(0.7..1.3);
        }
    }
    let mut q = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            q[i][j] = (0..3).map(|k| l[i][k] * l[j][k]).sum::<f64>();
        }
        q[i][i] += 1e-6;
    }
    let n_max = rng.random_range(2..=6usize);
    let t_race = rng.random_range(300.0..1100.0);
    let d0 = rng.random_range(0.5..8.0);
    let d1 = rng.random_range(25.0..35.0);
    let d2 = rng.random_range(2.0..10.0);
    let t_max = rng.random_range(60.0..140.0);
    let form = stint_form(q);
    let mut surface_max: f64 = 0.0;
    for n in 1..=n_max {
        surface_max = surface_max.max(form.eval(&[t_max * 0.05, n as f64]));
    }
    RaceProblem {
        t_race,
        s_lap: 1000.0,
        t_charge_max: t_max,
        n_laps_max: n_max,
        n_stops_horizon: rng.random_range(1..=5usize),
        q_s: form,
        d_s_f: FinalStintFit {
            d: [d0, d1, d2],
            rmse_normalized: 0.0,
            n_samples: 0,
        },
        big_m: 10.0 * surface_max,
    }
}

/// Surface written out term by term, independent of the feature map.
pub fn surface_direct(q: &[Vec<f64>], n: f64, t: f64) -> f64 {
    let y = [1.0, t, n];
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += y[i] * q[i][j] * y[j];
        }
    }
    s / t
}

/// Golden-section minimum of a unimodal `f` on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Best lap count by enumerating every number of stops and every sorted
/// lap assignment; charge times come from a 1-D search per stint and the
/// final stint takes the largest length that fits the remaining time.
/// Returns `None` when nothing fits.
pub fn brute_force_laps(p: &RaceProblem) -> Option<f64> {
    let q = &p.q_s.q;
    let n_max = p.n_laps_max;
    let stint_cost: Vec<f64> = (0..=n_max)
        .map(|n| {
            if n == 0 {
                return 0.0;
            }
            let f = |t: f64| surface_direct(q, n as f64, t) + t;
            golden_min(f, 1e-9, p.t_charge_max).1
        })
        .collect();
    let [d0, d1, d2] = p.d_s_f.d;
    let final_laps = |budget: f64| -> Option<f64> {
        // largest N in [1, n_max] with d0 N² + d1 N + d2 ≤ budget
        let top = n_max as f64;
        let ok = |n: f64| d0 * n * n + d1 * n + d2 <= budget + 1e-9;
        if ok(top) {
            return Some(top);
        }
        if !ok(1.0) {
            return None;
        }
        let (mut lo, mut hi) = (1.0, top);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    };
    let mut best: Option<f64> = None;
    let mut seq = Vec::new();
    fn walk(
        seq: &mut Vec<usize>,
        left: usize,
        lo: usize,
        n_max: usize,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        visit(seq);
        if left == 0 {
            return;
        }
        for n in lo..=n_max {
            seq.push(n);
            walk(seq, left - 1, n, n_max, visit);
            seq.pop();
        }
    }
    let mut visit = |s: &[usize]| {
        let used: f64 = s.iter().map(|&n| stint_cost[n]).sum();
        if let Some(nf) = final_laps(p.t_race - used) {
            let laps = s.iter().sum::<usize>() as f64 + nf;
            if best.is_none_or(|b| laps > b) {
                best = Some(laps);
            }
        }
    };
    walk(&mut seq, p.n_stops_horizon, 1, n_max, &mut visit);
    best
}
