//! Maximum-distance race planning over a horizon of candidate stints.
//!
//! Every non-final candidate stint `k` carries a binary `b_k` (is the stint
//! driven) and an integer lap count `N_k`; the final stint is always driven
//! and may end mid-lap. Stint time is bounded below by the fitted surface
//! through a big-M rotated cone, and the whole plan must fit in the race
//! time. Integrality is handled by best-bound branch and bound over the conic
//! relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::{solve_with, Affine, ConicProgram, ConstraintId, SolveOptions, SolveStatus};
use crate::error::{Error, Result};
use crate::fitting::{psd_factor, FinalStintFit, QuadFormFit, Sign};
use crate::map::StintSample;
use crate::model::FitBundle;

/// Internal time unit of the program, in seconds.
const TIME_UNIT: f64 = 100.0;
/// `big_M` as a multiple of the largest surface value on the map.
pub const BIG_M_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceProblem {
    pub t_race: f64,
    pub s_lap: f64,
    pub t_charge_max: f64,
    pub n_laps_max: usize,
    /// Candidate stint count minus one.
    pub n_stops_horizon: usize,
    pub q_s: QuadFormFit,
    pub d_s_f: FinalStintFit,
    pub big_m: f64,
}

fn valid_regular(samples: &[StintSample]) -> impl Iterator<Item = &StintSample> {
    samples
        .iter()
        .filter(|s| !s.is_final && s.valid && s.t_stint.is_finite() && s.t_charge > 0.0)
}

/// `⌈t_race / min(t_stint + t_charge)⌉ + 2` over the valid map samples.
pub fn default_horizon(t_race: f64, samples: &[StintSample]) -> Result<usize> {
    let shortest = valid_regular(samples)
        .map(|s| s.t_stint + s.t_charge)
        .fold(f64::INFINITY, f64::min);
    if !shortest.is_finite() || shortest <= 0.0 {
        return Err(Error::Argument("map has no valid regular stints".into()));
    }
    Ok((t_race / shortest).ceil() as usize + 2)
}

impl RaceProblem {
    /// Race data from a solved map and its fits. `horizon` overrides
    /// [`default_horizon`].
    pub fn from_map(
        t_race: f64,
        s_lap: f64,
        t_charge_max: f64,
        samples: &[StintSample],
        fits: &FitBundle,
        horizon: Option<usize>,
    ) -> Result<Self> {
        let q_s = fits.stint_surface()?.clone();
        let d_s_f = fits.final_stint()?.clone();
        let n_laps_max = valid_regular(samples)
            .map(|s| s.n_laps)
            .max()
            .ok_or_else(|| Error::Argument("map has no valid regular stints".into()))?;
        let surface_max = valid_regular(samples)
            .map(|s| q_s.eval(&[s.t_charge, s.n_laps as f64]))
            .fold(0.0, f64::max);
        let n_stops_horizon = match horizon {
            Some(h) => h,
            None => default_horizon(t_race, samples)?,
        };
        let p = RaceProblem {
            t_race,
            s_lap,
            t_charge_max,
            n_laps_max,
            n_stops_horizon,
            q_s,
            d_s_f,
            big_m: BIG_M_FACTOR * surface_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("t_race", self.t_race),
            ("s_lap", self.s_lap),
            ("t_charge_max", self.t_charge_max),
            ("big_m", self.big_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{n} must be positive, got {v}")));
            }
        }
        if self.n_laps_max < 1 {
            return Err(Error::Argument("n_laps_max must be at least 1".into()));
        }
        if self.q_s.dim() != 3 || self.q_s.sign != Sign::Psd || !self.q_s.is_sign_certified(1e-8) {
            return Err(Error::Config(
                "stint surface must be a certified PSD 3x3 form".into(),
            ));
        }
        let d = &self.d_s_f.d;
        if d.iter().any(|v| !v.is_finite()) || d[0] < 0.0 {
            return Err(Error::Config("final-stint fit must be finite and convex".into()));
        }
        Ok(())
    }

    /// Time of a regular stint on the surface.
    pub fn surface(&self, n_laps: f64, t_charge: f64) -> f64 {
        self.q_s.eval(&[t_charge, n_laps])
    }
}

/// Column layout: per non-final stint `[b, N, t_c, t_s, t_tot]`, then
/// `[b_f, N_f, t_s,f, t_tot,f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaceLayout {
    pub n_regular: usize,
}

impl RaceLayout {
    pub fn b(&self, k: usize) -> usize {
        5 * k
    }
    pub fn n(&self, k: usize) -> usize {
        5 * k + 1
    }
    pub fn t_charge(&self, k: usize) -> usize {
        5 * k + 2
    }
    pub fn t_stint(&self, k: usize) -> usize {
        5 * k + 3
    }
    pub fn t_tot(&self, k: usize) -> usize {
        5 * k + 4
    }
    pub fn b_final(&self) -> usize {
        5 * self.n_regular
    }
    pub fn n_final(&self) -> usize {
        5 * self.n_regular + 1
    }
    pub fn t_stint_final(&self) -> usize {
        5 * self.n_regular + 2
    }
    pub fn t_tot_final(&self) -> usize {
        5 * self.n_regular + 3
    }
    pub fn binaries(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.n_regular).map(|k| self.b(k)).collect();
        v.push(self.b_final());
        v
    }
    pub fn lengths(&self) -> Vec<usize> {
        (0..self.n_regular).map(|k| self.n(k)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RaceProgram {
    pub program: ConicProgram,
    pub layout: RaceLayout,
    /// Inequality rows `b_k ≤ b_{k+1}` and `N_k ≤ N_{k+1}`. They only break
    /// the symmetry between interchangeable stints for branching.
    pub ordering_rows: Vec<usize>,
}

impl RaceProgram {
    /// The program without the stint-ordering rows.
    pub fn unordered(&self) -> ConicProgram {
        let mut p = self.program.clone();
        let drop: std::collections::BTreeSet<usize> = self.ordering_rows.iter().copied().collect();
        let rows = std::mem::take(&mut p.ineq_constraints);
        p.ineq_constraints = rows
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, r)| r)
            .collect();
        p
    }
}

/// How a regular stint's time is tied to the surface.
///
/// Both use `y_s = [b, t_c, N]`, so a skipped stint (`b = t_c = N = 0`) sits
/// at the cone apex. `BigM` is `(M(1−b) + t_s)·t_c ≥ ‖Lᵀy_s‖²`.
/// `Perspective` drops the `M` term: on integer points the two coincide, but
/// its relaxation is the convex hull of the skipped and driven cases and
/// bounds far tighter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    Perspective,
    BigM,
}

/// Builds the mixed-integer program. Times are carried in units of
/// `TIME_UNIT` seconds; the objective is minus the lap count.
pub fn build_race_misocp(p: &RaceProblem, form: Formulation) -> Result<RaceProgram> {
    p.validate()?;
    let u = TIME_UNIT;
    let kk = p.n_stops_horizon;
    let lay = RaceLayout { n_regular: kk };
    let n_max = p.n_laps_max as f64;
    let inf = f64::INFINITY;
    let l = psd_factor(&p.q_s.matrix());
    let mut prog = ConicProgram::new();
    for k in 0..kk {
        prog.add_var_bounded(format!("b[{k}]"), 0.0, 1.0);
        prog.add_var_bounded(format!("n[{k}]"), 0.0, n_max);
        prog.add_var_bounded(format!("t_charge[{k}]"), 0.0, p.t_charge_max / u);
        prog.add_var_bounded(format!("t_stint[{k}]"), 0.0, inf);
        // nonnegative through the chain below; no explicit bound
        prog.add_var_bounded(format!("t_tot[{k}]"), -inf, inf);
    }
    prog.add_var_bounded("b_final", 1.0, 1.0);
    prog.add_var_bounded("n_final", 1.0, n_max);
    prog.add_var_bounded("t_stint_final", 0.0, inf);
    prog.add_var_bounded("t_tot_final", -inf, inf);
    for i in lay.binaries() {
        prog.set_integer(i, true);
    }
    for i in lay.lengths() {
        prog.set_integer(i, true);
    }

    let x = Affine::var;
    let xs = Affine::term;
    let mut ordering = Vec::new();
    for k in 0..kk {
        let (b, n, tc, ts) = (lay.b(k), lay.n(k), lay.t_charge(k), lay.t_stint(k));
        prog.add_le(x(n) - xs(b, n_max))?;
        prog.add_le(x(tc) - xs(b, p.t_charge_max / u))?;
        prog.add_le(x(ts) - xs(b, p.big_m / u))?;
        // z = Lᵀ [b, t_c, N] / u with t_c in seconds
        let y = [x(b), xs(tc, u), x(n)];
        let z: Vec<Affine> = (0..3)
            .map(|r| {
                (0..3)
                    .fold(Affine::zero(), |acc, c| acc + y[c].clone() * (l[(c, r)] / u))
                    .compact()
            })
            .collect();
        match form {
            Formulation::Perspective => prog.add_rotated_cone_affine(x(ts), x(tc), z)?,
            Formulation::BigM => {
                let released = x(ts) + xs(b, -p.big_m / u).with_constant(p.big_m / u);
                prog.add_rotated_cone_affine(released, x(tc), z)?
            }
        };

        let next = if k + 1 < kk { lay.t_tot(k + 1) } else { lay.t_tot_final() };
        prog.add_eq(x(next) - x(lay.t_tot(k)) - x(ts) - x(tc))?;
        if k + 1 < kk {
            for (a, c) in [(b, lay.b(k + 1)), (n, lay.n(k + 1))] {
                if let ConstraintId::Ineq(i) = prog.add_le(x(a) - x(c))? {
                    ordering.push(i);
                }
            }
        }
    }
    if kk > 0 {
        prog.fix(lay.t_tot(0), 0.0);
    } else {
        prog.fix(lay.t_tot_final(), 0.0);
    }
    prog.add_le(x(lay.t_tot_final()) + x(lay.t_stint_final()) - Affine::constant(p.t_race / u))?;

    let [d0, d1, d2] = p.d_s_f.d;
    let nf = lay.n_final();
    let head = x(lay.t_stint_final()) - xs(nf, d1 / u) - Affine::constant(d2 / u);
    if d0 > 0.0 {
        prog.add_rotated_cone_affine(head, Affine::constant(1.0), vec![xs(nf, (d0 / u).sqrt())])?;
    } else {
        prog.add_ge2(head, Affine::zero())?;
    }

    for k in 0..kk {
        prog.set_objective(lay.n(k), -1.0);
    }
    prog.set_objective(nf, -1.0);
    Ok(RaceProgram {
        program: prog,
        layout: lay,
        ordering_rows: ordering,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceMode {
    Joint,
    /// Exactly this many pit stops.
    FixedStops(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct RaceOptions {
    /// Relative optimality gap at which branch and bound stops.
    pub gap: f64,
    pub int_tol: f64,
    pub max_nodes: usize,
    /// Drop integrality and return the conic relaxation.
    pub relaxed: bool,
    pub formulation: Formulation,
    pub solver: SolveOptions,
}

impl Default for RaceOptions {
    fn default() -> Self {
        RaceOptions {
            gap: 1e-6,
            int_tol: 1e-6,
            max_nodes: 200_000,
            relaxed: false,
            formulation: Formulation::Perspective,
            solver: SolveOptions {
                tol: 1e-10,
                feas_tol: 1e-8,
                accept_gap: Some(1e-8),
                max_iter: 200,
                verbose: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintPlan {
    pub index: usize,
    pub active: bool,
    pub is_final: bool,
    pub b_pit: f64,
    pub n_laps: f64,
    pub t_charge: f64,
    pub t_stint: f64,
    /// Race time at the start of the stint.
    pub t_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub node: usize,
    pub incumbent: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceStatus {
    Optimal,
    Relaxed,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceStrategy {
    pub mode: RaceMode,
    pub status: RaceStatus,
    pub t_race: f64,
    pub s_lap: f64,
    pub stints: Vec<StintPlan>,
    pub total_laps: f64,
    pub distance_m: f64,
    pub n_stops_active: usize,
    pub sum_t_charge: f64,
    pub t_end: f64,
    /// Best bound on the lap count.
    pub bound_laps: f64,
    pub gap: f64,
    pub nodes: usize,
    pub n_stops_horizon: usize,
    pub horizon_saturated: bool,
    pub trace: Vec<TracePoint>,
    #[serde(skip)]
    pub solve_seconds: f64,
}

impl RaceStrategy {
    pub fn active_stints(&self) -> impl Iterator<Item = &StintPlan> {
        self.stints.iter().filter(|s| s.active)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Cumulative laps against race time: one row when each stint starts,
    /// one when it reaches the pit and one when its charge ends.
    pub fn cumulative(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0)];
        let mut laps = 0.0;
        for s in self.active_stints() {
            laps += s.n_laps;
            out.push((s.t_start + s.t_stint, laps));
            if !s.is_final {
                out.push((s.t_start + s.t_stint + s.t_charge, laps));
            }
        }
        out
    }

    pub fn write_cumulative_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "laps"])?;
        for (t, n) in self.cumulative() {
            w.write_record([format!("{t:?}"), format!("{n:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integer-variable bounds of a branch-and-bound node.
#[derive(Debug, Clone)]
struct Node {
    id: usize,
    bound: f64,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // max-heap: higher bound first, then older node
    fn cmp(&self, o: &Self) -> Ordering {
        self.bound.total_cmp(&o.bound).then(o.id.cmp(&self.id))
    }
}

struct Search<'a> {
    base: &'a ConicProgram,
    /// Big-M program over the same columns, for nodes the base cannot solve.
    fallback: Option<&'a ConicProgram>,
    lay: RaceLayout,
    ints: Vec<usize>,
    opts: RaceOptions,
}

enum Relax {
    Infeasible,
    Solved { bound: f64, x: Vec<f64> },
}

impl Search<'_> {
    fn relax(&self, lb: &[f64], ub: &[f64]) -> Result<Relax> {
        let mut prog = self.base.clone();
        for (j, &i) in self.ints.iter().enumerate() {
            if lb[j] > ub[j] + 1e-9 {
                return Ok(Relax::Infeasible);
            }
            prog.set_bounds(i, lb[j], ub[j].max(lb[j]));
        }
        let mut sol = solve_with(&prog, &self.opts.solver)?;
        if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Infeasible) {
            // Degenerate nodes (stints squeezed to zero charge time) can stall
            // the interior-point method; a looser target usually gets through.
            log::debug!("race node: {:?}, retrying with a looser target", sol.status);
            let loose = SolveOptions {
                tol: self.opts.solver.tol.max(1e-8),
                feas_tol: self.opts.solver.feas_tol.max(1e-7),
                accept_gap: Some(self.opts.gap.max(1e-8)),
                ..self.opts.solver
            };
            sol = solve_with(&prog, &loose)?;
            if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Infeasible) {
                if let Some(fb) = self.fallback {
                    // the big-M relaxation is weaker, so its value is still a valid bound
                    log::debug!("race node: {:?}, using the big-M relaxation", sol.status);
                    let mut prog = fb.clone();
                    for (j, &i) in self.ints.iter().enumerate() {
                        prog.set_bounds(i, lb[j], ub[j].max(lb[j]));
                    }
                    sol = solve_with(&prog, &self.opts.solver)?;
                }
            }
        }
        match sol.status {
            SolveStatus::Optimal => Ok(Relax::Solved {
                bound: -sol.obj,
                x: sol.x,
            }),
            SolveStatus::Infeasible => Ok(Relax::Infeasible),
            status => Err(Error::Solver {
                status,
                context: "race relaxation".into(),
            }),
        }
    }

    /// Pushes the implications of the monotone `b` and sorted `N` chains.
    fn propagate(&self, lb: &mut [f64], ub: &mut [f64]) {
        let kk = self.lay.n_regular;
        // ints = [b_0..b_{K-1}, b_f, n_0..n_{K-1}]
        let (b, n) = (0, kk + 1);
        for _ in 0..2 {
            for k in 1..kk {
                lb[b + k] = lb[b + k].max(lb[b + k - 1]);
                lb[n + k] = lb[n + k].max(lb[n + k - 1]);
            }
            for k in (0..kk.saturating_sub(1)).rev() {
                ub[b + k] = ub[b + k].min(ub[b + k + 1]);
                ub[n + k] = ub[n + k].min(ub[n + k + 1]);
            }
            for k in 0..kk {
                if ub[b + k] < 0.5 {
                    ub[n + k] = 0.0;
                }
                if lb[n + k] > 0.5 {
                    lb[b + k] = 1.0;
                }
            }
        }
    }

    /// Most fractional binary, else most fractional length.
    fn branch_var(&self, x: &[f64]) -> Option<usize> {
        let kk = self.lay.n_regular;
        let pick = |range: std::ops::Range<usize>| -> Option<usize> {
            let mut best: Option<(f64, usize)> = None;
            for j in range {
                let v = x[self.ints[j]];
                let f = (v - v.floor()).min(v.ceil() - v);
                if f > self.opts.int_tol && best.is_none_or(|(bf, _)| f > bf + 1e-12) {
                    best = Some((f, j));
                }
            }
            best.map(|b| b.1)
        };
        pick(0..kk + 1).or_else(|| pick(kk + 1..self.ints.len()))
    }
}

fn extract(lay: RaceLayout, x: &[f64], int_tol: f64) -> Vec<StintPlan> {
    let u = TIME_UNIT;
    let mut out = Vec::with_capacity(lay.n_regular + 1);
    for k in 0..lay.n_regular {
        let b = x[lay.b(k)];
        out.push(StintPlan {
            index: k,
            active: b > int_tol,
            is_final: false,
            b_pit: b,
            n_laps: x[lay.n(k)],
            t_charge: x[lay.t_charge(k)] * u,
            t_stint: x[lay.t_stint(k)] * u,
            t_start: x[lay.t_tot(k)] * u,
        });
    }
    out.push(StintPlan {
        index: lay.n_regular,
        active: true,
        is_final: true,
        b_pit: 1.0,
        n_laps: x[lay.n_final()],
        t_charge: 0.0,
        t_stint: x[lay.t_stint_final()] * u,
        t_start: x[lay.t_tot_final()] * u,
    });
    out
}

/// Integer solutions are snapped to exact integers and skipped stints to zero.
fn clean_integral(stints: &mut [StintPlan]) {
    for s in stints.iter_mut().filter(|s| !s.is_final) {
        s.b_pit = s.b_pit.round();
        s.active = s.b_pit == 1.0;
        if s.active {
            s.n_laps = s.n_laps.round();
        } else {
            s.n_laps = 0.0;
            s.t_charge = 0.0;
            s.t_stint = 0.0;
        }
    }
}

fn strategy_from(
    p: &RaceProblem,
    mode: RaceMode,
    status: RaceStatus,
    mut stints: Vec<StintPlan>,
    bound: f64,
    nodes: usize,
    trace: Vec<TracePoint>,
) -> RaceStrategy {
    if status != RaceStatus::Relaxed {
        clean_integral(&mut stints);
    }
    let total_laps: f64 = stints.iter().map(|s| s.n_laps).sum();
    let regular: Vec<&StintPlan> = stints.iter().filter(|s| !s.is_final && s.active).collect();
    let last = stints.last().expect("final stint present");
    let t_end = last.t_start + last.t_stint;
    let n_stops_active = regular.len();
    let horizon_saturated = p.n_stops_horizon > 0 && n_stops_active == p.n_stops_horizon
        && mode == RaceMode::Joint;
    let gap = (bound - total_laps).max(0.0) / total_laps.abs().max(1.0);
    RaceStrategy {
        mode,
        status,
        t_race: p.t_race,
        s_lap: p.s_lap,
        total_laps,
        distance_m: total_laps * p.s_lap,
        n_stops_active,
        sum_t_charge: regular.iter().map(|s| s.t_charge).sum(),
        t_end,
        bound_laps: bound,
        gap,
        nodes,
        n_stops_horizon: p.n_stops_horizon,
        horizon_saturated,
        trace,
        stints,
        solve_seconds: 0.0,
    }
}

/// `(laps, stops, Σ t_charge)` ordering: more laps first, then fewer stops,
/// then less charging.
fn better(a: &RaceStrategy, b: &RaceStrategy, tol: f64) -> bool {
    let d = a.total_laps - b.total_laps;
    if d.abs() > tol {
        return d > 0.0;
    }
    (a.n_stops_active, a.sum_t_charge) < (b.n_stops_active, b.sum_t_charge)
}

/// Solves the race problem.
///
/// In [`RaceMode::FixedStops`] the binaries are fixed so that the last `n`
/// candidate stints are driven; the horizon grows to `n` if it is shorter.
pub fn solve_race(p: &RaceProblem, mode: RaceMode, opts: &RaceOptions) -> Result<RaceStrategy> {
    let started = Instant::now();
    let mut p = p.clone();
    if let RaceMode::FixedStops(n) = mode {
        p.n_stops_horizon = p.n_stops_horizon.max(n);
    }
    let rp = build_race_misocp(&p, opts.formulation)?;
    let lay = rp.layout;
    let kk = lay.n_regular;
    let mut ints = lay.binaries();
    ints.extend(lay.lengths());
    let mut lb: Vec<f64> = ints.iter().map(|&i| rp.program.lower[i]).collect();
    let mut ub: Vec<f64> = ints.iter().map(|&i| rp.program.upper[i]).collect();
    if let RaceMode::FixedStops(n) = mode {
        for k in 0..kk {
            let v = if k >= kk - n { 1.0 } else { 0.0 };
            lb[k] = v;
            ub[k] = v;
        }
    }
    let big_m = match opts.formulation {
        Formulation::Perspective => Some(build_race_misocp(&p, Formulation::BigM)?.program),
        Formulation::BigM => None,
    };
    // the ordering rows only serve branching; without them equal stints are
    // interchangeable and the relaxation stays symmetric
    let unordered = opts.relaxed.then(|| rp.unordered());
    let search = Search {
        base: unordered.as_ref().unwrap_or(&rp.program),
        fallback: big_m.as_ref(),
        lay,
        ints,
        opts: *opts,
    };
    search.propagate(&mut lb, &mut ub);

    let infeasible = || {
        Error::Infeasible(format!(
            "no plan fits in {:.1} s: even a one-lap final stint needs {:.1} s on the fitted curve",
            p.t_race,
            p.d_s_f.eval(1.0)
        ))
    };
    let (root_bound, root_x) = match search.relax(&lb, &ub)? {
        Relax::Infeasible => return Err(infeasible()),
        Relax::Solved { bound, x } => (bound, x),
    };
    if opts.relaxed {
        let stints = extract(lay, &root_x, opts.int_tol);
        let trace = vec![TracePoint {
            node: 0,
            incumbent: f64::NAN,
            bound: root_bound,
        }];
        let mut s = strategy_from(&p, mode, RaceStatus::Relaxed, stints, root_bound, 1, trace);
        s.solve_seconds = started.elapsed().as_secs_f64();
        return Ok(s);
    }

    let mut incumbent: Option<RaceStrategy> = None;
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut global_bound = root_bound;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    heap.push(Node {
        id: next_id,
        bound: root_bound,
        lb,
        ub,
        x: root_x,
    });
    next_id += 1;
    let mut nodes = 1usize;
    let mut status = RaceStatus::Optimal;
    let tol_of = |inc: &Option<RaceStrategy>| {
        inc.as_ref()
            .map_or(0.0, |s| opts.gap * s.total_laps.abs().max(1.0))
    };
    let inc_value = |inc: &Option<RaceStrategy>| inc.as_ref().map_or(f64::NEG_INFINITY, |s| s.total_laps);

    while let Some(node) = heap.pop() {
        let tol = tol_of(&incumbent);
        if node.bound <= inc_value(&incumbent) + tol {
            heap.clear();
            break;
        }
        let nb = node.bound.min(global_bound);
        if nb < global_bound {
            global_bound = nb;
            trace.push(TracePoint {
                node: nodes,
                incumbent: inc_value(&incumbent),
                bound: global_bound,
            });
        }
        if nodes >= opts.max_nodes {
            status = RaceStatus::NodeLimit;
            heap.push(node);
            break;
        }
        match search.branch_var(&node.x) {
            None => {
                // integral relaxation: fix the integers and polish
                let mut flb = node.lb.clone();
                let mut fub = node.ub.clone();
                for (j, &i) in search.ints.iter().enumerate() {
                    let v = node.x[i].round();
                    flb[j] = v;
                    fub[j] = v;
                }
                nodes += 1;
                if let Relax::Solved { bound, x } = search.relax(&flb, &fub)? {
                    let stints = extract(lay, &x, opts.int_tol);
                    let cand =
                        strategy_from(&p, mode, RaceStatus::Optimal, stints, bound, 0, Vec::new());
                    let tol = tol_of(&incumbent).max(opts.gap);
                    if incumbent.as_ref().is_none_or(|inc| better(&cand, inc, tol)) {
                        incumbent = Some(cand);
                        trace.push(TracePoint {
                            node: nodes,
                            incumbent: inc_value(&incumbent),
                            bound: global_bound,
                        });
                    }
                }
            }
            Some(j) => {
                let v = node.x[search.ints[j]];
                for up in [false, true] {
                    let mut clb = node.lb.clone();
                    let mut cub = node.ub.clone();
                    if up {
                        clb[j] = v.ceil();
                    } else {
                        cub[j] = v.floor();
                    }
                    search.propagate(&mut clb, &mut cub);
                    nodes += 1;
                    if let Relax::Solved { bound, x } = search.relax(&clb, &cub)? {
                        let bound = bound.min(node.bound);
                        if bound > inc_value(&incumbent) + tol_of(&incumbent) {
                            heap.push(Node {
                                id: next_id,
                                bound,
                                lb: clb,
                                ub: cub,
                                x,
                            });
                            next_id += 1;
                        }
                    }
                }
            }
        }
    }

    let Some(best) = incumbent else {
        return Err(infeasible());
    };
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
    let final_bound = global_bound.min(open_bound.max(best.total_laps)).max(best.total_laps);
    if final_bound < global_bound {
        trace.push(TracePoint {
            node: nodes,
            incumbent: best.total_laps,
            bound: final_bound,
        });
    }
    let mut s = strategy_from(&p, mode, status, best.stints, final_bound, nodes, trace);
    if s.horizon_saturated {
        log::warn!(
            "all {} candidate stops are used; re-solve with a longer horizon",
            p.n_stops_horizon
        );
    }
    s.solve_seconds = started.elapsed().as_secs_f64();
    Ok(s)
}

/// [`solve_race`] in joint mode, doubling the horizon while the solution
/// uses every candidate stop (at most `retries` times).
pub fn solve_race_extending(
    p: &RaceProblem,
    opts: &RaceOptions,
    retries: usize,
) -> Result<RaceStrategy> {
    let mut p = p.clone();
    let mut s = solve_race(&p, RaceMode::Joint, opts)?;
    for _ in 0..retries {
        if !s.horizon_saturated {
            break;
        }
        p.n_stops_horizon = 2 * p.n_stops_horizon.max(1);
        s = solve_race(&p, RaceMode::Joint, opts)?;
    }
    Ok(s)
}

/// `S_stint / (t_charge + t_stint)`; `None` for final or skipped stints.
pub fn average_stint_velocity(s: &StintPlan, s_lap: f64) -> Option<f64> {
    let t = s.t_charge + s.t_stint;
    (!s.is_final && s.active && t > 0.0).then(|| s.n_laps * s_lap / t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub n_laps: usize,
    pub t_charge: f64,
    pub t_stint: f64,
    pub v_avg: f64,
}

/// For each `N`, the charge time that maximises the average stint velocity
/// on the surface.
///
/// With `y = [1, t_c, N]` the surface is `A/t_c + q₁₁ t_c + C`, so
/// `t_c + t_stint` is minimised at `t_c = √(A/(1 + q₁₁))`, clipped to
/// `(0, t_charge_max]`.
pub fn stint_frontier(p: &RaceProblem) -> Vec<FrontierPoint> {
    let q = &p.q_s.q;
    (1..=p.n_laps_max)
        .map(|n| {
            let nf = n as f64;
            let a = q[0][0] + 2.0 * q[0][2] * nf + q[2][2] * nf * nf;
            let tc = (a.max(0.0) / (1.0 + q[1][1])).sqrt().clamp(1e-9, p.t_charge_max);
            let ts = p.surface(nf, tc);
            FrontierPoint {
                n_laps: n,
                t_charge: tc,
                t_stint: ts,
                v_avg: nf * p.s_lap / (tc + ts),
            }
        })
        .collect()
}

pub fn write_frontier_csv(points: &[FrontierPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in points {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintVelocity {
    pub index: usize,
    pub n_laps: f64,
    pub t_charge: f64,
    pub v_avg: f64,
    /// Laps between this stint and the frontier optimum.
    pub lap_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierAlignment {
    pub best: FrontierPoint,
    pub stints: Vec<StintVelocity>,
    pub max_lap_distance: f64,
}

/// Compares the non-final stints of `s` with the best frontier point.
pub fn frontier_alignment(p: &RaceProblem, s: &RaceStrategy) -> FrontierAlignment {
    let frontier = stint_frontier(p);
    let best = *frontier
        .iter()
        .max_by(|a, b| a.v_avg.total_cmp(&b.v_avg).then(b.n_laps.cmp(&a.n_laps)))
        .expect("n_laps_max ≥ 1");
    let stints: Vec<StintVelocity> = s
        .stints
        .iter()
        .filter_map(|st| {
            average_stint_velocity(st, p.s_lap).map(|v| StintVelocity {
                index: st.index,
                n_laps: st.n_laps,
                t_charge: st.t_charge,
                v_avg: v,
                lap_distance: (st.n_laps - best.n_laps as f64).abs(),
            })
        })
        .collect();
    let max_lap_distance = stints.iter().map(|v| v.lap_distance).fold(0.0, f64::max);
    FrontierAlignment {
        best,
        stints,
        max_lap_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> RaceProblem {
        RaceProblem {
            t_race: 1500.0,
            s_lap: 1000.0,
            t_charge_max: 120.0,
            n_laps_max: 6,
            n_stops_horizon: 4,
            q_s: QuadFormFit {
                q: vec![
                    vec![900.0, 0.0, 0.0],
                    vec![0.0, 0.05, 0.0],
                    vec![0.0, 0.0, 1200.0],
                ],
                offset: 0.0,
                sign: Sign::Psd,
                map: crate::fitting::FeatureMap::StintTime,
                rmse_normalized: 0.0,
                n_samples: 0,
                ill_conditioned: false,
                poor_fit: false,
            },
            d_s_f: FinalStintFit {
                d: [2.0, 35.0, 5.0],
                rmse_normalized: 0.0,
                n_samples: 0,
            },
            big_m: 5000.0,
        }
    }

    #[test]
    fn variable_counts() {
        let mut p = toy();
        p.n_stops_horizon = 19;
        let rp = build_race_misocp(&p, Formulation::BigM).unwrap();
        let lay = rp.layout;
        assert_eq!(lay.binaries().len(), 20);
        assert_eq!(lay.lengths().len(), 19);
        assert!(!rp.program.integer[lay.n_final()]);
        let n_int = rp.program.integer.iter().filter(|&&f| f).count();
        assert_eq!(n_int, 39);
    }

    #[test]
    fn skipped_stint_admits_zeros() {
        let p = toy();
        for form in [Formulation::BigM, Formulation::Perspective] {
            let rp = build_race_misocp(&p, form).unwrap();
            let lay = rp.layout;
            let mut x = vec![0.0; rp.program.n_vars()];
            x[lay.b_final()] = 1.0;
            x[lay.n_final()] = 1.0;
            x[lay.t_stint_final()] = p.d_s_f.eval(1.0) / TIME_UNIT;
            let (lin, cone) = crate::conic::relative_violations(&rp.program, &x);
            assert!(lin <= 1e-12 && cone <= 1e-12, "{form:?}: {lin} {cone}");
        }
    }

    #[test]
    fn active_stint_cone_is_the_surface() {
        // with b = 1 the M term vanishes and t_s·t_c ≥ yᵀQy
        let p = toy();
        let (n, tc) = (3.0, 60.0);
        let need = p.surface(n, tc);
        for form in [Formulation::BigM, Formulation::Perspective] {
            let rp = build_race_misocp(&p, form).unwrap();
            let lay = rp.layout;
            for (ts, ok) in [(need * (1.0 + 1e-9), true), (need * (1.0 - 1e-6), false)] {
                let mut x = vec![0.0; rp.program.n_vars()];
                let k = lay.n_regular - 1;
                x[lay.b(k)] = 1.0;
                x[lay.n(k)] = n;
                x[lay.t_charge(k)] = tc / TIME_UNIT;
                x[lay.t_stint(k)] = ts / TIME_UNIT;
                x[lay.t_tot_final()] = (ts + tc) / TIME_UNIT;
                x[lay.b_final()] = 1.0;
                x[lay.n_final()] = 1.0;
                x[lay.t_stint_final()] = p.d_s_f.eval(1.0) / TIME_UNIT;
                let worst = rp
                    .program
                    .soc_constraints
                    .iter()
                    .map(|c| c.violation(&x))
                    .fold(0.0, f64::max);
                assert_eq!(worst <= 1e-12, ok, "{form:?}: ts {ts} worst {worst}");
            }
        }
    }

    #[test]
    fn formulations_agree_on_integer_optimum() {
        let p = toy();
        let run = |formulation| {
            let o = RaceOptions {
                formulation,
                ..Default::default()
            };
            solve_race(&p, RaceMode::Joint, &o).unwrap()
        };
        let a = run(Formulation::Perspective);
        let b = run(Formulation::BigM);
        assert!((a.total_laps - b.total_laps).abs() <= 1e-6 * a.total_laps);
        assert!(a.nodes <= b.nodes);
    }

    #[test]
    fn velocity_arithmetic() {
        let s = StintPlan {
            index: 0,
            active: true,
            is_final: false,
            b_pit: 1.0,
            n_laps: 10.0,
            t_charge: 200.0,
            t_stint: 1000.0,
            t_start: 0.0,
        };
        assert_eq!(average_stint_velocity(&s, 4000.0), Some(10.0 * 4000.0 / 1200.0));
        let skipped = StintPlan {
            active: false,
            n_laps: 0.0,
            t_charge: 0.0,
            t_stint: 0.0,
            ..s.clone()
        };
        assert_eq!(average_stint_velocity(&skipped, 4000.0), None);
    }

    #[test]
    fn non_psd_surface_is_a_config_error() {
        let mut p = toy();
        p.q_s.q[0][0] = -1.0;
        assert!(matches!(build_race_misocp(&p, Formulation::Perspective), Err(Error::Config(_))));
    }

    #[test]
    fn toy_race_solves_with_monotone_trace() {
        let p = toy();
        let s = solve_race(&p, RaceMode::Joint, &RaceOptions::default()).unwrap();
        assert_eq!(s.status, RaceStatus::Optimal);
        assert!(s.gap <= 1e-6);
        assert!(s.t_end <= p.t_race * (1.0 + 1e-7));
        for w in s.stints.windows(2) {
            assert!(w[0].b_pit <= w[1].b_pit);
        }
        for w in s.trace.windows(2) {
            assert!(w[1].bound <= w[0].bound);
            assert!(w[1].incumbent >= w[0].incumbent || w[0].incumbent.is_infinite());
        }
    }

    #[test]
    fn tiny_race_is_infeasible() {
        let mut p = toy();
        p.t_race = 10.0;
        assert!(matches!(
            solve_race(&p, RaceMode::Joint, &RaceOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }
}
