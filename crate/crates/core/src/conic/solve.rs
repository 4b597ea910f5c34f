use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::program::{Affine, ConicProgram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub obj: f64,
    /// Relative gap `|p − d| / max(1, min(|p|, |d|))`.
    pub duality_gap: f64,
    pub iterations: u32,
    /// Worst linear-row violation, relative to `1 + |rhs|`.
    pub max_linear_violation: f64,
    /// Worst cone violation, relative to `1 + |head|`.
    pub max_cone_violation: f64,
    pub solve_seconds: f64,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn trivial(status: SolveStatus, n: usize) -> Self {
        ConicSolution {
            status,
            x: vec![f64::NAN; n],
            obj: f64::NAN,
            duality_gap: f64::INFINITY,
            iterations: 0,
            max_linear_violation: f64::INFINITY,
            max_cone_violation: f64::INFINITY,
            solve_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub feas_tol: f64,
    /// Gap accepted as optimal by the post-check; the solver still aims for
    /// `tol`. `None` means `tol`.
    pub accept_gap: Option<f64>,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            feas_tol: 1e-7,
            accept_gap: None,
            max_iter: 200,
            verbose: false,
        }
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;

/// Solves `p` to relative gap `tol` with default settings otherwise.
pub fn solve(p: &ConicProgram, tol: f64) -> Result<ConicSolution> {
    solve_with(
        p,
        &SolveOptions {
            tol,
            ..SolveOptions::default()
        },
    )
}

/// Variables with `lb == ub` are substituted out and rows that become empty
/// are checked and dropped. Everything else goes to the interior-point backend
/// unchanged.
struct Reduced {
    map: Vec<Option<usize>>,
    fixed: Vec<f64>,
}

impl Reduced {
    fn substitute(&self, terms: &[(usize, f64)], constant: f64) -> (Vec<(usize, f64)>, f64) {
        let mut out = Vec::with_capacity(terms.len());
        let mut c0 = constant;
        for &(i, c) in terms {
            match self.map[i] {
                Some(j) => out.push((j, c)),
                None => c0 += c * self.fixed[i],
            }
        }
        (out, c0)
    }

    fn affine(&self, a: &Affine) -> (Vec<(usize, f64)>, f64) {
        self.substitute(&a.terms, a.constant)
    }
}

const EMPTY_ROW_TOL: f64 = 1e-9;

pub fn solve_with(p: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution> {
    if !(opts.tol > 0.0 && opts.tol <= 1e-2) {
        return Err(Error::Argument(format!(
            "gap tolerance must lie in (0, 1e-2], got {}",
            opts.tol
        )));
    }
    p.validate()?;
    let started = Instant::now();
    let n_orig = p.n_vars();

    let mut map = vec![None; n_orig];
    let mut fixed = vec![0.0; n_orig];
    let mut n = 0;
    for i in 0..n_orig {
        let (lb, ub) = (p.lower[i], p.upper[i]);
        if lb > ub {
            return Ok(ConicSolution::trivial(SolveStatus::Infeasible, n_orig));
        }
        if lb == ub {
            fixed[i] = lb;
        } else {
            map[i] = Some(n);
            n += 1;
        }
    }
    let red = Reduced { map, fixed };

    let mut rows_i: Vec<usize> = Vec::new();
    let mut rows_j: Vec<usize> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    // row helper: A-row = -terms, b = constant, so that s = b - A x = affine(x).
    let push_row = |terms: &[(usize, f64)],
                    c0: f64,
                    ri: &mut Vec<usize>,
                    rj: &mut Vec<usize>,
                    v: &mut Vec<f64>,
                    b: &mut Vec<f64>| {
        let r = b.len();
        for &(j, c) in terms {
            ri.push(r);
            rj.push(j);
            v.push(-c);
        }
        b.push(c0);
    };

    // equalities: rhs - coefs·x = 0
    let mut n_eq = 0;
    for row in &p.eq_constraints {
        let (t, c0) = red.substitute(&row.coefs, 0.0);
        let rhs = row.rhs - c0;
        if t.is_empty() {
            if rhs.abs() > EMPTY_ROW_TOL * (1.0 + row.rhs.abs()) {
                return Ok(ConicSolution::trivial(SolveStatus::Infeasible, n_orig));
            }
            continue;
        }
        let neg: Vec<(usize, f64)> = t.iter().map(|&(j, c)| (j, -c)).collect();
        push_row(&neg, rhs, &mut rows_i, &mut rows_j, &mut vals, &mut b);
        n_eq += 1;
    }
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }

    // inequalities and finite bounds: slack rhs - coefs·x ≥ 0
    let mut n_ineq = 0;
    for row in &p.ineq_constraints {
        let (t, c0) = red.substitute(&row.coefs, 0.0);
        let rhs = row.rhs - c0;
        if t.is_empty() {
            if rhs < -EMPTY_ROW_TOL * (1.0 + row.rhs.abs()) {
                return Ok(ConicSolution::trivial(SolveStatus::Infeasible, n_orig));
            }
            continue;
        }
        let neg: Vec<(usize, f64)> = t.iter().map(|&(j, c)| (j, -c)).collect();
        push_row(&neg, rhs, &mut rows_i, &mut rows_j, &mut vals, &mut b);
        n_ineq += 1;
    }
    for i in 0..n_orig {
        if let Some(j) = red.map[i] {
            if p.upper[i].is_finite() {
                push_row(&[(j, -1.0)], p.upper[i], &mut rows_i, &mut rows_j, &mut vals, &mut b);
                n_ineq += 1;
            }
            if p.lower[i].is_finite() {
                push_row(&[(j, 1.0)], -p.lower[i], &mut rows_i, &mut rows_j, &mut vals, &mut b);
                n_ineq += 1;
            }
        }
    }
    if n_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
    }

    for soc in &p.soc_constraints {
        let head = red.affine(&soc.head);
        let tail: Vec<_> = soc.tail.iter().map(|a| red.affine(a)).collect();
        if head.0.is_empty() && tail.iter().all(|t| t.0.is_empty()) {
            let norm = tail.iter().map(|t| t.1 * t.1).sum::<f64>().sqrt();
            if norm - head.1 > EMPTY_ROW_TOL * (1.0 + head.1.abs()) {
                return Ok(ConicSolution::trivial(SolveStatus::Infeasible, n_orig));
            }
            continue;
        }
        push_row(&head.0, head.1, &mut rows_i, &mut rows_j, &mut vals, &mut b);
        for t in &tail {
            push_row(&t.0, t.1, &mut rows_i, &mut rows_j, &mut vals, &mut b);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + tail.len()));
    }

    let mut q = vec![0.0; n];
    let mut obj_const = p.objective_constant;
    for i in 0..n_orig {
        match red.map[i] {
            Some(j) => q[j] = p.objective[i],
            None => obj_const += p.objective[i] * red.fixed[i],
        }
    }

    let finish = |x_red: &[f64], status: SolveStatus, gap: f64, iters: u32| {
        let x: Vec<f64> = (0..n_orig)
            .map(|i| match red.map[i] {
                Some(j) => x_red[j],
                None => red.fixed[i],
            })
            .collect();
        let (lin, soc) = relative_violations(p, &x);
        let obj = p.objective_value(&x);
        ConicSolution {
            status,
            x,
            obj,
            duality_gap: gap,
            iterations: iters,
            max_linear_violation: lin,
            max_cone_violation: soc,
            solve_seconds: started.elapsed().as_secs_f64(),
        }
    };

    if n == 0 || b.is_empty() {
        if q.iter().any(|&c| c != 0.0) {
            // no rows left but a free variable with nonzero cost
            return Ok(ConicSolution::trivial(SolveStatus::Unbounded, n_orig));
        }
        let sol = finish(&vec![0.0; n], SolveStatus::Optimal, 0.0, 0);
        return Ok(checked(sol, opts));
    }

    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, rows_i, rows_j, vals);
    let pmat = CscMatrix::<f64>::zeros((n, n));
    let settings = DefaultSettingsBuilder::default()
        .verbose(opts.verbose)
        .max_iter(opts.max_iter)
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .tol_feas(opts.feas_tol.min(1e-8))
        .tol_ktratio(1e-7)
        .build()
        .map_err(|e| Error::Argument(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::Argument(format!("solver setup: {e:?}")))?;
    solver.solve();
    let s = &solver.solution;

    let pval = s.obj_val + obj_const;
    let dval = s.obj_val_dual + obj_const;
    let gap = if pval.is_finite() && dval.is_finite() {
        (pval - dval).abs() / 1f64.max(pval.abs().min(dval.abs()))
    } else {
        f64::INFINITY
    };

    let status = match s.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        // the backend gave up near the end; keep the iterate if our own dual
        // certificate holds (primal side and gap are checked below)
        SolverStatus::InsufficientProgress | SolverStatus::NumericalError
            if dual_certified(&a, &q, &s.z, &cones, opts.feas_tol) =>
        {
            SolveStatus::Optimal
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterLimit,
        _ => SolveStatus::NumericalFailure,
    };
    let sol = finish(&s.x, status, gap, s.iterations);
    log::debug!(
        "conic solve: {:?} -> {:?}, gap {:.2e}, viol ({:.2e}, {:.2e}), {} iters",
        s.status,
        sol.status,
        sol.duality_gap,
        sol.max_linear_violation,
        sol.max_cone_violation,
        sol.iterations
    );
    Ok(checked(sol, opts))
}

/// `‖q + Aᵀz‖∞` small relative to `‖q‖∞` and `z` inside the dual cone
/// (all cones used here are self-dual).
fn dual_certified(
    a: &CscMatrix<f64>,
    q: &[f64],
    z: &[f64],
    cones: &[SupportedConeT<f64>],
    tol: f64,
) -> bool {
    if z.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..a.n {
        let mut r = q[j];
        for k in a.colptr[j]..a.colptr[j + 1] {
            r += a.nzval[k] * z[a.rowval[k]];
        }
        if r.abs() > tol * (1.0 + qmax) {
            return false;
        }
    }
    let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slack = tol * (1.0 + zmax);
    let mut i = 0;
    for c in cones {
        match *c {
            SupportedConeT::ZeroConeT(d) => i += d,
            SupportedConeT::NonnegativeConeT(d) => {
                if z[i..i + d].iter().any(|&v| v < -slack) {
                    return false;
                }
                i += d;
            }
            SupportedConeT::SecondOrderConeT(d) => {
                let t = z[i + 1..i + d].iter().map(|v| v * v).sum::<f64>().sqrt();
                if z[i] < t - slack {
                    return false;
                }
                i += d;
            }
            _ => return false,
        }
    }
    true
}

/// Only certify optimality when our own gap and feasibility checks agree.
fn checked(mut sol: ConicSolution, opts: &SolveOptions) -> ConicSolution {
    if sol.status == SolveStatus::Optimal {
        let feasible =
            sol.max_linear_violation <= opts.feas_tol && sol.max_cone_violation <= opts.feas_tol;
        let gap_ok = sol.duality_gap <= opts.accept_gap.unwrap_or(opts.tol).max(opts.tol);
        if !(feasible && gap_ok) {
            sol.status = SolveStatus::NumericalFailure;
        }
    }
    sol
}

/// Row violations relative to `1 + |rhs|` (bounds relative to `1 + |bound|`)
/// and cone violations relative to `1 + |head|`.
pub fn relative_violations(p: &ConicProgram, x: &[f64]) -> (f64, f64) {
    let mut lin = 0.0f64;
    for r in &p.eq_constraints {
        lin = lin.max((r.lhs(x) - r.rhs).abs() / (1.0 + r.rhs.abs()));
    }
    for r in &p.ineq_constraints {
        lin = lin.max((r.lhs(x) - r.rhs) / (1.0 + r.rhs.abs()));
    }
    for (i, &v) in x.iter().enumerate() {
        if p.lower[i].is_finite() {
            lin = lin.max((p.lower[i] - v) / (1.0 + p.lower[i].abs()));
        }
        if p.upper[i].is_finite() {
            lin = lin.max((v - p.upper[i]) / (1.0 + p.upper[i].abs()));
        }
    }
    let soc = p
        .soc_constraints
        .iter()
        .map(|c| c.relative_violation(x))
        .fold(0.0f64, f64::max);
    (lin, soc)
}
