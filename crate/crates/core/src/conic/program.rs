use std::collections::HashMap;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Sparse affine function `Σ cᵢ·x[i] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize) -> Self {
        Self::term(idx, 1.0)
    }

    pub fn term(idx: usize, coef: f64) -> Self {
        Affine {
            terms: vec![(idx, coef)],
            constant: 0.0,
        }
    }

    pub fn with_term(mut self, idx: usize, coef: f64) -> Self {
        self.terms.push((idx, coef));
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    /// Merges duplicate indices and drops exact zeros. Order is by index.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Affine {
            terms: out,
            constant: self.constant,
        }
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, t| m.max(t.1.abs()))
    }

    fn scale_in_place(&mut self, k: f64) {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl AddAssign for Affine {
    fn add_assign(&mut self, rhs: Affine) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self + (-rhs)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(mut self) -> Affine {
        self.scale_in_place(-1.0);
        self
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(mut self, k: f64) -> Affine {
        self.scale_in_place(k);
        self
    }
}

/// `coefs·x (= or ≤) rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

/// `‖tail(x)‖₂ ≤ head(x)`, i.e. `‖A·x + b‖ ≤ c·x + d` with `head = c·x + d`
/// and one affine function per row of `A·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub head: Affine,
    pub tail: Vec<Affine>,
}

impl SocConstraint {
    /// Signed violation `‖tail‖ − head` (≤ 0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let norm = self
            .tail
            .iter()
            .map(|a| a.eval(x).powi(2))
            .sum::<f64>()
            .sqrt();
        norm - self.head.eval(x)
    }

    /// Violation relative to `1 + |head|`.
    pub fn relative_violation(&self, x: &[f64]) -> f64 {
        self.violation(x) / (1.0 + self.head.eval(x).abs())
    }
}

/// Handle returned by the constraint builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    Eq(usize),
    Ineq(usize),
    Soc(usize),
}

/// Linear-objective SOCP in a solver-neutral form.
///
/// Rows added through the builder methods are normalised so the largest
/// coefficient magnitude is one; this does not change the feasible set.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub eq_constraints: Vec<LinearRow>,
    pub ineq_constraints: Vec<LinearRow>,
    pub soc_constraints: Vec<SocConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    names: Vec<String>,
    name_index: HashMap<String, usize>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.add_var_bounded(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_var_bounded(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> usize {
        let idx = self.objective.len();
        let name = name.into();
        self.objective.push(0.0);
        self.lower.push(lb);
        self.upper.push(ub);
        self.integer.push(false);
        if !name.is_empty() {
            self.name_index.insert(name.clone(), idx);
        }
        self.names.push(name);
        idx
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    pub fn var_name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn set_bounds(&mut self, idx: usize, lb: f64, ub: f64) {
        self.lower[idx] = lb;
        self.upper[idx] = ub;
    }

    pub fn fix(&mut self, idx: usize, value: f64) {
        self.set_bounds(idx, value, value);
    }

    pub fn set_integer(&mut self, idx: usize, flag: bool) {
        self.integer[idx] = flag;
    }

    pub fn set_objective(&mut self, idx: usize, c: f64) {
        self.objective[idx] = c;
    }

    /// Adds `expr` to the (minimised) objective.
    pub fn add_objective(&mut self, expr: &Affine) {
        for &(i, c) in &expr.terms {
            self.objective[i] += c;
        }
        self.objective_constant += expr.constant;
    }

    fn check_expr(&self, expr: &Affine) -> Result<()> {
        let n = self.n_vars();
        for &(i, c) in &expr.terms {
            if i >= n {
                return Err(Error::Argument(format!(
                    "variable index {i} out of range ({n} variables)"
                )));
            }
            if !c.is_finite() {
                return Err(Error::Argument(format!(
                    "non-finite coefficient on variable {i}"
                )));
            }
        }
        if !expr.constant.is_finite() {
            return Err(Error::Argument("non-finite constant term".into()));
        }
        Ok(())
    }

    fn row_from(&self, expr: Affine) -> Result<LinearRow> {
        self.check_expr(&expr)?;
        let mut e = expr.compact();
        let m = e.max_abs_coef();
        if m > 0.0 {
            e.scale_in_place(1.0 / m);
        }
        Ok(LinearRow {
            coefs: e.terms,
            rhs: -e.constant,
        })
    }

    /// `expr == 0`
    pub fn add_eq(&mut self, expr: Affine) -> Result<ConstraintId> {
        let row = self.row_from(expr)?;
        self.eq_constraints.push(row);
        Ok(ConstraintId::Eq(self.eq_constraints.len() - 1))
    }

    /// `expr ≤ 0`
    pub fn add_le(&mut self, expr: Affine) -> Result<ConstraintId> {
        let row = self.row_from(expr)?;
        self.ineq_constraints.push(row);
        Ok(ConstraintId::Ineq(self.ineq_constraints.len() - 1))
    }

    /// `lhs ≤ rhs`
    pub fn add_le2(&mut self, lhs: Affine, rhs: Affine) -> Result<ConstraintId> {
        self.add_le(lhs - rhs)
    }

    /// `lhs ≥ rhs`
    pub fn add_ge2(&mut self, lhs: Affine, rhs: Affine) -> Result<ConstraintId> {
        self.add_le(rhs - lhs)
    }

    /// `‖tail‖₂ ≤ head`
    pub fn add_soc(&mut self, head: Affine, tail: Vec<Affine>) -> Result<ConstraintId> {
        if tail.is_empty() {
            return Err(Error::Argument("second-order cone needs a nonempty tail".into()));
        }
        self.check_expr(&head)?;
        for t in &tail {
            self.check_expr(t)?;
        }
        let mut head = head.compact();
        let mut tail: Vec<Affine> = tail.into_iter().map(Affine::compact).collect();
        let m = tail
            .iter()
            .map(Affine::max_abs_coef)
            .fold(head.max_abs_coef(), f64::max);
        if m > 0.0 {
            head.scale_in_place(1.0 / m);
            for t in &mut tail {
                t.scale_in_place(1.0 / m);
            }
        }
        self.soc_constraints.push(SocConstraint { head, tail });
        Ok(ConstraintId::Soc(self.soc_constraints.len() - 1))
    }

    /// `x·y ≥ ‖z‖²` with `x, y ≥ 0`, written as `x + y ≥ ‖(2z, x − y)‖`.
    pub fn add_rotated_cone(
        &mut self,
        x_idx: usize,
        y_idx: usize,
        z_idxs: &[usize],
    ) -> Result<ConstraintId> {
        let n = self.n_vars();
        if let Some(bad) = [x_idx, y_idx].iter().chain(z_idxs).find(|&&i| i >= n) {
            return Err(Error::Argument(format!(
                "variable index {bad} out of range ({n} variables)"
            )));
        }
        let z: Vec<Affine> = z_idxs.iter().map(|&i| Affine::var(i)).collect();
        self.add_rotated_cone_affine(Affine::var(x_idx), Affine::var(y_idx), z)
    }

    /// Affine version of [`add_rotated_cone`](Self::add_rotated_cone).
    pub fn add_rotated_cone_affine(
        &mut self,
        x: Affine,
        y: Affine,
        z: Vec<Affine>,
    ) -> Result<ConstraintId> {
        let head = x.clone() + y.clone();
        let mut tail: Vec<Affine> = z.into_iter().map(|zi| zi * 2.0).collect();
        tail.push(x - y);
        self.add_soc(head, tail)
    }

    /// Friction ellipse `‖(Fx/μx, Fy/μy)‖ ≤ Fz`.
    pub fn add_friction_cone(
        &mut self,
        fx_idx: usize,
        fy_idx: usize,
        fz_idx: usize,
        mu_x: f64,
        mu_y: f64,
    ) -> Result<ConstraintId> {
        self.add_friction_cone_affine(
            Affine::var(fx_idx),
            Affine::var(fy_idx),
            Affine::var(fz_idx),
            mu_x,
            mu_y,
        )
    }

    pub fn add_friction_cone_affine(
        &mut self,
        fx: Affine,
        fy: Affine,
        fz: Affine,
        mu_x: f64,
        mu_y: f64,
    ) -> Result<ConstraintId> {
        if !(mu_x > 0.0 && mu_y > 0.0) {
            return Err(Error::Argument(format!(
                "friction coefficients must be positive (got {mu_x}, {mu_y})"
            )));
        }
        self.add_soc(fz, vec![fx * (1.0 / mu_x), fy * (1.0 / mu_y)])
    }

    /// Objective value including the constant offset.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective
            .iter()
            .zip(x)
            .map(|(c, v)| c * v)
            .sum::<f64>()
            + self.objective_constant
    }

    /// Largest absolute violation over rows and bounds, and largest relative
    /// cone violation.
    pub fn max_violation(&self, x: &[f64]) -> (f64, f64) {
        let mut lin = 0.0f64;
        for r in &self.eq_constraints {
            lin = lin.max((r.lhs(x) - r.rhs).abs());
        }
        for r in &self.ineq_constraints {
            lin = lin.max(r.lhs(x) - r.rhs);
        }
        for (i, &v) in x.iter().enumerate() {
            lin = lin.max(self.lower[i] - v).max(v - self.upper[i]);
        }
        let soc = self
            .soc_constraints
            .iter()
            .map(|c| c.relative_violation(x))
            .fold(0.0f64, f64::max);
        (lin, soc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("objective has non-finite entries".into()));
        }
        for (i, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::Argument(format!("bad bounds on variable {i}")));
            }
        }
        Ok(())
    }
}
