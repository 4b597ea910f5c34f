use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Psd,
    Nsd,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Psd => 1.0,
            Sign::Nsd => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSample {
    /// Raw inputs; the feature map turns them into the quadratic-form vector.
    pub features: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

impl FitSample {
    pub fn new(features: Vec<f64>, target: f64) -> Self {
        FitSample {
            features,
            target,
            weight: 1.0,
        }
    }
}

/// Feature maps used by the convex surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMap {
    /// `(v, F_m) ↦ [1/√v, √v, F_m/√v]`
    EmLoss,
    /// `ϑ ↦ [1, ϑ]`
    Temperature,
    /// `(E_b, ϑ_b) ↦ [1, E_b, ϑ_b]`
    Battery,
    /// `(t_c, N) ↦ [1/√t_c, √t_c, N/√t_c]`
    StintTime,
    /// features used as given
    Identity,
}

impl FeatureMap {
    pub fn apply(self, raw: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::EmLoss | FeatureMap::StintTime => {
                let r = raw[0].sqrt();
                vec![1.0 / r, r, raw[1] / r]
            }
            FeatureMap::Temperature => vec![1.0, raw[0]],
            FeatureMap::Battery => vec![1.0, raw[0], raw[1]],
            FeatureMap::Identity => raw.to_vec(),
        }
    }

    fn input_len(self) -> Option<usize> {
        match self {
            FeatureMap::EmLoss | FeatureMap::StintTime | FeatureMap::Battery => Some(2),
            FeatureMap::Temperature => Some(1),
            FeatureMap::Identity => None,
        }
    }
}

/// Sign-constrained quadratic surrogate `xᵀ Q x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadFormFit {
    pub q: Vec<Vec<f64>>,
    pub offset: f64,
    pub sign: Sign,
    pub map: FeatureMap,
    pub rmse_normalized: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub ill_conditioned: bool,
    #[serde(default)]
    pub poor_fit: bool,
}

impl QuadFormFit {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.q[i][j])
    }

    /// `xᵀ Q x` for an already mapped feature vector.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                s += x[i] * self.q[i][j] * x[j];
            }
        }
        s
    }

    /// Surrogate value at raw inputs.
    pub fn eval(&self, raw: &[f64]) -> f64 {
        self.quad(&self.map.apply(raw)) + self.offset
    }

    /// `Lᵀ` rows with `±Q = L Lᵀ`, so that `±xᵀQx = ‖Lᵀ x‖²`.
    pub fn factor_rows(&self) -> Vec<Vec<f64>> {
        let m = self.matrix() * self.sign.factor();
        let l = psd_factor(&m);
        let d = self.dim();
        (0..d).map(|r| (0..d).map(|c| l[(c, r)]).collect()).collect()
    }

    /// Extreme eigenvalue on the wrong side, relative to ‖Q‖ (≤ 0 is good).
    pub fn sign_violation(&self) -> f64 {
        let m = self.matrix();
        let norm = m.norm().max(f64::MIN_POSITIVE);
        let eig = SymmetricEigen::new(m).eigenvalues;
        match self.sign {
            Sign::Psd => -eig.min() / norm,
            Sign::Nsd => eig.max() / norm,
        }
    }

    pub fn is_sign_certified(&self, tol: f64) -> bool {
        self.sign_violation() <= tol
    }
}

/// Factor `L` (lower triangular where possible) with `L Lᵀ = M` for a PSD `M`.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut f = eig.eigenvectors.clone();
    for j in 0..d {
        let lam = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..d {
            f[(i, j)] *= lam;
        }
    }
    // F Fᵀ = M; take L = Rᵀ from F = L Qᵀ via QR of Fᵀ
    let qr = f.transpose().qr();
    qr.r().transpose()
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Denominator of the normalised RMSE; `None` uses max |target|.
    pub rmse_reference: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            restarts: 8,
            max_iter: 400,
            rmse_reference: None,
        }
    }
}

/// Offset rule: NSD surrogates sit below `1.05 · max target`, PSD ones have none.
pub fn default_offset(samples: &[FitSample], sign: Sign) -> f64 {
    match sign {
        Sign::Psd => 0.0,
        Sign::Nsd => {
            1.05 * samples
                .iter()
                .map(|s| s.target)
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

pub fn fit_quadratic_form(
    samples: &[FitSample],
    map: FeatureMap,
    sign: Sign,
    opts: &FitOptions,
) -> Result<QuadFormFit> {
    let offset = default_offset(samples, sign);
    fit_quadratic_form_with_offset(samples, map, sign, offset, opts)
}

fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Least squares over `Q = ±L Lᵀ` by Levenberg–Marquardt, started from the
/// eigen-clipped unconstrained solution plus seeded random restarts.
pub fn fit_quadratic_form_with_offset(
    samples: &[FitSample],
    map: FeatureMap,
    sign: Sign,
    offset: f64,
    opts: &FitOptions,
) -> Result<QuadFormFit> {
    if samples.is_empty() {
        return Err(Error::Argument("no samples to fit".into()));
    }
    if let Some(k) = map.input_len() {
        if samples.iter().any(|s| s.features.len() != k) {
            return Err(Error::Argument(format!(
                "feature map {map:?} expects {k} inputs per sample"
            )));
        }
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| map.apply(&s.features)).collect();
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Argument("inconsistent feature lengths".into()));
    }
    let need = vech_len(d) + 1;
    if samples.len() < need {
        return Err(Error::Argument(format!(
            "need at least {need} samples for a {d}x{d} form, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !(s.weight >= 0.0) || !s.target.is_finite())
        || xs.iter().flatten().any(|v| !v.is_finite())
    {
        return Err(Error::Argument("samples must be finite with weight ≥ 0".into()));
    }

    // scale features to unit max magnitude and targets by their max magnitude
    let mut dscale = vec![1.0; d];
    for (j, dj) in dscale.iter_mut().enumerate() {
        let m = xs.iter().map(|x| x[j].abs()).fold(0.0, f64::max);
        if m > 0.0 {
            *dj = 1.0 / m;
        }
    }
    let ymax = samples
        .iter()
        .map(|s| (s.target - offset).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let xt: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&dscale).map(|(a, b)| a * b).collect())
        .collect();
    let yt: Vec<f64> = samples
        .iter()
        .map(|s| (s.target - offset) / ymax)
        .collect();
    let sw: Vec<f64> = samples.iter().map(|s| s.weight.sqrt()).collect();

    // unconstrained least squares on vech(Q)
    let nv = vech_len(d);
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let a = DMatrix::from_fn(xt.len(), nv, |r, c| {
        let (i, j) = pairs[c];
        let f = if i == j { 1.0 } else { 2.0 };
        sw[r] * f * xt[r][i] * xt[r][j]
    });
    let b = DVector::from_fn(xt.len(), |r, _| sw[r] * yt[r]);
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ill_conditioned = !(smin > 1e-10 * smax);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * &b;
    let ridge = if ill_conditioned {
        1e-10 * ata.trace().max(f64::MIN_POSITIVE)
    } else {
        0.0
    };
    let sol = (ata + DMatrix::identity(nv, nv) * ridge)
        .lu()
        .solve(&atb)
        .unwrap_or_else(|| DVector::zeros(nv));
    let mut q0 = DMatrix::zeros(d, d);
    for (c, &(i, j)) in pairs.iter().enumerate() {
        q0[(i, j)] = sol[c];
        q0[(j, i)] = sol[c];
    }
    let sgn = sign.factor();
    let clipped = clip_to_psd(&(q0 * sgn));
    let l_init = psd_factor(&clipped);

    let problem = LmProblem {
        xt: &xt,
        yt: &yt,
        sw: &sw,
        sgn,
        d,
    };
    let mut best_theta = pack_lower(&l_init);
    best_theta = problem.levenberg_marquardt(best_theta, opts.max_iter);
    let mut best_cost = problem.cost(&best_theta);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale0 = (clipped.trace() / d as f64).abs().sqrt().max(1e-3);
    for _ in 1..opts.restarts.max(1) {
        let theta: Vec<f64> = (0..nv)
            .map(|_| rng.random_range(-1.0..1.0) * scale0)
            .collect();
        let theta = problem.levenberg_marquardt(theta, opts.max_iter);
        let c = problem.cost(&theta);
        if c < best_cost {
            best_cost = c;
            best_theta = theta;
        }
    }

    // unscale: Q = ymax · sgn · D L Lᵀ D
    let l = unpack_lower(&best_theta, d);
    let qt = &l * l.transpose();
    let mut q = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            q[i][j] = sgn * ymax * dscale[i] * qt[(i, j)] * dscale[j];
        }
    }
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (q[i][j] + q[j][i]);
            q[i][j] = m;
            q[j][i] = m;
        }
    }

    let mut fit = QuadFormFit {
        q,
        offset,
        sign,
        map,
        rmse_normalized: 0.0,
        n_samples: samples.len(),
        ill_conditioned,
        poor_fit: false,
    };
    let (mut se, mut wsum) = (0.0, 0.0);
    for (s, x) in samples.iter().zip(&xs) {
        let r = fit.quad(x) + offset - s.target;
        se += s.weight * r * r;
        wsum += s.weight;
    }
    let rmse = (se / wsum.max(f64::MIN_POSITIVE)).sqrt();
    let reference = opts.rmse_reference.unwrap_or_else(|| {
        samples
            .iter()
            .map(|s| s.target.abs())
            .fold(0.0, f64::max)
    });
    fit.rmse_normalized = if reference > 0.0 { rmse / reference } else { rmse };
    fit.poor_fit = fit.rmse_normalized >= 1.0;
    if fit.ill_conditioned {
        log::warn!("quadratic-form fit ({map:?}): ill-conditioned features, ridge applied");
    }
    if fit.poor_fit {
        log::warn!(
            "quadratic-form fit ({map:?}): sign-constrained RMSE {:.1}% is not informative",
            100.0 * fit.rmse_normalized
        );
    }
    Ok(fit)
}

fn clip_to_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let lam = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose()
}

fn pack_lower(l: &DMatrix<f64>) -> Vec<f64> {
    let d = l.nrows();
    let mut v = Vec::with_capacity(vech_len(d));
    for i in 0..d {
        for j in 0..=i {
            v.push(l[(i, j)]);
        }
    }
    v
}

fn unpack_lower(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = v[k];
            k += 1;
        }
    }
    l
}

struct LmProblem<'a> {
    xt: &'a [Vec<f64>],
    yt: &'a [f64],
    sw: &'a [f64],
    sgn: f64,
    d: usize,
}

impl LmProblem<'_> {
    fn residuals(&self, theta: &[f64]) -> DVector<f64> {
        let l = unpack_lower(theta, self.d);
        DVector::from_fn(self.xt.len(), |r, _| {
            let x = DVector::from_column_slice(&self.xt[r]);
            let w = l.transpose() * x;
            self.sw[r] * (self.sgn * w.norm_squared() - self.yt[r])
        })
    }

    fn cost(&self, theta: &[f64]) -> f64 {
        self.residuals(theta).norm_squared()
    }

    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let l = unpack_lower(theta, self.d);
        let mut jac = DMatrix::zeros(self.xt.len(), theta.len());
        for (r, xr) in self.xt.iter().enumerate() {
            let x = DVector::from_column_slice(xr);
            let w = l.transpose() * &x;
            let mut k = 0;
            for a in 0..self.d {
                for b in 0..=a {
                    jac[(r, k)] = self.sw[r] * self.sgn * 2.0 * x[a] * w[b];
                    k += 1;
                }
            }
        }
        jac
    }

    fn levenberg_marquardt(&self, mut theta: Vec<f64>, max_iter: usize) -> Vec<f64> {
        let n = theta.len();
        let mut res = self.residuals(&theta);
        let mut cost = res.norm_squared();
        let mut mu = 1e-3;
        for _ in 0..max_iter {
            let jac = self.jacobian(&theta);
            let g = jac.transpose() * &res;
            if g.amax() < 1e-15 {
                break;
            }
            let jtj = jac.transpose() * &jac;
            let mut improved = false;
            for _ in 0..30 {
                let mut lhs = jtj.clone();
                for i in 0..n {
                    lhs[(i, i)] += mu * (1.0 + jtj[(i, i)]);
                }
                let step = match lhs.cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => {
                        mu *= 10.0;
                        continue;
                    }
                };
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let cres = self.residuals(&cand);
                let ccost = cres.norm_squared();
                if ccost < cost {
                    let rel = (cost - ccost) / cost.max(1e-300);
                    theta = cand;
                    res = cres;
                    cost = ccost;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-14 {
                        return theta;
                    }
                    break;
                }
                mu *= 10.0;
            }
            if !improved || cost < 1e-30 {
                break;
            }
        }
        theta
    }
}
