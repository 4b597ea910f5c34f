use serde::{Deserialize, Serialize};

use super::quadform::FitSample;
use crate::error::{Error, Result};

/// One motor-map point: shaft speed, torque and power loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorMapRow {
    pub omega_rad_s: f64,
    pub torque_nm: f64,
    pub p_loss_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmLossSamples {
    /// features `(v, F_m)`, target `F_m,l`
    pub samples: Vec<FitSample>,
    pub rejected: usize,
}

/// Converts a motor map to vehicle-frame force losses.
///
/// `v = ω·r_w/γ`, `F_m = T·γ/r_w`, `F_m,l = P_loss·γ/(ω·r_w)`. Rows with
/// `ω ≤ 0` are dropped and counted.
pub fn em_force_loss_samples(rows: &[MotorMapRow], gamma_fd: f64, r_w: f64) -> EmLossSamples {
    let mut samples = Vec::with_capacity(rows.len());
    let mut rejected = 0;
    for r in rows {
        if !(r.omega_rad_s > 0.0) {
            rejected += 1;
            continue;
        }
        let v = r.omega_rad_s * r_w / gamma_fd;
        let f_m = r.torque_nm * gamma_fd / r_w;
        let f_loss = r.p_loss_w * gamma_fd / (r.omega_rad_s * r_w);
        samples.push(FitSample::new(vec![v, f_m], f_loss));
    }
    if rejected > 0 {
        log::warn!("motor map: dropped {rejected} rows with non-positive speed");
    }
    EmLossSamples { samples, rejected }
}

pub fn read_motor_map(path: &std::path::Path) -> Result<Vec<MotorMapRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let row: MotorMapRow = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Reads two named numeric columns, e.g. `p_ac_w,p_dc_w` inverter samples.
pub fn read_power_pairs(path: &std::path::Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column {name}"),
        })
    };
    let (ix, iy) = (find(x)?, find(y)?);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: k + 2,
                message: format!("non-numeric value in column {}", &header[i]),
            })
        };
        out.push((num(ix)?, num(iy)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarFit {
    pub value: f64,
    /// Set when the data could not determine the value (or it was clamped).
    pub flagged: bool,
}

/// Least-squares `α` in `P_dc = α·P_ac² + P_ac`, clamped at zero.
pub fn fit_inverter_alpha(samples: &[(f64, f64)]) -> Result<ScalarFit> {
    if samples.is_empty() {
        return Err(Error::Argument("inverter fit needs at least one sample".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(p_ac, p_dc) in samples {
        let a2 = p_ac * p_ac;
        num += a2 * (p_dc - p_ac);
        den += a2 * a2;
    }
    if den == 0.0 {
        return Ok(ScalarFit {
            value: 0.0,
            flagged: true,
        });
    }
    let alpha = num / den;
    if alpha < 0.0 {
        log::warn!("inverter fit: negative alpha {alpha:.3e} clamped to zero");
        return Ok(ScalarFit {
            value: 0.0,
            flagged: true,
        });
    }
    Ok(ScalarFit {
        value: alpha,
        flagged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeLossFit {
    pub alpha_ch: f64,
    /// `1/P_sc` of the shared quadratic loss term.
    pub inv_p_sc: f64,
    pub flagged: bool,
}

/// Fits the two-branch battery model on `(P_b, P_i)` pairs:
/// `P_i = P_b + P_i²/P_sc` when discharging and
/// `P_i = (1 − α_ch)·P_b + P_i²/P_sc` when charging.
/// Both unknowns enter linearly, so this is a 2×2 least-squares problem.
pub fn fit_charge_loss_alpha(samples: &[(f64, f64)]) -> Result<ChargeLossFit> {
    if samples.len() < 2 {
        return Err(Error::Argument("charge-loss fit needs at least two samples".into()));
    }
    let has_pos = samples.iter().any(|s| s.0 > 0.0);
    let has_neg = samples.iter().any(|s| s.0 < 0.0);
    // residual: (P_i − P_b) − c·P_i² + α·P_b·[P_b < 0]
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(pb, pi) in samples {
        let u = pi * pi; // coefficient of c
        let w = if pb < 0.0 { -pb } else { 0.0 }; // coefficient of α
        let y = pi - pb;
        a11 += u * u;
        a12 += u * w;
        a22 += w * w;
        b1 += u * y;
        b2 += w * y;
    }
    if !(has_pos && has_neg) {
        let c = if a11 > 0.0 { b1 / a11 } else { 0.0 };
        log::warn!("charge-loss fit: data covers one power sign only, alpha_ch set to 0");
        return Ok(ChargeLossFit {
            alpha_ch: 0.0,
            inv_p_sc: c,
            flagged: true,
        });
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-300 {
        return Ok(ChargeLossFit {
            alpha_ch: 0.0,
            inv_p_sc: if a11 > 0.0 { b1 / a11 } else { 0.0 },
            flagged: true,
        });
    }
    let c = (b1 * a22 - b2 * a12) / det;
    let alpha = (a11 * b2 - a12 * b1) / det;
    Ok(ChargeLossFit {
        alpha_ch: alpha,
        inv_p_sc: c,
        flagged: false,
    })
}

/// Internal power for a terminal power under the two-branch model (the
/// smaller root of `c·P_i² − P_i + P_b' = 0`).
pub fn internal_power(p_b: f64, inv_p_sc: f64, alpha_ch: f64) -> f64 {
    let pb_eff = if p_b < 0.0 { (1.0 - alpha_ch) * p_b } else { p_b };
    if inv_p_sc == 0.0 {
        return pb_eff;
    }
    let disc = 1.0 - 4.0 * inv_p_sc * pb_eff;
    if disc < 0.0 {
        return f64::NAN;
    }
    // numerically stable smaller root
    2.0 * pb_eff / (1.0 + disc.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalStintFit {
    /// coefficients on `[N², N, 1]`
    pub d: [f64; 3],
    pub rmse_normalized: f64,
    pub n_samples: usize,
}

impl FinalStintFit {
    pub fn eval(&self, n: f64) -> f64 {
        self.d[0] * n * n + self.d[1] * n + self.d[2]
    }
}

/// Least squares on `[N², N, 1]` with a nonnegative leading coefficient.
pub fn fit_final_stint(points: &[(f64, f64)]) -> Result<FinalStintFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Argument(
            "final-stint fit needs at least three stint lengths".into(),
        ));
    }
    let lsq = |cols: usize| -> Option<Vec<f64>> {
        let a = nalgebra::DMatrix::from_fn(points.len(), cols, |r, c| {
            points[r].0.powi((cols - 1 - c) as i32)
        });
        let b = nalgebra::DVector::from_fn(points.len(), |r, _| points[r].1);
        let x = a.svd(true, true).solve(&b, 1e-14).ok()?;
        Some(x.iter().copied().collect())
    };
    let full = lsq(3).ok_or_else(|| Error::Argument("final-stint fit failed".into()))?;
    let d = if full[0] >= 0.0 {
        [full[0], full[1], full[2]]
    } else {
        let lin = lsq(2).ok_or_else(|| Error::Argument("final-stint fit failed".into()))?;
        [0.0, lin[0], lin[1]]
    };
    let mut fit = FinalStintFit {
        d,
        rmse_normalized: 0.0,
        n_samples: points.len(),
    };
    let se: f64 = points.iter().map(|p| (fit.eval(p.0) - p.1).powi(2)).sum();
    let ymax = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    fit.rmse_normalized = (se / points.len() as f64).sqrt() / ymax.max(f64::MIN_POSITIVE);
    Ok(fit)
}
