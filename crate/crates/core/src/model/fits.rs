use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{FinalStintFit, QuadFormFit, Sign};

/// Fitted surrogates consumed by the stint and race problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBundle {
    /// EM force loss, PSD, features `[1/√v, √v, F_m/√v]`.
    pub q_m_l: QuadFormFit,
    /// EM temperature surrogate, NSD plus offset.
    pub q_m_theta: QuadFormFit,
    /// Short-circuit power, NSD plus offset, features `[1, E_b, ϑ_b]`.
    pub q_b_l: QuadFormFit,
    /// Battery temperature surrogate, NSD plus offset.
    pub q_b_theta: QuadFormFit,
    pub alpha_inv: f64,
    #[serde(default)]
    pub alpha_inv_flagged: bool,
    pub alpha_ch: f64,
    #[serde(default)]
    pub alpha_ch_flagged: bool,
    /// Stint-time surface, PSD, features `[1/√t_c, √t_c, N/√t_c]`.
    #[serde(default)]
    pub q_s: Option<QuadFormFit>,
    /// Final-stint time on `[N², N, 1]`.
    #[serde(default)]
    pub d_s_f: Option<FinalStintFit>,
}

impl FitBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let b: FitBundle = serde_json::from_str(&text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let members = [
            ("q_m_l", &self.q_m_l, Sign::Psd, 3),
            ("q_m_theta", &self.q_m_theta, Sign::Nsd, 2),
            ("q_b_l", &self.q_b_l, Sign::Nsd, 3),
            ("q_b_theta", &self.q_b_theta, Sign::Nsd, 2),
        ];
        for (name, fit, sign, dim) in members {
            check_member(name, fit, sign, dim)?;
        }
        if let Some(q) = &self.q_s {
            check_member("q_s", q, Sign::Psd, 3)?;
        }
        if let Some(d) = &self.d_s_f {
            if d.d[0] < 0.0 || d.d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("d_s_f must be finite and convex in N".into()));
            }
        }
        if !(self.alpha_inv >= 0.0) || !(self.alpha_ch < 1.0) {
            return Err(Error::Config("alpha_inv ≥ 0 and alpha_ch < 1 required".into()));
        }
        Ok(())
    }

    pub fn stint_surface(&self) -> Result<&QuadFormFit> {
        self.q_s
            .as_ref()
            .ok_or_else(|| Error::Config("fit bundle has no stint-time surface (q_s)".into()))
    }

    pub fn final_stint(&self) -> Result<&FinalStintFit> {
        self.d_s_f
            .as_ref()
            .ok_or_else(|| Error::Config("fit bundle has no final-stint fit (d_s_f)".into()))
    }
}

fn check_member(name: &str, fit: &QuadFormFit, sign: Sign, dim: usize) -> Result<()> {
    if fit.dim() != dim || fit.q.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("{name} must be {dim}x{dim}")));
    }
    if fit.sign != sign {
        return Err(Error::Config(format!("{name} must be {sign:?}")));
    }
    if !fit.is_sign_certified(1e-8) {
        return Err(Error::Config(format!(
            "{name} violates its sign constraint ({:.3e})",
            fit.sign_violation()
        )));
    }
    Ok(())
}
