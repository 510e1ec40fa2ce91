use serde::{Deserialize, Serialize};

use crate::normal;

/// Parametric marginal distribution of one name.
///
/// Each marginal carries one sensitivity parameter: the mean of a normal,
/// the log-volatility `s` of a lognormal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Marginal {
    /// `N(m, s^2)`
    Normal { m: f64, s: f64 },
    /// `exp(N(m, s^2))`
    Lognormal { m: f64, s: f64 },
}

impl Marginal {
    pub fn standard_normal() -> Self {
        Marginal::Normal { m: 0.0, s: 1.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (m, s) = match *self {
            Marginal::Normal { m, s } | Marginal::Lognormal { m, s } => (m, s),
        };
        if !(s > 0.0 && s.is_finite() && m.is_finite()) {
            return Err(format!("marginal {self:?} needs finite m and s > 0"));
        }
        Ok(())
    }

    /// Standardized variable and the scale `dz/dx`.
    fn standardize(&self, x: f64) -> (f64, f64) {
        match *self {
            Marginal::Normal { m, s } => ((x - m) / s, 1.0 / s),
            Marginal::Lognormal { m, s } => {
                if x <= 0.0 {
                    (f64::NEG_INFINITY, 0.0)
                } else {
                    ((x.ln() - m) / s, 1.0 / (x * s))
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal::cdf(self.standardize(x).0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (z, dz) = self.standardize(x);
        if dz == 0.0 {
            return 0.0;
        }
        normal::pdf(z) * dz
    }

    pub fn inv_cdf(&self, u: f64) -> f64 {
        let z = normal::inv_cdf(u);
        match *self {
            Marginal::Normal { m, s } => m + s * z,
            Marginal::Lognormal { m, s } => (m + s * z).exp(),
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            Marginal::Normal { m, .. } => m,
            Marginal::Lognormal { s, .. } => s,
        }
    }

    pub fn with_param(&self, p: f64) -> Self {
        match *self {
            Marginal::Normal { s, .. } => Marginal::Normal { m: p, s },
            Marginal::Lognormal { m, .. } => Marginal::Lognormal { m, s: p },
        }
    }

    /// `d cdf(x) / d param` at fixed `x`.
    pub fn dcdf_dparam(&self, x: f64) -> f64 {
        let (z, _) = self.standardize(x);
        match *self {
            Marginal::Normal { s, .. } => -normal::pdf(z) / s,
            Marginal::Lognormal { s, .. } => {
                if z.is_finite() {
                    -normal::pdf(z) * z / s
                } else {
                    0.0
                }
            }
        }
    }
}
