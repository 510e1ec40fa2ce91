use serde::{Deserialize, Serialize};

use super::SdeError;

/// Terminal payoff `G(X_T)` with its (almost-everywhere) gradient.
///
/// Only Lipschitz payoffs can be built: pathwise derivatives of
/// discontinuous payoffs are wrong, so digitals are refused up front.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    /// `disc * max(w . x - K, 0)`; a single-asset call has `w = [1]`.
    Call { strike: f64, weights: Vec<f64>, discount: f64 },
    /// `disc * max(K - w . x, 0)`
    Put { strike: f64, weights: Vec<f64>, discount: f64 },
    /// `disc * sum_i x_i^power`
    SmoothPower { power: i32, discount: f64 },
}

/// Configuration-level payoff description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffSpec {
    Call {
        strike: f64,
        #[serde(default = "one")]
        discount: f64,
    },
    Put {
        strike: f64,
        #[serde(default = "one")]
        discount: f64,
    },
    BasketCall {
        strike: f64,
        weights: Vec<f64>,
        #[serde(default = "one")]
        discount: f64,
    },
    SmoothPower {
        power: i32,
        #[serde(default = "one")]
        discount: f64,
    },
    Digital {
        strike: f64,
        #[serde(default = "one")]
        discount: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl PayoffSpec {
    /// Builds the payoff for a model of dimension `dim`.
    pub fn build(&self, dim: usize) -> Result<Payoff, SdeError> {
        let single = |what: &str| {
            if dim == 1 {
                Ok(vec![1.0])
            } else {
                Err(SdeError::InvalidPayoff(format!(
                    "{what} payoff needs a one-dimensional model, got dimension {dim}"
                )))
            }
        };
        let payoff = match self {
            PayoffSpec::Call { strike, discount } => Payoff::Call {
                strike: *strike,
                weights: single("call")?,
                discount: *discount,
            },
            PayoffSpec::Put { strike, discount } => Payoff::Put {
                strike: *strike,
                weights: single("put")?,
                discount: *discount,
            },
            PayoffSpec::BasketCall {
                strike,
                weights,
                discount,
            } => {
                if weights.len() != dim {
                    return Err(SdeError::Dimension {
                        what: "basket weights",
                        expected: dim,
                        got: weights.len(),
                    });
                }
                Payoff::Call {
                    strike: *strike,
                    weights: weights.clone(),
                    discount: *discount,
                }
            }
            PayoffSpec::SmoothPower { power, discount } => Payoff::SmoothPower {
                power: *power,
                discount: *discount,
            },
            PayoffSpec::Digital { .. } => {
                return Err(SdeError::InvalidPayoff(
                    "digital payoffs are discontinuous; pathwise sensitivities do not apply \
                     to non-Lipschitz payoffs"
                        .into(),
                ))
            }
        };
        Ok(payoff)
    }
}

impl Payoff {
    pub fn call(strike: f64, discount: f64) -> Self {
        Payoff::Call {
            strike,
            weights: vec![1.0],
            discount,
        }
    }

    pub fn put(strike: f64, discount: f64) -> Self {
        Payoff::Put {
            strike,
            weights: vec![1.0],
            discount,
        }
    }

    fn basket(weights: &[f64], x: &[f64]) -> f64 {
        weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Payoff::Call {
                strike,
                weights,
                discount,
            } => discount * (Self::basket(weights, x) - strike).max(0.0),
            Payoff::Put {
                strike,
                weights,
                discount,
            } => discount * (strike - Self::basket(weights, x)).max(0.0),
            Payoff::SmoothPower { power, discount } => {
                discount * x.iter().map(|v| v.powi(*power)).sum::<f64>()
            }
        }
    }

    /// `dG/dX_T`; at a kink the right derivative is used.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Payoff::Call {
                strike,
                weights,
                discount,
            } => {
                let itm = Self::basket(weights, x) > *strike;
                weights
                    .iter()
                    .map(|w| if itm { discount * w } else { 0.0 })
                    .collect()
            }
            Payoff::Put {
                strike,
                weights,
                discount,
            } => {
                let itm = Self::basket(weights, x) < *strike;
                weights
                    .iter()
                    .map(|w| if itm { -discount * w } else { 0.0 })
                    .collect()
            }
            Payoff::SmoothPower { power, discount } => x
                .iter()
                .map(|v| discount * *power as f64 * v.powi(power - 1))
                .collect(),
        }
    }
}
