//! Scalar activation functions and their derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Matrix;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Slope used when `prelu` is given without one.
pub const DEFAULT_PRELU_SLOPE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ActivationKind {
    Relu,
    /// `max(0, x) + a·min(0, x)`
    Prelu { slope: f64 },
    /// Exact `x·Φ(x)`, not the tanh approximation.
    Gelu,
    Silu,
    Elu { alpha: f64 },
    Selu,
    Sigmoid,
    Tanh,
    Softplus,
    Softsign,
    LogSigmoid,
}

impl ActivationKind {
    /// One instance of every kind, in table order, with default parameters.
    pub const ALL: [ActivationKind; 11] = [
        ActivationKind::Relu,
        ActivationKind::Prelu {
            slope: DEFAULT_PRELU_SLOPE,
        },
        ActivationKind::Gelu,
        ActivationKind::Silu,
        ActivationKind::Elu { alpha: 1.0 },
        ActivationKind::Selu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Softplus,
        ActivationKind::Softsign,
        ActivationKind::LogSigmoid,
    ];

    pub const NAMES: [&'static str; 11] = [
        "relu",
        "prelu[:a]",
        "gelu",
        "silu",
        "elu[:alpha]",
        "selu",
        "sigmoid",
        "tanh",
        "softplus",
        "softsign",
        "logsigmoid",
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Prelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Gelu => x * std_normal_cdf(x),
            ActivationKind::Silu => x * sigmoid(x),
            ActivationKind::Elu { alpha } => elu(x, alpha),
            ActivationKind::Selu => SELU_LAMBDA * elu(x, SELU_ALPHA),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Softplus => softplus(x),
            ActivationKind::Softsign => x / (1.0 + x.abs()),
            ActivationKind::LogSigmoid => -softplus(-x),
        }
    }

    /// f′(x). At the ReLU/PReLU kink the left derivative is used (0, resp. `a`).
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Prelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            ActivationKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActivationKind::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            ActivationKind::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Softplus => sigmoid(x),
            ActivationKind::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            ActivationKind::LogSigmoid => sigmoid(-x),
        }
    }

    /// `f(kx) = k f(x)` for `k > 0`; only these have σ-independent gains.
    pub fn is_positively_homogeneous(self) -> bool {
        matches!(self, ActivationKind::Relu | ActivationKind::Prelu { .. })
    }

    /// Kinds whose measured backward/forward gain ratio stays near one, so
    /// the plain ideal-groups formula applies without a gain correction.
    pub fn has_unit_gain_ratio(self) -> bool {
        matches!(
            self,
            ActivationKind::Relu
                | ActivationKind::Prelu { .. }
                | ActivationKind::Gelu
                | ActivationKind::Silu
                | ActivationKind::Elu { .. }
                | ActivationKind::Selu
        )
    }

    /// Points where f′ is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            ActivationKind::Relu | ActivationKind::Prelu { .. } => &[0.0],
            ActivationKind::Elu { .. } | ActivationKind::Selu => &[0.0],
            _ => &[],
        }
    }
}

pub fn activation_forward(kind: ActivationKind, z: &Matrix) -> Matrix {
    z.map(|v| kind.apply(v))
}

pub fn activation_derivative(kind: ActivationKind, z: &Matrix) -> Matrix {
    z.map(|v| kind.derivative(v))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::Prelu { slope } => write!(f, "prelu:{slope}"),
            ActivationKind::Gelu => write!(f, "gelu"),
            ActivationKind::Silu => write!(f, "silu"),
            ActivationKind::Elu { alpha } => write!(f, "elu:{alpha}"),
            ActivationKind::Selu => write!(f, "selu"),
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Tanh => write!(f, "tanh"),
            ActivationKind::Softplus => write!(f, "softplus"),
            ActivationKind::Softsign => write!(f, "softsign"),
            ActivationKind::LogSigmoid => write!(f, "logsigmoid"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let parse_param = |default: f64| -> Result<f64, Error> {
            match param {
                None => Ok(default),
                Some(p) => match p.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse(format!(
                        "invalid parameter {p:?} for activation {name:?}"
                    ))),
                },
            }
        };
        let lowered = name.trim().to_ascii_lowercase();
        let kind = match lowered.as_str() {
            "relu" => ActivationKind::Relu,
            "prelu" | "leakyrelu" => ActivationKind::Prelu {
                slope: parse_param(DEFAULT_PRELU_SLOPE)?,
            },
            "elu" => ActivationKind::Elu {
                alpha: parse_param(1.0)?,
            },
            other => {
                if param.is_some() {
                    return Err(Error::Parse(format!(
                        "activation {other:?} takes no parameter"
                    )));
                }
                match other {
                    "gelu" => ActivationKind::Gelu,
                    "silu" | "swish" => ActivationKind::Silu,
                    "selu" => ActivationKind::Selu,
                    "sigmoid" => ActivationKind::Sigmoid,
                    "tanh" => ActivationKind::Tanh,
                    "softplus" => ActivationKind::Softplus,
                    "softsign" => ActivationKind::Softsign,
                    "logsigmoid" => ActivationKind::LogSigmoid,
                    _ => {
                        return Err(Error::Parse(format!(
                            "unknown activation {name:?}; valid names: {}",
                            ActivationKind::NAMES.join(", ")
                        )))
                    }
                }
            }
        };
        Ok(kind)
    }
}

impl TryFrom<String> for ActivationKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ActivationKind> for String {
    fn from(k: ActivationKind) -> String {
        k.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;

    #[test]
    fn relu_values_and_derivative() {
        let z = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(activation_forward(ActivationKind::Relu, &z).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(activation_derivative(ActivationKind::Relu, &z).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn prelu_negative_branch_and_kink() {
        let p = ActivationKind::Prelu { slope: 0.25 };
        assert_eq!(p.apply(-4.0), -1.0);
        assert_eq!(p.derivative(0.0), 0.25);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        assert_eq!(ActivationKind::Sigmoid.derivative(0.0), 0.25);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = RngStream::new(9, 0).generator();
        let h = 1e-5;
        for kind in ActivationKind::ALL {
            for _ in 0..200 {
                let x: f64 = rng.random_range(-6.0..6.0);
                if kind.kinks().iter().any(|k| (x - k).abs() < 10.0 * h) {
                    continue;
                }
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                let an = kind.derivative(x);
                assert!(
                    (fd - an).abs() < 1e-7,
                    "{kind} at {x}: analytic {an}, central {fd}"
                );
            }
        }
    }

    #[test]
    fn stable_for_large_inputs() {
        for kind in ActivationKind::ALL {
            for x in [-800.0, -40.0, 40.0, 800.0] {
                assert!(kind.apply(x).is_finite(), "{kind}({x})");
                assert!(kind.derivative(x).is_finite(), "{kind}'({x})");
            }
        }
        assert_eq!(ActivationKind::Softplus.apply(800.0), 800.0);
        assert_eq!(ActivationKind::LogSigmoid.apply(-800.0), -800.0);
    }

    #[test]
    fn names_round_trip() {
        for kind in ActivationKind::ALL {
            let back: ActivationKind = kind.to_string().parse().unwrap();
            assert_eq!(back, kind);
        }
        assert_eq!(
            "PReLU".parse::<ActivationKind>().unwrap(),
            ActivationKind::Prelu { slope: 0.25 }
        );
    }

    #[test]
    fn unknown_name_lists_valid_names() {
        let err = "swishy".parse::<ActivationKind>().unwrap_err().to_string();
        assert!(err.contains("softsign") && err.contains("prelu"), "{err}");
        assert!("tanh:2".parse::<ActivationKind>().is_err());
        assert!("prelu:abc".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn selu_constants() {
        assert_eq!(ActivationKind::Selu.apply(1.0), SELU_LAMBDA);
        let v = ActivationKind::Selu.apply(-1e3);
        assert!((v + SELU_LAMBDA * SELU_ALPHA).abs() < 1e-12);
    }
}
