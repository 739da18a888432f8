//! Scalar activations and their first three derivatives.
//!
//! Conventions:
//! * `Erf` is `erf(x / sqrt 2)`, the standard-normal scaled error function.
//! * `Tanh` is `(1 - e^{-x}) / (1 + e^{-x})`, i.e. `tanh(x / 2) = 2 sigmoid(x) - 1`.
//! * `Softplus(beta)` is `log(1 + e^{beta x}) / beta`.
//! * `Gelu` is `x Phi(x)` with `Phi` the standard normal CDF.
//! * `Relu` has `sigma'(0) := 0`; higher derivatives exist only away from 0.

use std::f64::consts::{FRAC_2_SQRT_PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SOFTPLUS_LINEAR_CUTOFF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ActivationKind {
    Erf,
    Relu,
    Tanh,
    Sigmoid,
    Softplus { beta: f64 },
    Gelu,
}

impl ActivationKind {
    pub fn softplus(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("softplus beta must be positive, got {beta}")));
        }
        Ok(ActivationKind::Softplus { beta })
    }

    /// All kinds with three continuous derivatives everywhere.
    pub fn is_smooth(self) -> bool {
        !matches!(self, ActivationKind::Relu)
    }

    pub fn is_odd(self) -> bool {
        matches!(self, ActivationKind::Erf | ActivationKind::Tanh)
    }

    /// Strictly monotone activations (every kind here except GeLU).
    pub fn is_monotone(self) -> bool {
        !matches!(self, ActivationKind::Gelu | ActivationKind::Relu)
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Erf => libm::erf(x / SQRT_2),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => (0.5 * x).tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softplus { beta } => softplus(beta, x),
            ActivationKind::Gelu => x * normal_cdf(x),
        }
    }

    /// First derivative. Total for every kind (ReLU uses `sigma'(0) = 0`).
    pub fn d1(self, x: f64) -> f64 {
        match self {
            ActivationKind::Erf => FRAC_2_SQRT_PI / SQRT_2 * (-0.5 * x * x).exp(),
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => 2.0 * sigmoid_d1(x),
            ActivationKind::Sigmoid => sigmoid_d1(x),
            ActivationKind::Softplus { beta } => sigmoid(beta * x),
            ActivationKind::Gelu => normal_cdf(x) + x * normal_pdf(x),
        }
    }

    /// Derivative of order `order` (0..=3).
    pub fn derivative(self, order: u8, x: f64) -> Result<f64> {
        match (self, order) {
            (_, 0) => Ok(self.eval(x)),
            (_, 1) => Ok(self.d1(x)),
            (ActivationKind::Relu, 2 | 3) => {
                if x == 0.0 {
                    Err(Error::NonSmooth { kind: self, order, x })
                } else {
                    Ok(0.0)
                }
            }
            (_, 2) => Ok(self.smooth_d2(x)),
            (_, 3) => Ok(self.smooth_d3(x)),
            _ => Err(Error::NonSmooth { kind: self, order, x }),
        }
    }

    fn smooth_d2(self, x: f64) -> f64 {
        match self {
            ActivationKind::Erf => -x * self.d1(x),
            ActivationKind::Tanh => 2.0 * sigmoid_d2(x),
            ActivationKind::Sigmoid => sigmoid_d2(x),
            ActivationKind::Softplus { beta } => beta * sigmoid_d1(beta * x),
            ActivationKind::Gelu => normal_pdf(x) * (2.0 - x * x),
            ActivationKind::Relu => 0.0,
        }
    }

    fn smooth_d3(self, x: f64) -> f64 {
        match self {
            ActivationKind::Erf => (x * x - 1.0) * self.d1(x),
            ActivationKind::Tanh => 2.0 * sigmoid_d3(x),
            ActivationKind::Sigmoid => sigmoid_d3(x),
            ActivationKind::Softplus { beta } => beta * beta * sigmoid_d2(beta * x),
            ActivationKind::Gelu => normal_pdf(x) * (x * x * x - 4.0 * x),
            ActivationKind::Relu => 0.0,
        }
    }

    /// `sigma'(x) - x sigma''(x) + sigma'''(x)`.
    ///
    /// Positivity of this quantity (non-negativity with an isolated zero for
    /// erf) is the activation-level sufficient condition for the interaction
    /// kernel to satisfy the curvature condition in the correlation.
    pub fn curvature_integrand(self, x: f64) -> Result<f64> {
        match self {
            ActivationKind::Relu | ActivationKind::Gelu => Err(Error::Unsupported(format!(
                "curvature integrand is only defined for the smooth monotone kinds, got {self}"
            ))),
            _ => Ok(self.d1(x) - x * self.smooth_d2(x) + self.smooth_d3(x)),
        }
    }

    /// `E[sigma(r Z)]` for standard normal `Z`, when known in closed form.
    pub(crate) fn gaussian_mean_closed_form(self, r: f64) -> Option<f64> {
        match self {
            ActivationKind::Erf | ActivationKind::Tanh => Some(0.0),
            ActivationKind::Sigmoid => Some(0.5),
            ActivationKind::Relu => Some(r * INV_SQRT_2PI),
            // E[Z Phi(rZ)] = r phi(0) / sqrt(1 + r^2) by Stein.
            ActivationKind::Gelu => Some(r * r * INV_SQRT_2PI / (1.0 + r * r).sqrt()),
            ActivationKind::Softplus { .. } => None,
        }
    }

    fn name(self) -> String {
        match self {
            ActivationKind::Erf => "erf".into(),
            ActivationKind::Relu => "relu".into(),
            ActivationKind::Tanh => "tanh".into(),
            ActivationKind::Sigmoid => "sigmoid".into(),
            ActivationKind::Softplus { beta } => format!("softplus:{beta}"),
            ActivationKind::Gelu => "gelu".into(),
        }
    }
}

/// Free-function form of [`ActivationKind::derivative`].
pub fn eval(kind: ActivationKind, order: u8, x: f64) -> Result<f64> {
    kind.derivative(order, x)
}

pub fn check_assumption_ii_integrand(kind: ActivationKind, x: f64) -> Result<f64> {
    kind.curvature_integrand(x)
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (lower.as_str(), None),
        };
        let kind = match (head, arg) {
            ("erf", None) => ActivationKind::Erf,
            ("relu", None) => ActivationKind::Relu,
            ("tanh", None) => ActivationKind::Tanh,
            ("sigmoid", None) => ActivationKind::Sigmoid,
            ("gelu", None) => ActivationKind::Gelu,
            ("softplus", None) => ActivationKind::Softplus { beta: 1.0 },
            ("softplus", Some(b)) => {
                let beta: f64 = b
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad softplus beta '{b}'")))?;
                ActivationKind::softplus(beta)?
            }
            _ => return Err(Error::InvalidConfig(format!("unknown activation '{s}'"))),
        };
        Ok(kind)
    }
}

impl TryFrom<String> for ActivationKind {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<ActivationKind> for String {
    fn from(kind: ActivationKind) -> String {
        kind.name()
    }
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

fn sigmoid_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (1.0 - 2.0 * s)
}

fn sigmoid_d3(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)
}

fn softplus(beta: f64, x: f64) -> f64 {
    let z = beta * x;
    if z > SOFTPLUS_LINEAR_CUTOFF {
        x + (-z).exp() / beta
    } else {
        z.exp().ln_1p() / beta
    }
}
