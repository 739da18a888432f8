//! The interaction kernel `g(r1, r2, u) = E[sigma(r1 x) sigma(r2 y)]` over
//! standard normals `x, y` with correlation `u`, and its partial derivatives.
//!
//! Backends:
//! * `Analytic`: closed forms for erf (arcsine kernel) and ReLU (arc-cosine
//!   kernel of degree one).
//! * `Quadrature`: polar product rule. With `x = rho cos(t)`, `z = rho sin(t)`
//!   and `y = u x + sqrt(1 - u^2) z = rho cos(t - acos u)`, the angle is split at
//!   the lines `x = 0` and `y = 0` (Gauss-Legendre per panel) and the radius is
//!   integrated with Gauss-Laguerre in `rho^2 / 2`. Both ReLU kinks lie on panel
//!   edges, so the rule stays spectrally accurate for ReLU too.
//! * `TensorHermite`: tensor-product Gauss-Hermite in `(x, z)`. Accurate for
//!   smooth activations only; kept as an independent cross-check.
//! * `MonteCarlo`: seeded plain Monte Carlo.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::quadrature::{rule, Family};

pub const DEFAULT_NODES: usize = 80;
pub const MIN_NODES: usize = 8;
pub const MIN_SAMPLES: usize = 10_000;

const U_TOLERANCE: f64 = 1e-9;
const ARG_GUARD: f64 = 1e-15;
const STEIN_U_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelMethod {
    Analytic,
    Quadrature { nodes: usize },
    TensorHermite { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl fmt::Display for KernelMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelMethod::Analytic => write!(f, "analytic"),
            KernelMethod::Quadrature { nodes } => write!(f, "quadrature:{nodes}"),
            KernelMethod::TensorHermite { nodes } => write!(f, "hermite:{nodes}"),
            KernelMethod::MonteCarlo { samples, seed } => write!(f, "mc:{samples}:{seed}"),
        }
    }
}

impl FromStr for KernelMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown kernel method '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| p.parse::<u64>().map_err(|_| bad());
        match parts.as_slice() {
            ["analytic"] => Ok(KernelMethod::Analytic),
            ["quadrature"] => Ok(KernelMethod::Quadrature { nodes: DEFAULT_NODES }),
            ["quadrature", n] => Ok(KernelMethod::Quadrature { nodes: num(n)? as usize }),
            ["hermite", n] => Ok(KernelMethod::TensorHermite { nodes: num(n)? as usize }),
            ["mc", n] => Ok(KernelMethod::MonteCarlo { samples: num(n)? as usize, seed: 0 }),
            ["mc", n, seed] => Ok(KernelMethod::MonteCarlo {
                samples: num(n)? as usize,
                seed: num(seed)?,
            }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for KernelMethod {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<KernelMethod> for String {
    fn from(m: KernelMethod) -> String {
        m.to_string()
    }
}

/// Activation plus evaluation backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: ActivationKind,
    pub method: KernelMethod,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// ReLU arc-cosine kernel: `g_relu(r1, r2, u) = r1 r2 h(u)`.
pub fn relu_h(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    ((1.0 - u * u).max(0.0).sqrt() + (PI - u.acos()) * u) / (2.0 * PI)
}

pub fn relu_h_prime(u: f64) -> f64 {
    (PI - u.clamp(-1.0, 1.0).acos()) / (2.0 * PI)
}

fn clamp_arg(q: f64) -> f64 {
    q.clamp(-1.0 + ARG_GUARD, 1.0 - ARG_GUARD)
}

impl KernelSpec {
    pub fn new(kind: ActivationKind, method: KernelMethod) -> Result<Self> {
        match method {
            KernelMethod::Analytic => {
                if !matches!(kind, ActivationKind::Erf | ActivationKind::Relu) {
                    return Err(Error::InvalidConfig(format!(
                        "no analytic interaction kernel for {kind}"
                    )));
                }
            }
            KernelMethod::Quadrature { nodes } | KernelMethod::TensorHermite { nodes } => {
                if nodes < MIN_NODES {
                    return Err(Error::InvalidConfig(format!(
                        "quadrature needs at least {MIN_NODES} nodes per axis, got {nodes}"
                    )));
                }
            }
            KernelMethod::MonteCarlo { samples, .. } => {
                if samples < MIN_SAMPLES {
                    return Err(Error::InvalidConfig(format!(
                        "Monte Carlo needs at least {MIN_SAMPLES} samples, got {samples}"
                    )));
                }
            }
        }
        Ok(KernelSpec { kind, method })
    }

    pub fn analytic(kind: ActivationKind) -> Result<Self> {
        Self::new(kind, KernelMethod::Analytic)
    }

    pub fn quadrature(kind: ActivationKind, nodes: usize) -> Result<Self> {
        Self::new(kind, KernelMethod::Quadrature { nodes })
    }

    /// Analytic where available, default polar quadrature otherwise.
    pub fn preferred(kind: ActivationKind) -> Self {
        Self::analytic(kind).unwrap_or(KernelSpec {
            kind,
            method: KernelMethod::Quadrature { nodes: DEFAULT_NODES },
        })
    }

    fn sigma(&self) -> ActivationKind {
        self.kind
    }

    /// `g(r1, r2, u)`.
    pub fn g(&self, r1: f64, r2: f64, u: f64) -> Result<f64> {
        let u = check_args(r1, r2, u)?;
        let s = self.sigma();
        if r1 == 0.0 || r2 == 0.0 {
            let other = r1.max(r2);
            return Ok(self.gaussian_mean(other) * s.eval(0.0));
        }
        match (self.method, s) {
            (KernelMethod::Analytic, ActivationKind::Erf) => {
                let q = r1 * r2 * u / ((1.0 + r1 * r1) * (1.0 + r2 * r2)).sqrt();
                Ok(2.0 / PI * clamp_arg(q).asin())
            }
            (KernelMethod::Analytic, _) => Ok(r1 * r2 * relu_h(u)),
            _ => Ok(self.expect(u, |x, y| [s.eval(r1 * x) * s.eval(r2 * y)])[0]),
        }
    }

    /// `dg/du`, computed for the numeric backends through the Stein identity
    /// `dg/du = r1 r2 E[sigma'(r1 x) sigma'(r2 y)]`.
    pub fn dg_du(&self, r1: f64, r2: f64, u: f64) -> Result<f64> {
        let u = check_args(r1, r2, u)?;
        if r1 == 0.0 || r2 == 0.0 {
            return Ok(0.0);
        }
        let s = self.sigma();
        match (self.method, s) {
            (KernelMethod::Analytic, ActivationKind::Erf) => {
                let c = r1 * r2 / ((1.0 + r1 * r1) * (1.0 + r2 * r2)).sqrt();
                let q = clamp_arg(c * u);
                Ok(2.0 / PI * c / (1.0 - q * q).sqrt())
            }
            (KernelMethod::Analytic, _) => Ok(r1 * r2 * relu_h_prime(u)),
            _ => {
                let u = u.clamp(-STEIN_U_CLAMP, STEIN_U_CLAMP);
                Ok(r1 * r2 * self.expect(u, |x, y| [s.d1(r1 * x) * s.d1(r2 * y)])[0])
            }
        }
    }

    /// `dg/dr1 = E[sigma'(r1 x) x sigma(r2 y)]`.
    pub fn dg_dr1(&self, r1: f64, r2: f64, u: f64) -> Result<f64> {
        let u = check_args(r1, r2, u)?;
        let s = self.sigma();
        if r2 == 0.0 {
            // g(r1, 0, u) = E[sigma(r1 x)] sigma(0)
            let m = self.expect(0.0, |x, _| [s.d1(r1 * x) * x])[0];
            return Ok(m * s.eval(0.0));
        }
        match (self.method, s) {
            (KernelMethod::Analytic, ActivationKind::Erf) => {
                let a1 = 1.0 + r1 * r1;
                let a2 = 1.0 + r2 * r2;
                let q = clamp_arg(r1 * r2 * u / (a1 * a2).sqrt());
                let dq = r2 * u / a2.sqrt() / (a1 * a1.sqrt());
                Ok(2.0 / PI * dq / (1.0 - q * q).sqrt())
            }
            (KernelMethod::Analytic, _) => Ok(r2 * relu_h(u)),
            _ => Ok(self.expect(u, |x, y| [s.d1(r1 * x) * x * s.eval(r2 * y)])[0]),
        }
    }

    /// `dg/dr2`, by symmetry of the kernel.
    pub fn dg_dr2(&self, r1: f64, r2: f64, u: f64) -> Result<f64> {
        self.dg_dr1(r2, r1, u)
    }

    /// `d/dr g(r, r, 1) = 2 E[sigma'(r x) sigma(r x) x]`.
    pub fn dg_dr_diag(&self, r: f64) -> Result<f64> {
        check_args(r, r, 1.0)?;
        let s = self.sigma();
        match (self.method, s) {
            (KernelMethod::Analytic, ActivationKind::Erf) => {
                let a = 1.0 + r * r;
                Ok(2.0 / PI * 2.0 * r / (a * (1.0 + 2.0 * r * r).sqrt()))
            }
            (KernelMethod::Analytic, _) => Ok(2.0 * r * relu_h(1.0)),
            _ => Ok(self.expect(1.0, |x, _| [2.0 * s.d1(r * x) * s.eval(r * x) * x])[0]),
        }
    }

    /// `[g, dg/dr1, dg/dr2, dg/du]` at `(r1, r2, u)` with `r1, r2 > 0`.
    pub fn pair_terms(&self, r1: f64, r2: f64, u: f64) -> Result<[f64; 4]> {
        let uc = check_args(r1, r2, u)?;
        if r1 > 0.0 && r2 > 0.0 && self.method == KernelMethod::Analytic {
            if self.kind == ActivationKind::Erf {
                let (a1, a2) = (1.0 + r1 * r1, 1.0 + r2 * r2);
                let s = (a1 * a2).sqrt();
                let q = clamp_arg(r1 * r2 * uc / s);
                let den = 2.0 / PI / (1.0 - q * q).sqrt();
                let t = uc * den / s;
                return Ok([2.0 / PI * q.asin(), r2 * t / a1, r1 * t / a2, r1 * r2 / s * den]);
            }
            let h = relu_h(uc);
            return Ok([r1 * r2 * h, r2 * h, r1 * h, r1 * r2 * relu_h_prime(uc)]);
        }
        Ok([
            self.g(r1, r2, u)?,
            self.dg_dr1(r1, r2, u)?,
            self.dg_dr1(r2, r1, u)?,
            self.dg_du(r1, r2, u)?,
        ])
    }

    /// `[g(r, r, 1), d/dr g(r, r, 1), g(r, 1, u), dg/dr1(r, 1, u)]`, the four
    /// quantities entering the one-neuron fixed-point equation, with numeric
    /// backends sharing one pass per correlation.
    pub fn one_neuron_terms(&self, r: f64, u: f64) -> Result<[f64; 4]> {
        let u = check_args(r, 1.0, u)?;
        if self.method == KernelMethod::Analytic || r == 0.0 {
            return Ok([
                self.g(r, r, 1.0)?,
                self.dg_dr_diag(r)?,
                self.g(r, 1.0, u)?,
                self.dg_dr1(r, 1.0, u)?,
            ]);
        }
        let s = self.sigma();
        let [diag, diag_dr] = self.expect(1.0, |x, _| {
            let (v, dv) = (s.eval(r * x), s.d1(r * x));
            [v * v, 2.0 * dv * v * x]
        });
        let [cross, cross_dr] = self.expect(u, |x, y| {
            let t = s.eval(y);
            [s.eval(r * x) * t, s.d1(r * x) * x * t]
        });
        Ok([diag, diag_dr, cross, cross_dr])
    }

    /// `E[sigma(r x)]` for a standard normal `x`.
    pub fn gaussian_mean(&self, r: f64) -> f64 {
        let s = self.sigma();
        if r == 0.0 {
            return s.eval(0.0);
        }
        s.gaussian_mean_closed_form(r).unwrap_or_else(|| {
            let nodes = match self.method {
                KernelMethod::Quadrature { nodes } | KernelMethod::TensorHermite { nodes } => nodes,
                _ => DEFAULT_NODES,
            };
            // smooth here (softplus), so a 1-D Hermite rule suffices
            rule(Family::ProbHermite, nodes)
                .iter()
                .map(|(x, w)| w * s.eval(r * x))
                .sum()
        })
    }

    /// `E[phi(x, y)]` with `corr(x, y) = u` under the numeric backend.
    fn expect<const M: usize>(&self, u: f64, phi: impl Fn(f64, f64) -> [f64; M]) -> [f64; M] {
        match self.method {
            KernelMethod::Quadrature { nodes } => polar_expect(nodes, u, phi),
            KernelMethod::TensorHermite { nodes } => tensor_expect(nodes, u, phi),
            KernelMethod::MonteCarlo { samples, seed } => mc_expect(samples, seed, u, phi).0,
            // analytic callers only reach here for the zero-norm companion terms
            KernelMethod::Analytic => polar_expect(DEFAULT_NODES, u, phi),
        }
    }
}

fn check_args(r1: f64, r2: f64, u: f64) -> Result<f64> {
    if !(r1 >= 0.0 && r2 >= 0.0 && r1.is_finite() && r2.is_finite()) {
        return Err(Error::Domain(format!("norms must be finite and non-negative, got ({r1}, {r2})")));
    }
    // written negated so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(u.abs() <= 1.0 + U_TOLERANCE) {
        return Err(Error::Domain(format!("correlation must lie in [-1, 1], got {u}")));
    }
    Ok(u.clamp(-1.0, 1.0))
}

fn polar_expect<const M: usize>(
    nodes: usize,
    u: f64,
    phi: impl Fn(f64, f64) -> [f64; M],
) -> [f64; M] {
    let alpha = u.clamp(-1.0, 1.0).acos();
    let mut cuts = [0.0, FRAC_PI_2, (alpha + FRAC_PI_2) % PI, PI];
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let leg = rule(Family::Legendre, nodes);
    let lag = rule(Family::Laguerre, nodes);
    let radii: Vec<f64> = lag.nodes.iter().map(|t| (2.0 * t).sqrt()).collect();

    let mut acc = [0.0; M];
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi - lo < 1e-14 {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (xl, wl) in leg.iter() {
            let t = mid + half * xl;
            let (c1, c2) = (t.cos(), (t - alpha).cos());
            let wa = wl * half;
            for (rho, wr) in radii.iter().zip(&lag.weights) {
                let (x, y) = (rho * c1, rho * c2);
                let plus = phi(x, y);
                let minus = phi(-x, -y);
                let w = wa * wr;
                for m in 0..M {
                    acc[m] += w * (plus[m] + minus[m]);
                }
            }
        }
    }
    acc.map(|a| a / (2.0 * PI))
}

fn tensor_expect<const M: usize>(
    nodes: usize,
    u: f64,
    phi: impl Fn(f64, f64) -> [f64; M],
) -> [f64; M] {
    let s = (1.0 - u * u).max(0.0).sqrt();
    let gh = rule(Family::ProbHermite, nodes);
    let mut acc = [0.0; M];
    for (x, wx) in gh.iter() {
        for (z, wz) in gh.iter() {
            // (x, y) is exchangeable; averaging both orders keeps g symmetric in (r1, r2)
            let y = u * x + s * z;
            let (a, b) = (phi(x, y), phi(y, x));
            for m in 0..M {
                acc[m] += 0.5 * wx * wz * (a[m] + b[m]);
            }
        }
    }
    acc
}

fn mc_expect<const M: usize>(
    samples: usize,
    seed: u64,
    u: f64,
    phi: impl Fn(f64, f64) -> [f64; M],
) -> ([f64; M], [f64; M]) {
    let s = (1.0 - u * u).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = [0.0; M];
    let mut m2 = [0.0; M];
    for i in 0..samples {
        let x: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let y = u * x + s * z;
        let (a, b) = (phi(x, y), phi(y, x));
        let v: [f64; M] = std::array::from_fn(|m| 0.5 * (a[m] + b[m]));
        let count = (i + 1) as f64;
        for m in 0..M {
            let delta = v[m] - mean[m];
            mean[m] += delta / count;
            m2[m] += delta * (v[m] - mean[m]);
        }
    }
    let n = samples as f64;
    let stderr = m2.map(|q| (q / (n - 1.0) / n).sqrt());
    (mean, stderr)
}

/// Seeded Monte-Carlo estimate of `g(r1, r2, u)` with its standard error.
pub fn mc_oracle(
    kind: ActivationKind,
    r1: f64,
    r2: f64,
    u: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let u = check_args(r1, r2, u)?;
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "Monte Carlo needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    if r1 == 0.0 || r2 == 0.0 {
        let spec = KernelSpec::preferred(kind);
        return Ok(McEstimate {
            mean: spec.g(r1, r2, u)?,
            stderr: 0.0,
        });
    }
    let (mean, stderr) = mc_expect(samples, seed, u, |x, y| [kind.eval(r1 * x) * kind.eval(r2 * y)]);
    Ok(McEstimate {
        mean: mean[0],
        stderr: stderr[0],
    })
}

/// Free-function forms mirroring the method names.
pub fn g(spec: &KernelSpec, r1: f64, r2: f64, u: f64) -> Result<f64> {
    spec.g(r1, r2, u)
}

pub fn dg_du(spec: &KernelSpec, r1: f64, r2: f64, u: f64) -> Result<f64> {
    spec.dg_du(r1, r2, u)
}

pub fn dg_dr1(spec: &KernelSpec, r1: f64, r2: f64, u: f64) -> Result<f64> {
    spec.dg_dr1(r1, r2, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn erf_a() -> KernelSpec {
        KernelSpec::analytic(ActivationKind::Erf).unwrap()
    }
    fn relu_a() -> KernelSpec {
        KernelSpec::analytic(ActivationKind::Relu).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::analytic(ActivationKind::Tanh).is_err());
        assert!(KernelSpec::quadrature(ActivationKind::Erf, 4).is_err());
        assert!(KernelSpec::new(
            ActivationKind::Erf,
            KernelMethod::MonteCarlo { samples: 100, seed: 1 }
        )
        .is_err());
        assert!(KernelSpec::quadrature(ActivationKind::Gelu, 8).is_ok());
    }

    #[test]
    fn erf_values() {
        assert_relative_eq!(erf_a().g(1.0, 1.0, 1.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(erf_a().g(0.7, 1.9, 0.0).unwrap(), 0.0);
        assert_relative_eq!(erf_a().dg_du(1.0, 1.0, 0.0).unwrap(), 1.0 / PI, epsilon = 1e-15);
        assert_eq!(erf_a().dg_dr1(0.4, 1.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn relu_values() {
        assert_relative_eq!(relu_a().g(2.0, 3.0, 1.0).unwrap(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(relu_a().g(1.0, 1.0, 0.0).unwrap(), 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(relu_a().dg_du(1.0, 1.0, 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(relu_h(0.5), 0.304_498_890_522_114_7, epsilon = 1e-15);
        for u in [-0.8, 0.0, 0.45] {
            assert_relative_eq!(relu_a().dg_dr1(0.6, 1.7, u).unwrap(), 1.7 * relu_h(u), epsilon = 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(erf_a().g(1.0, 1.0, 1.5).is_err());
        assert!(erf_a().g(-1.0, 1.0, 0.5).is_err());
        assert!(erf_a().dg_du(1.0, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn degenerate_norm_rule() {
        let sig = KernelSpec::quadrature(ActivationKind::Sigmoid, 40).unwrap();
        assert_relative_eq!(sig.g(0.0, 2.0, 0.3).unwrap(), 0.25, epsilon = 1e-15);
        let sp = KernelSpec::quadrature(ActivationKind::Softplus { beta: 1.0 }, 60).unwrap();
        let v = sp.g(1.3, 0.0, -0.2).unwrap();
        let mean = sp.g(1.3, 1e-300, 0.0).unwrap() / ActivationKind::Softplus { beta: 1.0 }.eval(1e-300);
        assert_relative_eq!(v / std::f64::consts::LN_2, mean, max_relative = 1e-10);
        assert_eq!(erf_a().g(0.0, 0.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn polar_quadrature_matches_closed_forms() {
        let eq = KernelSpec::quadrature(ActivationKind::Erf, 80).unwrap();
        let rq = KernelSpec::quadrature(ActivationKind::Relu, 80).unwrap();
        for &(r1, r2, u) in &[(0.5, 1.0, 0.3), (2.0, 0.2, -0.95), (1.0, 1.0, 1.0), (1.4, 0.9, -1.0)] {
            assert_relative_eq!(eq.g(r1, r2, u).unwrap(), erf_a().g(r1, r2, u).unwrap(), epsilon = 1e-12);
            assert_relative_eq!(rq.g(r1, r2, u).unwrap(), relu_a().g(r1, r2, u).unwrap(), epsilon = 1e-12);
            assert_relative_eq!(
                eq.dg_dr1(r1, r2, u).unwrap(),
                erf_a().dg_dr1(r1, r2, u).unwrap(),
                epsilon = 1e-8
            );
        }
        assert_relative_eq!(eq.dg_dr_diag(0.7).unwrap(), erf_a().dg_dr_diag(0.7).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(rq.dg_dr_diag(0.7).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn pair_terms_match_separate_calls() {
        for spec in [erf_a(), relu_a(), KernelSpec::quadrature(ActivationKind::Tanh, 32).unwrap()] {
            let (r1, r2, u) = (0.7, 1.6, -0.35);
            let t = spec.pair_terms(r1, r2, u).unwrap();
            let sep = [
                spec.g(r1, r2, u).unwrap(),
                spec.dg_dr1(r1, r2, u).unwrap(),
                spec.dg_dr2(r1, r2, u).unwrap(),
                spec.dg_du(r1, r2, u).unwrap(),
            ];
            for (a, b) in t.iter().zip(&sep) {
                assert_relative_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn fused_terms_match_separate_calls() {
        let q = KernelSpec::quadrature(ActivationKind::Sigmoid, 40).unwrap();
        let t = q.one_neuron_terms(0.6, 0.5).unwrap();
        let sep = [
            q.g(0.6, 0.6, 1.0).unwrap(),
            q.dg_dr_diag(0.6).unwrap(),
            q.g(0.6, 1.0, 0.5).unwrap(),
            q.dg_dr1(0.6, 1.0, 0.5).unwrap(),
        ];
        for (a, b) in t.iter().zip(&sep) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn tensor_hermite_agrees_for_smooth_kinds() {
        for kind in [ActivationKind::Erf, ActivationKind::Sigmoid, ActivationKind::Softplus { beta: 1.0 }] {
            let p = KernelSpec::quadrature(kind, 80).unwrap();
            let t = KernelSpec::new(kind, KernelMethod::TensorHermite { nodes: 80 }).unwrap();
            for &(r1, r2, u) in &[(0.3, 1.0, 0.4), (1.5, 1.0, -0.6)] {
                assert_relative_eq!(p.g(r1, r2, u).unwrap(), t.g(r1, r2, u).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn symmetry_in_norms() {
        let specs = [
            erf_a(),
            relu_a(),
            KernelSpec::quadrature(ActivationKind::Tanh, 40).unwrap(),
            KernelSpec::quadrature(ActivationKind::Gelu, 40).unwrap(),
        ];
        for spec in specs {
            let a = spec.g(0.4, 1.7, 0.35).unwrap();
            let b = spec.g(1.7, 0.4, 0.35).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn method_parse() {
        assert_eq!("analytic".parse::<KernelMethod>().unwrap(), KernelMethod::Analytic);
        assert_eq!(
            "quadrature:64".parse::<KernelMethod>().unwrap(),
            KernelMethod::Quadrature { nodes: 64 }
        );
        assert_eq!(
            "mc:20000".parse::<KernelMethod>().unwrap(),
            KernelMethod::MonteCarlo { samples: 20000, seed: 0 }
        );
        assert!("spline:3".parse::<KernelMethod>().is_err());
    }

    #[test]
    fn mc_oracle_degenerate_is_exact() {
        let e = mc_oracle(ActivationKind::Sigmoid, 0.0, 1.2, 0.4, MIN_SAMPLES, 3).unwrap();
        assert_eq!(e.mean, 0.25);
        assert_eq!(e.stderr, 0.0);
        assert!(mc_oracle(ActivationKind::Erf, 1.0, 1.0, 0.0, 10, 0).is_err());
    }
}
