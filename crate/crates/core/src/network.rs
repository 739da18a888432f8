//! Teacher and student networks, and the order-parameter map between them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "frame")]
pub enum TeacherFrame {
    CanonicalBasis,
    RandomOrthonormal { seed: u64 },
}

/// `f*(x) = sum_j b_j sigma(v_j . x)` with pairwise orthogonal `v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherNet {
    d: usize,
    columns: Vec<Vec<f64>>,
    b: Vec<f64>,
    kind: ActivationKind,
}

impl TeacherNet {
    /// Teacher from incoming vectors (each of length `d`) and outgoing weights.
    pub fn new(columns: Vec<Vec<f64>>, b: Vec<f64>, kind: ActivationKind) -> Result<Self> {
        let k = columns.len();
        if k == 0 || b.len() != k {
            return Err(Error::InvalidConfig(format!(
                "teacher needs k >= 1 vectors and k outgoing weights, got {k} and {}",
                b.len()
            )));
        }
        let d = columns[0].len();
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidConfig("teacher vectors differ in length".into()));
        }
        if d < k {
            return Err(Error::InvalidConfig(format!("teacher needs d >= k, got d = {d}, k = {k}")));
        }
        for i in 0..k {
            if norm(&columns[i]) == 0.0 {
                return Err(Error::InvalidConfig(format!("teacher vector {i} is zero")));
            }
            for j in 0..i {
                let c = dot(&columns[i], &columns[j]);
                if c.abs() > ORTHOGONALITY_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "teacher vectors {j} and {i} are not orthogonal (dot = {c:e})"
                    )));
                }
            }
        }
        Ok(TeacherNet { d, columns, b, kind })
    }

    /// Unit-norm orthogonal incoming vectors with all outgoing weights 1.
    pub fn unit_orthonormal(k: usize, d: usize, frame: TeacherFrame, kind: ActivationKind) -> Result<Self> {
        if k == 0 || d < k {
            return Err(Error::InvalidConfig(format!(
                "teacher needs d >= k >= 1, got d = {d}, k = {k}"
            )));
        }
        let columns = match frame {
            TeacherFrame::CanonicalBasis => (0..k)
                .map(|j| {
                    let mut e = vec![0.0; d];
                    e[j] = 1.0;
                    e
                })
                .collect(),
            TeacherFrame::RandomOrthonormal { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = DMatrix::<f64>::from_fn(d, k, |_, _| rng.sample(StandardNormal));
                let q = m.qr().q();
                let mut cols: Vec<Vec<f64>> = (0..k).map(|j| q.column(j).iter().copied().collect()).collect();
                // one Gram-Schmidt sweep keeps cross products at round-off level
                for j in 0..k {
                    for i in 0..j {
                        let c = dot(&cols[j], &cols[i]);
                        let (head, tail) = cols.split_at_mut(j);
                        for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                            *x -= c * y;
                        }
                    }
                    let nrm = norm(&cols[j]);
                    cols[j].iter_mut().for_each(|x| *x /= nrm);
                }
                cols
            }
        };
        Self::new(columns, vec![1.0; k], kind)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn v(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn norms(&self) -> Vec<f64> {
        self.columns.iter().map(|c| norm(c)).collect()
    }

    pub fn is_unit_orthonormal(&self) -> bool {
        self.columns.iter().all(|c| (norm(c) - 1.0).abs() <= 1e-12) && self.b.iter().all(|&b| b == 1.0)
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(&self.b)
            .map(|(v, b)| b * self.kind.eval(dot(v, x)))
            .sum()
    }
}

/// Student `f(x) = sum_i a_i sigma(w_i . x)` stored as the flat vector
/// `theta = (w_1, a_1, ..., w_n, a_n)` of length `n (d + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentNet {
    pub n: usize,
    pub d: usize,
    pub kind: ActivationKind,
    pub theta: Vec<f64>,
}

impl StudentNet {
    pub fn from_theta(n: usize, d: usize, kind: ActivationKind, theta: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 || theta.len() != n * (d + 1) {
            return Err(Error::InvalidConfig(format!(
                "parameter vector of length {} does not fit n = {n}, d = {d}",
                theta.len()
            )));
        }
        Ok(StudentNet { n, d, kind, theta })
    }

    pub fn zeros(n: usize, d: usize, kind: ActivationKind) -> Self {
        StudentNet {
            n,
            d,
            kind,
            theta: vec![0.0; n * (d + 1)],
        }
    }

    /// Student from per-neuron `(w_i, a_i)` pairs.
    pub fn from_neurons(kind: ActivationKind, neurons: &[(Vec<f64>, f64)]) -> Result<Self> {
        let n = neurons.len();
        let d = neurons.first().map_or(0, |(w, _)| w.len());
        let mut theta = Vec::with_capacity(n * (d + 1));
        for (w, a) in neurons {
            if w.len() != d {
                return Err(Error::InvalidConfig("student vectors differ in length".into()));
            }
            theta.extend_from_slice(w);
            theta.push(*a);
        }
        Self::from_theta(n, d, kind, theta)
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn w(&self, i: usize) -> &[f64] {
        let s = i * (self.d + 1);
        &self.theta[s..s + self.d]
    }

    pub fn w_mut(&mut self, i: usize) -> &mut [f64] {
        let s = i * (self.d + 1);
        &mut self.theta[s..s + self.d]
    }

    pub fn a(&self, i: usize) -> f64 {
        self.theta[i * (self.d + 1) + self.d]
    }

    pub fn set_a(&mut self, i: usize, a: f64) {
        self.theta[i * (self.d + 1) + self.d] = a;
    }

    pub fn norms(&self) -> Vec<f64> {
        (0..self.n).map(|i| norm(self.w(i))).collect()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        StudentNet {
            theta,
            ..self.clone()
        }
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.a(i) * self.kind.eval(dot(self.w(i), x))).sum()
    }
}

/// Norms, student-teacher correlations `u[i][j]` and student-student
/// correlations `rho[i][i']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub r: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
}

impl OrderParams {
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn k(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }
}

/// Order parameters with correlations of zero-norm neurons left at 0 instead
/// of failing; the loss only needs them through the degenerate kernel rule.
pub(crate) fn order_params_lenient(s: &StudentNet, t: &TeacherNet) -> (OrderParams, Option<usize>) {
    let r = s.norms();
    let tn = t.norms();
    let mut degenerate = None;
    let mut u = vec![vec![0.0; t.k()]; s.n];
    let mut rho = vec![vec![0.0; s.n]; s.n];
    for i in 0..s.n {
        if r[i] == 0.0 {
            degenerate.get_or_insert(i);
            continue;
        }
        for j in 0..t.k() {
            u[i][j] = dot(s.w(i), t.v(j)) / (r[i] * tn[j]);
        }
        rho[i][i] = 1.0;
        for i2 in 0..i {
            if r[i2] == 0.0 {
                continue;
            }
            let c = dot(s.w(i), s.w(i2)) / (r[i] * r[i2]);
            rho[i][i2] = c;
            rho[i2][i] = c;
        }
    }
    (OrderParams { r, u, rho }, degenerate)
}

/// Order parameters of `s` in the frame of `t`; zero-norm neurons are
/// reported as degenerate.
pub fn to_order_params(s: &StudentNet, t: &TeacherNet) -> Result<OrderParams> {
    if s.d != t.d() {
        return Err(Error::InvalidConfig(format!(
            "student input dimension {} differs from teacher's {}",
            s.d,
            t.d()
        )));
    }
    match order_params_lenient(s, t) {
        (_, Some(index)) => Err(Error::DegenerateNeuron { index }),
        (p, None) => Ok(p),
    }
}

/// Residuals of the feasibility constraints; positive values are violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `||u_i|| - 1` per student neuron.
    pub correlation_ball: Vec<f64>,
    /// `-r_i` per student neuron.
    pub norm_sign: Vec<f64>,
    /// `|rho_ii' - u_i . u_i'| - sqrt(1 - ||u_i||^2) sqrt(1 - ||u_i'||^2)`, for `i < i'`.
    pub pair: Vec<((usize, usize), f64)>,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.correlation_ball
            .iter()
            .chain(&self.norm_sign)
            .chain(self.pair.iter().map(|(_, v)| v))
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

pub fn constraint_residuals(p: &OrderParams) -> ConstraintReport {
    let unorm: Vec<f64> = p.u.iter().map(|row| norm(row)).collect();
    let slack: Vec<f64> = unorm.iter().map(|q| (1.0 - q * q).max(0.0).sqrt()).collect();
    let mut pair = Vec::new();
    for i in 0..p.n() {
        for i2 in i + 1..p.n() {
            let gap = (p.rho[i][i2] - dot(&p.u[i], &p.u[i2])).abs();
            pair.push(((i, i2), gap - slack[i] * slack[i2]));
        }
    }
    ConstraintReport {
        correlation_ball: unorm.iter().map(|q| q - 1.0).collect(),
        norm_sign: p.r.iter().map(|r| -r).collect(),
        pair,
    }
}
