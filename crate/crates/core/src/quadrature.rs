//! Gaussian quadrature rules built from three-term recurrences.
//!
//! Nodes come from the Jacobi matrix eigenvalues (Golub-Welsch) and are then
//! polished with Newton steps on the orthonormal polynomial; weights use the
//! Christoffel form `1 / sum_j p_j(x)^2`. Tables are cached per `(family, n)`
//! and shared read-only.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Weight 1 on [-1, 1].
    Legendre,
    /// Weight e^{-t} on [0, inf).
    Laguerre,
    /// Standard normal density on the real line.
    ProbHermite,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

fn recurrence(family: Family, j: usize) -> (f64, f64) {
    // (alpha_j, sqrt(beta_{j+1})) of the monic recurrence
    let jf = j as f64;
    match family {
        Family::Legendre => {
            let k = jf + 1.0;
            (0.0, k / (4.0 * k * k - 1.0).sqrt())
        }
        Family::Laguerre => (2.0 * jf + 1.0, jf + 1.0),
        Family::ProbHermite => (0.0, (jf + 1.0).sqrt()),
    }
}

fn total_mass(family: Family) -> f64 {
    match family {
        Family::Legendre => 2.0,
        Family::Laguerre | Family::ProbHermite => 1.0,
    }
}

/// Orthonormal p_n(x), its derivative, and sum_{j<n} p_j(x)^2.
fn evaluate(family: Family, n: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0 / total_mass(family).sqrt();
    let mut dp_prev = 0.0;
    let mut dp = 0.0;
    let mut sum_sq = 0.0;
    let mut b_prev = 0.0;
    for j in 0..n {
        sum_sq += p * p;
        let (a, b) = recurrence(family, j);
        let p_next = ((x - a) * p - b_prev * p_prev) / b;
        let dp_next = (p + (x - a) * dp - b_prev * dp_prev) / b;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        b_prev = b;
    }
    (p, dp, sum_sq)
}

fn build(family: Family, n: usize) -> Rule {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let (a, b) = recurrence(family, j);
        jacobi[(j, j)] = a;
        if j + 1 < n {
            jacobi[(j, j + 1)] = b;
            jacobi[(j + 1, j)] = b;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = evaluate(family, n, *x);
            if dp == 0.0 || !dp.is_finite() {
                break;
            }
            let step = p / dp;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, _, sum_sq) = evaluate(family, n, *x);
        weights.push(1.0 / sum_sq);
    }
    Rule { nodes, weights }
}

type Cache = Mutex<HashMap<(Family, usize), Arc<Rule>>>;

/// Cached rule with `n` nodes for `family`.
pub fn rule(family: Family, n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&(family, n)) {
        return Arc::clone(r);
    }
    let built = Arc::new(build(family, n));
    cache
        .lock()
        .unwrap()
        .entry((family, n))
        .or_insert(built)
        .clone()
}
