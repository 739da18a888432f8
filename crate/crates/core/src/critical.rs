//! One-neuron optima (closed form and fixed point), copy-average critical
//! points, their exact losses and counts.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::kernel::{relu_h, KernelSpec};
use crate::loss::{gradient, loss, sup_norm};
use crate::network::{StudentNet, TeacherNet};

/// Lower end of the fixed-point bracket scan.
pub const SCAN_R_MIN: f64 = 1e-4;
/// Upper end of the fixed-point bracket scan.
pub const SCAN_R_MAX: f64 = 1.0;
/// Log-spaced scan points.
pub const SCAN_POINTS: usize = 200;
/// Target `|f|` at the refined root.
pub const ROOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CriticalKind {
    OneNeuronAverage,
    CopyAverage { partition: Vec<usize>, signs: Vec<i8> },
    NCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub student: StudentNet,
    pub kind_label: CriticalKind,
    pub loss_value: f64,
    /// Sup-norm of the population-loss gradient at `student`.
    pub grad_norm: f64,
}

impl CriticalPoint {
    fn certify(student: StudentNet, kind_label: CriticalKind, t: &TeacherNet, spec: &KernelSpec) -> Result<Self> {
        let loss_value = loss(&student, t, spec)?;
        let grad_norm = sup_norm(&gradient(&student, t, spec)?);
        Ok(CriticalPoint {
            student,
            kind_label,
            loss_value,
            grad_norm,
        })
    }
}

/// Optimal one-neuron loss against a unit-orthonormal erf teacher of width `k`:
/// `(2/pi) (k asin(1/2) - k^2 asin(1/(2k)))`; zero for `k = 0`.
pub fn erf_one_neuron_loss(k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let kf = k as f64;
    2.0 / PI * (kf * 0.5_f64.asin() - kf * kf * (0.5 / kf).asin())
}

/// Loss of the optimal soft committee machine fit: `k/3 - (2/pi) k^2 asin(1/(2k))`.
pub fn soft_committee_loss_erf(k: usize) -> f64 {
    let kf = k as f64;
    kf / 3.0 - 2.0 / PI * kf * kf * (0.5 / kf).asin()
}

/// `||w*|| a*` of the ReLU one-neuron optimum: `(k / h(1)) h(1/sqrt k)`.
pub fn relu_one_neuron_magnitude(k: usize) -> f64 {
    let kf = k as f64;
    kf / relu_h(1.0) * relu_h(1.0 / kf.sqrt())
}

/// `k^2 (h(0) - h(1/sqrt k)^2 / h(1)) + k (h(1) - h(0))`.
pub fn relu_one_neuron_loss(k: usize) -> f64 {
    let kf = k as f64;
    let hk = relu_h(1.0 / kf.sqrt());
    kf * kf * (relu_h(0.0) - hk * hk / relu_h(1.0)) + kf * (relu_h(1.0) - relu_h(0.0))
}

fn require_unit_teacher(t: &TeacherNet, kind: ActivationKind) -> Result<()> {
    if t.kind() != kind {
        return Err(Error::KindMismatch(format!("expected a {kind} teacher, got {}", t.kind())));
    }
    if !t.is_unit_orthonormal() {
        return Err(Error::InvalidConfig("teacher must be unit-orthonormal".into()));
    }
    Ok(())
}

/// `scale * sum_{j in group} v_j / sqrt(|group|)`.
fn average_direction(t: &TeacherNet, group: &[usize], scale: f64) -> Vec<f64> {
    let c = scale / (group.len() as f64).sqrt();
    let mut w = vec![0.0; t.d()];
    for &j in group {
        for (x, v) in w.iter_mut().zip(t.v(j)) {
            *x += c * v;
        }
    }
    w
}

fn check_width(k: usize, t: &TeacherNet) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidConfig("teacher width k must be at least 1".into()));
    }
    if t.k() != k {
        return Err(Error::InvalidConfig(format!("teacher has width {}, expected {k}", t.k())));
    }
    Ok(())
}

/// Closed-form optimal one-neuron student for a unit-orthonormal erf teacher:
/// `||w|| = 1/sqrt(2k-1)`, `a = k`, direction `sum_j v_j / sqrt k`.
pub fn one_neuron_erf(k: usize, t: &TeacherNet) -> Result<CriticalPoint> {
    check_width(k, t)?;
    require_unit_teacher(t, ActivationKind::Erf)?;
    let group: Vec<usize> = (0..k).collect();
    let r = 1.0 / ((2 * k - 1) as f64).sqrt();
    let s = StudentNet::from_neurons(ActivationKind::Erf, &[(average_direction(t, &group, r), k as f64)])?;
    CriticalPoint::certify(s, CriticalKind::OneNeuronAverage, t, &KernelSpec::analytic(ActivationKind::Erf)?)
}

/// Where to sit on the ReLU equal-loss hyperbola `||w|| a = const`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    Balanced,
    Norm(f64),
}

/// Optimal one-neuron student for a unit-orthonormal ReLU teacher.
pub fn one_neuron_relu(k: usize, t: &TeacherNet, choice: NormChoice) -> Result<CriticalPoint> {
    check_width(k, t)?;
    require_unit_teacher(t, ActivationKind::Relu)?;
    let m = relu_one_neuron_magnitude(k);
    let (r, a) = match choice {
        NormChoice::Balanced => (m.sqrt(), m.sqrt()),
        NormChoice::Norm(r) if r > 0.0 && r.is_finite() => (r, m / r),
        NormChoice::Norm(r) => {
            return Err(Error::InvalidConfig(format!("norm must be positive, got {r}")));
        }
    };
    let group: Vec<usize> = (0..k).collect();
    let s = StudentNet::from_neurons(ActivationKind::Relu, &[(average_direction(t, &group, r), a)])?;
    CriticalPoint::certify(s, CriticalKind::OneNeuronAverage, t, &KernelSpec::analytic(ActivationKind::Relu)?)
}

/// `f(r, u) = (d/dr)[log g(r, r, 1) / 2 - log g(r, 1, u)]`; `None` where a
/// logarithm is undefined (`g <= 0`).
pub fn fixed_point_function(spec: &KernelSpec, r: f64, u: f64) -> Result<Option<f64>> {
    let [diag, diag_dr, cross, cross_dr] = spec.one_neuron_terms(r, u)?;
    if diag <= 0.0 || cross <= 0.0 {
        return Ok(None);
    }
    Ok(Some(0.5 * diag_dr / diag - cross_dr / cross))
}

/// Root of the fixed-point equation at a given correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRoot {
    pub r: f64,
    pub residual: f64,
    /// Sign changes found by the scan; more than one means the root was chosen
    /// by lowest one-neuron loss.
    pub brackets: usize,
}

fn one_neuron_gain(spec: &KernelSpec, r: f64, u: f64) -> Result<f64> {
    // loss at the optimal outgoing weight is C - k^2 g(r,1,u)^2 / g(r,r,1)
    let [diag, _, cross, _] = spec.one_neuron_terms(r, u)?;
    Ok(cross * cross / diag)
}

/// Solve `f(r, u) = 0` for `r` in `[1e-4, 1]`: log-spaced scan for sign
/// changes, then bisection.
pub fn fixed_point_norm(spec: &KernelSpec, u: f64) -> Result<NormRoot> {
    let f = |r: f64| fixed_point_function(spec, r, u);
    let ratio = (SCAN_R_MAX / SCAN_R_MIN).ln() / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| if i + 1 == SCAN_POINTS { SCAN_R_MAX } else { SCAN_R_MIN * (ratio * i as f64).exp() })
        .collect();
    let values: Vec<Option<f64>> = grid.iter().map(|&r| f(r)).collect::<Result<_>>()?;

    let mut brackets = Vec::new();
    for i in 0..SCAN_POINTS - 1 {
        if let (Some(a), Some(b)) = (values[i], values[i + 1]) {
            if a == 0.0 {
                brackets.push((grid[i], grid[i]));
            } else if a * b < 0.0 {
                brackets.push((grid[i], grid[i + 1]));
            }
        }
    }
    if let Some(Some(last)) = values.last() {
        if *last == 0.0 {
            brackets.push((SCAN_R_MAX, SCAN_R_MAX));
        }
    }
    if brackets.is_empty() {
        return Err(Error::NoBracket { kind: spec.kind, u });
    }
    if brackets.len() > 1 {
        warn!(
            "{} sign changes of the fixed-point function for {} at u = {u}; keeping the lowest-loss root",
            brackets.len(),
            spec.kind
        );
    }

    let mut best: Option<(f64, NormRoot)> = None;
    for &(lo, hi) in &brackets {
        let (r, residual) = bisect(&f, lo, hi)?;
        let gain = one_neuron_gain(spec, r, u)?;
        if best.as_ref().is_none_or(|(g, _)| gain > *g) {
            best = Some((
                gain,
                NormRoot {
                    r,
                    residual,
                    brackets: brackets.len(),
                },
            ));
        }
    }
    Ok(best.expect("at least one bracket").1)
}

fn bisect(f: &impl Fn(f64) -> Result<Option<f64>>, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
    let eval = |r: f64| -> Result<f64> {
        f(r)?.ok_or_else(|| Error::Domain(format!("fixed-point function undefined at r = {r}")))
    };
    let mut flo = eval(lo)?;
    if flo == 0.0 || lo == hi {
        return Ok((lo, flo));
    }
    let mut mid = 0.5 * (lo + hi);
    let mut fmid = eval(mid)?;
    for _ in 0..200 {
        if fmid.abs() <= ROOT_TOL * 1e-2 || hi - lo <= 4.0 * f64::EPSILON * mid {
            break;
        }
        if (fmid < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        fmid = eval(mid)?;
    }
    Ok((mid, fmid))
}

/// One-neuron critical point at correlation `1/sqrt k` with `||w||` from the
/// fixed-point equation and `a = k g(r,1,u) / g(r,r,1)`.
pub fn one_neuron_fixed_point(spec: &KernelSpec, t: &TeacherNet) -> Result<(CriticalPoint, NormRoot)> {
    let k = t.k();
    require_unit_teacher(t, spec.kind)?;
    let u = 1.0 / (k as f64).sqrt();
    let root = fixed_point_norm(spec, u)?;
    let [diag, _, cross, _] = spec.one_neuron_terms(root.r, u)?;
    let a = k as f64 * cross / diag;
    let group: Vec<usize> = (0..k).collect();
    let s = StudentNet::from_neurons(spec.kind, &[(average_direction(t, &group, root.r), a)])?;
    let cp = CriticalPoint::certify(s, CriticalKind::OneNeuronAverage, t, spec)?;
    Ok((cp, root))
}

/// `f(r, u)` tabulated on a grid; `values[i][j]` is at `(r_grid[i], u_grid[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FGrid {
    pub kind: ActivationKind,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl FGrid {
    /// For each `u` column, the `r` intervals across which `f` changes sign.
    pub fn sign_changes(&self, j: usize) -> Vec<(f64, f64)> {
        let col: Vec<Option<f64>> = self.values.iter().map(|row| row[j]).collect();
        col.windows(2)
            .zip(self.r.windows(2))
            .filter_map(|(v, r)| match (v[0], v[1]) {
                (Some(a), Some(b)) if a * b < 0.0 || a == 0.0 => Some((r[0], r[1])),
                _ => None,
            })
            .collect()
    }
}

pub fn f_grid(spec: &KernelSpec, r_grid: &[f64], u_grid: &[f64]) -> Result<FGrid> {
    if r_grid.iter().any(|&r| r <= 0.0) {
        return Err(Error::Domain("fixed-point grid needs r > 0".into()));
    }
    if u_grid.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
        return Err(Error::Domain("fixed-point grid needs u in (0, 1)".into()));
    }
    let values = r_grid
        .iter()
        .map(|&r| u_grid.iter().map(|&u| fixed_point_function(spec, r, u)).collect())
        .collect::<Result<_>>()?;
    Ok(FGrid {
        kind: spec.kind,
        r: r_grid.to_vec(),
        u: u_grid.to_vec(),
        values,
    })
}

/// Consecutive teacher groups `{0..l1}, {l1..l1+l2}, ...` for a partition.
pub fn consecutive_groups(partition: &[usize]) -> Vec<Vec<usize>> {
    let mut start = 0;
    partition
        .iter()
        .map(|&l| {
            let g = (start..start + l).collect();
            start += l;
            g
        })
        .collect()
}

/// Copy-average point: neuron `i` sits at the erf one-neuron optimum of its
/// teacher group, with `(w_i, a_i)` multiplied by `signs[i]`.
///
/// The point is critical only when the groups cover every teacher neuron.
/// Each uncovered teacher neuron `v` leaves the gradient component
/// `-(2 sqrt 2 / pi) a_i / sqrt(1 + r_i^2)` along `v` on every student neuron,
/// because `E[sigma'(w.x)] E[z sigma(z)]` does not vanish for erf. The
/// certified `grad_norm` reports it either way.
pub fn build_copy_average(t: &TeacherNet, partition: &[usize], signs: &[i8], groups: &[Vec<usize>]) -> Result<CriticalPoint> {
    require_unit_teacher(t, ActivationKind::Erf)?;
    let n = partition.len();
    if n == 0 || signs.len() != n || groups.len() != n {
        return Err(Error::InvalidConfig(format!(
            "partition, signs and groups must have equal non-zero length, got {n}, {}, {}",
            signs.len(),
            groups.len()
        )));
    }
    let mut used = vec![false; t.k()];
    let mut neurons = Vec::with_capacity(n);
    for ((&l, &sign), group) in partition.iter().zip(signs).zip(groups) {
        if l == 0 || group.len() != l {
            return Err(Error::InvalidConfig(format!("group {group:?} does not match size {l}")));
        }
        if sign != 1 && sign != -1 {
            return Err(Error::InvalidConfig(format!("signs must be +1 or -1, got {sign}")));
        }
        for &j in group {
            if j >= t.k() {
                return Err(Error::InvalidConfig(format!("teacher index {j} out of range")));
            }
            if std::mem::replace(&mut used[j], true) {
                return Err(Error::InvalidConfig(format!("teacher neuron {j} appears in two groups")));
            }
        }
        let sf = f64::from(sign);
        let r = 1.0 / ((2 * l - 1) as f64).sqrt();
        neurons.push((average_direction(t, group, sf * r), sf * l as f64));
    }
    let s = StudentNet::from_neurons(ActivationKind::Erf, &neurons)?;
    let label = CriticalKind::CopyAverage {
        partition: partition.to_vec(),
        signs: signs.to_vec(),
    };
    CriticalPoint::certify(s, label, t, &KernelSpec::analytic(ActivationKind::Erf)?)
}

/// Student whose `n` neurons copy teacher neurons `0..n`. Critical only for
/// `n = k`; for `n < k` the uncovered teacher neurons pull on every copy (see
/// [`build_copy_average`]).
pub fn n_copy(n: usize, t: &TeacherNet) -> Result<CriticalPoint> {
    if n == 0 || n > t.k() {
        return Err(Error::InvalidConfig(format!("n-copy needs 1 <= n <= k, got n = {n}")));
    }
    let neurons: Vec<(Vec<f64>, f64)> = (0..n).map(|j| (t.v(j).to_vec(), t.b()[j])).collect();
    let s = StudentNet::from_neurons(t.kind(), &neurons)?;
    CriticalPoint::certify(s, CriticalKind::NCopy, t, &KernelSpec::preferred(t.kind()))
}

fn check_partition(partition: &[usize], k: usize) -> Result<usize> {
    let total: usize = partition.iter().sum();
    if total > k {
        return Err(Error::InvalidConfig(format!("partition covers {total} teacher neurons but k = {k}")));
    }
    if partition.contains(&0) {
        return Err(Error::InvalidConfig("partition parts must be positive".into()));
    }
    Ok(total)
}

/// Exact erf loss of a copy-average point: one-neuron losses of the groups
/// plus `1/3` per uncovered teacher neuron.
pub fn ca_loss(partition: &[usize], k: usize) -> Result<f64> {
    let covered = check_partition(partition, k)?;
    let groups: f64 = partition.iter().map(|&l| erf_one_neuron_loss(l)).sum();
    Ok(groups + (k - covered) as f64 / 3.0)
}

/// Partition `(1, ..., 1, k - n + 1)` of the minimum-loss copy-average point.
pub fn optimal_partition(n: usize, k: usize) -> Result<Vec<usize>> {
    if n < 1 || n >= k {
        return Err(Error::InvalidConfig(format!(
            "optimal copy-average needs 1 <= n < k (n >= k reaches zero loss), got n = {n}, k = {k}"
        )));
    }
    let mut p = vec![1; n - 1];
    p.push(k - n + 1);
    Ok(p)
}

pub fn optimal_ca(n: usize, k: usize, t: &TeacherNet) -> Result<CriticalPoint> {
    check_width(k, t)?;
    let partition = optimal_partition(n, k)?;
    build_copy_average(t, &partition, &vec![1; n], &consecutive_groups(&partition))
}

/// Predicted optimal loss of an `n`-neuron erf student: `L*(k - n + 1)`.
pub fn conjectured_loss(n: usize, k: usize) -> Result<f64> {
    optimal_partition(n, k)?;
    Ok(erf_one_neuron_loss(k - n + 1))
}

fn binomial(n: u64, r: u64) -> u128 {
    let r = r.min(n - r);
    (0..r).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// Number of copy-average points with the given partition: neuron orderings
/// distinguishable by group size times the ways to pick the teacher groups.
pub fn count_ca_points(partition: &[usize], k: usize) -> Result<u128> {
    check_partition(partition, k)?;
    let n = partition.len() as u64;
    let mut orderings: u128 = (1..=n).map(u128::from).product();
    let mut sorted = partition.to_vec();
    sorted.sort_unstable();
    for run in sorted.chunk_by(|a, b| a == b) {
        orderings /= (1..=run.len() as u64).map(u128::from).product::<u128>();
    }
    let mut left = k as u64;
    let mut choices = 1u128;
    for &l in partition {
        choices *= binomial(left, l as u64);
        left -= l as u64;
    }
    Ok(orderings * choices)
}
