//! Gradient flow `d theta / dt = -grad L(theta)` on the population loss,
//! integrated with the Dormand-Prince 5(4) pair, plus initialization and
//! classification of converged students.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::critical::{conjectured_loss, erf_one_neuron_loss};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::loss::{gradient, hessian, loss, sup_norm};
use crate::network::{to_order_params, OrderParams, StudentNet, TeacherNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    GaussianStd { std: f64 },
    /// Per-layer std `sqrt(2 / (fan_in + fan_out))`.
    Glorot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub init: InitScheme,
    pub seed: u64,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub snapshot_stride: usize,
    /// Finish with damped Newton steps once the gradient falls below
    /// `polish_below`.
    pub newton_polish: bool,
    pub polish_below: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            init: InitScheme::GaussianStd { std: 0.1 },
            seed: 0,
            grad_tol: 5e-8,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 100_000,
            snapshot_stride: 100,
            newton_polish: false,
            polish_below: 1e-5,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("polish_below", self.polish_below),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_steps < 1 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.snapshot_stride < 1 {
            return Err(Error::InvalidConfig("snapshot_stride must be at least 1".into()));
        }
        if let InitScheme::GaussianStd { std } = self.init {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::InvalidConfig(format!("init std must be positive, got {std}")));
            }
        }
        Ok(())
    }
}

/// I.i.d. Gaussian student: all incoming weights (neuron by neuron), then the
/// outgoing weights, from one seeded stream.
pub fn init_student(n: usize, d: usize, kind: ActivationKind, config: &FlowConfig) -> Result<StudentNet> {
    if n < 1 || d < 1 {
        return Err(Error::InvalidConfig(format!("need n, d >= 1, got n = {n}, d = {d}")));
    }
    let (std_w, std_a) = match config.init {
        InitScheme::GaussianStd { std } => (std, std),
        InitScheme::Glorot => ((2.0 / (d + n) as f64).sqrt(), (2.0 / (n + 1) as f64).sqrt()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut s = StudentNet::zeros(n, d, kind);
    for i in 0..n {
        for x in s.w_mut(i) {
            *x = std_w * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for i in 0..n {
        s.set_a(i, std_a * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    MaxSteps,
    StepUnderflow,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    OptCa,
    PerturbedNCopy,
    Other,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::OptCa => "opt_ca",
            Label::PerturbedNCopy => "perturbed_n_copy",
            Label::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub loss: f64,
    pub params: OrderParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub final_student: StudentNet,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub status: FlowStatus,
    /// Accepted integrator steps.
    pub steps: usize,
    pub rejected: usize,
    pub final_time: f64,
    /// Largest loss increase between consecutive accepted steps (<= 0 for a
    /// monotone run).
    pub max_loss_increase: f64,
    /// Newton polish produced the final point.
    pub polished: bool,
    pub degenerate_neuron: Option<usize>,
    pub diagnostic: Option<String>,
    pub snapshots: Vec<Snapshot>,
    pub label: Option<Label>,
}

// Dormand-Prince 5(4) tableau; the flow is autonomous, so the nodes c_i are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

struct Problem<'a> {
    template: StudentNet,
    teacher: &'a TeacherNet,
    spec: &'a KernelSpec,
}

impl Problem<'_> {
    fn student(&self, theta: &[f64]) -> StudentNet {
        self.template.with_theta(theta.to_vec())
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        gradient(&self.student(theta), self.teacher, self.spec)
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        loss(&self.student(theta), self.teacher, self.spec)
    }

    fn snapshot(&self, time: f64, theta: &[f64], loss: f64) -> Result<Snapshot> {
        Ok(Snapshot {
            time,
            loss,
            params: to_order_params(&self.student(theta), self.teacher)?,
        })
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &FlowConfig) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn initial_step(y: &[f64], f0: &[f64], cfg: &FlowConfig) -> f64 {
    let scale = |v: &[f64]| {
        let s: f64 = v
            .iter()
            .zip(y)
            .map(|(x, yi)| (x / (cfg.abs_tol + cfg.rel_tol * yi.abs())).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    };
    let (d0, d1) = (scale(y), scale(f0));
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(1.0)
}

/// Integrate the gradient flow from `s0` until the sup-norm of the gradient
/// drops to `grad_tol` or `max_steps` accepted steps have been taken.
pub fn integrate(s0: &StudentNet, t: &TeacherNet, spec: &KernelSpec, cfg: &FlowConfig) -> Result<FlowRecord> {
    cfg.validate()?;
    let problem = Problem {
        template: s0.clone(),
        teacher: t,
        spec,
    };
    let dim = s0.param_count();
    let mut y = s0.theta.clone();
    let mut g = problem.grad(&y)?;
    let mut current_loss = problem.loss(&y)?;
    let mut time = 0.0;
    let mut snapshots = vec![problem.snapshot(time, &y, current_loss)?];

    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut max_increase = f64::NEG_INFINITY;
    let mut polished = false;
    let mut polish_gate = cfg.polish_below;
    let mut status = FlowStatus::MaxSteps;
    let mut degenerate = None;
    let mut diagnostic = None;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    k[0] = g.iter().map(|x| -x).collect();
    let mut h = initial_step(&y, &k[0], cfg);
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];

    'outer: loop {
        if sup_norm(&g) <= cfg.grad_tol {
            status = FlowStatus::Converged;
            break;
        }
        if steps >= cfg.max_steps {
            diagnostic = Some(format!("stopped after {steps} accepted steps at t = {time:.6e}"));
            break;
        }
        if cfg.newton_polish && sup_norm(&g) <= polish_gate {
            if let Some((theta, grad)) = newton_polish(&problem, &y, cfg)? {
                current_loss = problem.loss(&theta)?;
                y = theta;
                g = grad;
                polished = true;
                status = FlowStatus::Converged;
                break;
            }
            // retry only after the flow has made real progress
            polish_gate = sup_norm(&g) * 0.1;
        }

        loop {
            if h < 1e-14 * time.abs().max(1.0) {
                status = FlowStatus::StepUnderflow;
                diagnostic = Some(format!("step size underflow (h = {h:e}) at t = {time:.6e}"));
                break 'outer;
            }
            for s in 1..7 {
                for q in 0..dim {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[q];
                    }
                    stage[q] = y[q] + h * acc;
                }
                match problem.grad(&stage) {
                    Ok(gs) => {
                        for (dst, v) in k[s].iter_mut().zip(&gs) {
                            *dst = -v;
                        }
                    }
                    Err(Error::DegenerateNeuron { index }) => {
                        status = FlowStatus::Degenerate;
                        degenerate = Some(index);
                        diagnostic = Some(format!("neuron {index} collapsed to zero norm at t = {time:.6e}"));
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                }
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
            }
            for q in 0..dim {
                err[q] = h * (0..7).map(|j| E[j] * k[j][q]).sum::<f64>();
            }
            let en = error_norm(&err, &y, &y_new, cfg);
            if en <= 1.0 {
                let new_loss = problem.loss(&y_new)?;
                max_increase = max_increase.max(new_loss - current_loss);
                current_loss = new_loss;
                time += h;
                steps += 1;
                std::mem::swap(&mut y, &mut y_new);
                // first-same-as-last: stage 7 was evaluated at the new point
                k.swap(0, 6);
                g = k[0].iter().map(|x| -x).collect();
                let factor = if en == 0.0 { MAX_FACTOR } else { (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR) };
                h *= factor;
                if steps.is_multiple_of(cfg.snapshot_stride) {
                    snapshots.push(problem.snapshot(time, &y, current_loss)?);
                }
                break;
            }
            rejected += 1;
            h *= (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
        }
    }

    let final_student = problem.student(&y);
    let last_snapshot_time = snapshots.last().map(|s| s.time);
    if last_snapshot_time != Some(time) && degenerate.is_none() {
        snapshots.push(problem.snapshot(time, &y, current_loss)?);
    }
    // for a degenerate stop this is the gradient at the last accepted point
    let final_grad_norm = sup_norm(&g);
    Ok(FlowRecord {
        final_student,
        final_loss: current_loss,
        final_grad_norm,
        converged: status == FlowStatus::Converged,
        status,
        steps,
        rejected,
        final_time: time,
        max_loss_increase: if steps == 0 { 0.0 } else { max_increase },
        polished,
        degenerate_neuron: degenerate,
        diagnostic,
        snapshots,
        label: None,
    })
}

/// Saddle-free damped Newton iterations from `theta`; returns the polished
/// point if the gradient reaches `grad_tol` without the loss going up.
fn newton_polish(problem: &Problem<'_>, theta: &[f64], cfg: &FlowConfig) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let mut y = theta.to_vec();
    let mut g = problem.grad(&y)?;
    let start_loss = problem.loss(&y)?;
    for _ in 0..20 {
        if sup_norm(&g) <= cfg.grad_tol {
            return Ok(Some((y, g)));
        }
        let h = hessian(&problem.student(&y), problem.teacher, problem.spec)?.matrix;
        let step = sfn_step(&h, &g, sup_norm(&g).sqrt());
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..8 {
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + scale * b).collect();
            if let Ok(gt) = problem.grad(&trial) {
                if sup_norm(&gt) < sup_norm(&g) && problem.loss(&trial)? <= start_loss + 1e-12 {
                    y = trial;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            return Ok(None);
        }
    }
    Ok((sup_norm(&g) <= cfg.grad_tol).then_some((y, g)))
}

/// `-sum_i (v_i . g) / max(|lambda_i|, floor) v_i`.
fn sfn_step(h: &DMatrix<f64>, g: &[f64], floor: f64) -> Vec<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let gv = DVector::from_column_slice(g);
    let mut step = DVector::zeros(g.len());
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let c = v.dot(&gv) / lambda.abs().max(floor);
        step -= v * c;
    }
    step.iter().copied().collect()
}

/// Thresholds of [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyThresholds {
    /// Minimum `|u|` of a copying neuron.
    pub copy: f64,
    /// Allowed deviation of the averaging neuron's `|u|` from `1/sqrt(k-n+1)`,
    /// and its maximum `|u|` on copied teacher neurons.
    pub average: f64,
    /// Minimum top `|u|` of every neuron in a perturbed n-copy.
    pub perturbed_copy: f64,
    /// Maximum `|final_loss - L*(k-n+1)|` for the optimal copy-average label.
    pub loss_gap: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        ClassifyThresholds {
            copy: 1.0 - 1e-3,
            average: 1e-2,
            perturbed_copy: 0.9,
            loss_gap: 1e-4,
        }
    }
}

/// Greedy matching: repeatedly take the largest remaining `|u_ij|` with row
/// and column both unused. Returns `(student, teacher, |u|)` in pick order.
pub fn greedy_matching(u: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = u.len();
    let k = u.first().map_or(0, Vec::len);
    let mut entries: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, u[i][j].abs()))
        .collect();
    entries.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let (mut row, mut col) = (vec![false; n], vec![false; k]);
    let mut out = Vec::new();
    for (i, j, v) in entries {
        if !row[i] && !col[j] {
            row[i] = true;
            col[j] = true;
            out.push((i, j, v));
        }
    }
    out
}

fn is_opt_ca(u: &[Vec<f64>], final_loss: f64, kind: ActivationKind, th: &ClassifyThresholds) -> bool {
    let n = u.len();
    let k = u.first().map_or(0, Vec::len);
    if n < 1 || n >= k {
        return false;
    }
    let matching = greedy_matching(u);
    if matching[..n - 1].iter().any(|&(_, _, v)| v < th.copy) {
        return false;
    }
    let mut copied = vec![false; k];
    let mut copier = vec![false; n];
    for &(i, j, _) in &matching[..n - 1] {
        copied[j] = true;
        copier[i] = true;
    }
    let avg = copier.iter().position(|c| !c).expect("one neuron is not copying");
    let target = 1.0 / ((k - n + 1) as f64).sqrt();
    let pattern = (0..k).all(|j| {
        let v = u[avg][j].abs();
        if copied[j] {
            v <= th.average
        } else {
            (v - target).abs() <= th.average
        }
    });
    let loss_ok = match kind {
        ActivationKind::Erf => (final_loss - erf_one_neuron_loss(k - n + 1)).abs() <= th.loss_gap,
        _ => true,
    };
    pattern && loss_ok
}

/// Label a converged run by the structure of its student-teacher correlations.
pub fn classify(rec: &FlowRecord, t: &TeacherNet, th: &ClassifyThresholds) -> Result<Label> {
    if !rec.converged {
        return Err(Error::NotConverged(format!(
            "cannot classify a run that stopped with status {:?}",
            rec.status
        )));
    }
    let p = to_order_params(&rec.final_student, t)?;
    Ok(label_order_params(&p, rec.final_loss, t.kind(), th))
}

pub fn label_order_params(p: &OrderParams, final_loss: f64, kind: ActivationKind, th: &ClassifyThresholds) -> Label {
    let (n, k) = (p.n(), p.k());
    if is_opt_ca(&p.u, final_loss, kind, th) {
        return Label::OptCa;
    }
    if n <= k {
        let matching = greedy_matching(&p.u);
        if matching.len() == n && matching.iter().all(|&(_, _, v)| v >= th.perturbed_copy) {
            return Label::PerturbedNCopy;
        }
    }
    Label::Other
}

/// Theory loss of a sweep cell: `L*(k-n+1)` for erf with `n < k`, zero for
/// `n >= k`, unknown otherwise.
pub fn theory_loss(kind: ActivationKind, n: usize, k: usize) -> Option<f64> {
    match kind {
        ActivationKind::Erf if n >= k => Some(0.0),
        ActivationKind::Erf => conjectured_loss(n, k).ok(),
        _ => None,
    }
}
