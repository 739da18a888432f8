//! Acceptance report: one line per criterion. The process fails if any
//! criterion fails unexpectedly. A criterion that cannot hold as stated is
//! still evaluated literally and reported as `FAIL [documented]`, provided
//! its failure is exactly the one explained in the README.

mod common;

use std::f64::consts::{PI, SQRT_2};
use std::time::{Duration, Instant};

use common::{labeled_group_assignments, mc_loss, partitions, random_theta};
use tslab_core::critical::{
    build_copy_average, ca_loss, erf_one_neuron_loss, fixed_point_norm, one_neuron_erf, one_neuron_fixed_point,
    one_neuron_relu, optimal_ca, optimal_partition, relu_one_neuron_magnitude, NormChoice,
};
use tslab_core::flow::ClassifyThresholds;
use tslab_core::harness::{run_hessian_scan, run_phase_sweep, DRule, HessianSeries, SweepConfig};
use tslab_core::kernel::mc_oracle;
use tslab_core::loss::{finite_difference_gradient, gradient, loss, sup_norm};
use tslab_core::network::constraint_residuals;
use tslab_core::{
    to_order_params, ActivationKind, Error, FlowConfig, KernelMethod, KernelSpec, Label, StudentNet, TeacherFrame,
    TeacherNet,
};

enum Verdict {
    Pass,
    Fail,
    Documented,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Outcome {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let m = ((hi - lo) / step).round() as usize;
    (0..=m).map(|i| lo + i as f64 * step).collect()
}

fn r_grid() -> Vec<f64> {
    grid(0.2, 2.0, 0.2)
}

fn u_grid() -> Vec<f64> {
    grid(-0.95, 0.95, 0.05)
}

fn unit_teacher(kind: ActivationKind, k: usize, d: usize, frame: TeacherFrame) -> TeacherNet {
    TeacherNet::unit_orthonormal(k, d, frame, kind).expect("valid teacher")
}

fn kernel_equivalence() -> Outcome {
    let mut worst = [0.0_f64; 2];
    for (slot, kind) in [ActivationKind::Erf, ActivationKind::Relu].into_iter().enumerate() {
        let exact = KernelSpec::analytic(kind).unwrap();
        let quad = KernelSpec::quadrature(kind, 80).unwrap();
        // g is symmetric in (r1, r2) for every backend, so the upper triangle suffices
        let rs = r_grid();
        for (i, &r1) in rs.iter().enumerate() {
            for &r2 in &rs[i..] {
                for &u in &u_grid() {
                    let e = (exact.g(r1, r2, u).unwrap() - quad.g(r1, r2, u).unwrap()).abs();
                    worst[slot] = worst[slot].max(e);
                }
            }
        }
    }
    let mut mc_ok = true;
    let mut mc_z: f64 = 0.0;
    for (kind, r1, r2, u, seed) in [
        (ActivationKind::Erf, 1.0, 1.0, 0.5, 1),
        (ActivationKind::Erf, 0.4, 1.8, -0.7, 2),
        (ActivationKind::Relu, 1.0, 1.0, 0.5, 3),
        (ActivationKind::Relu, 2.0, 0.6, -0.3, 4),
    ] {
        let est = mc_oracle(kind, r1, r2, u, 1_000_000, seed).unwrap();
        let z = (est.mean - KernelSpec::analytic(kind).unwrap().g(r1, r2, u).unwrap()).abs() / est.stderr;
        mc_z = mc_z.max(z);
        mc_ok &= z <= 3.0;
    }
    let tensor = KernelSpec::new(ActivationKind::Relu, KernelMethod::TensorHermite { nodes: 80 }).unwrap();
    let relu = KernelSpec::analytic(ActivationKind::Relu).unwrap();
    let tensor_err = (tensor.g(1.0, 1.0, 0.5).unwrap() - relu.g(1.0, 1.0, 0.5).unwrap()).abs();
    Outcome::check(
        worst[0] <= 1e-10 && worst[1] <= 1e-6 && mc_ok,
        format!(
            "80-node polar rule vs closed form, r1 <= r2 in 0.2..2, u in -0.95..0.95: erf {:.1e} (<= 1e-10), relu {:.1e} (<= 1e-6); \
             MC 1e6 samples max |z| {mc_z:.2} (<= 3); tensor Gauss-Hermite relu error {tensor_err:.1e} (info)",
            worst[0], worst[1]
        ),
    )
}

fn stein_rule() -> Outcome {
    let h = 1e-4;
    let kinds = [
        ActivationKind::Erf,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus { beta: 1.0 },
        ActivationKind::Gelu,
        ActivationKind::Relu,
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in kinds {
        let spec = KernelSpec::quadrature(kind, 80).unwrap();
        let mut worst: f64 = 0.0;
        for &r1 in &r_grid() {
            for r2 in [0.2, 1.0, 2.0] {
                for &u in &u_grid() {
                    let exact = spec.dg_du(r1, r2, u).unwrap();
                    let fd = (spec.g(r1, r2, u + h).unwrap() - spec.g(r1, r2, u - h).unwrap()) / (2.0 * h);
                    worst = worst.max((exact - fd).abs() / exact.abs());
                }
            }
        }
        ok &= worst <= 1e-6;
        parts.push(format!("{kind} {worst:.1e}"));
    }
    Outcome::check(ok, format!("max relative error (<= 1e-6): {}", parts.join(", ")))
}

fn erf_one_neuron() -> Outcome {
    let (mut grad, mut dev) = (0.0_f64, 0.0_f64);
    for k in 1..=10 {
        let t = unit_teacher(ActivationKind::Erf, k, k, TeacherFrame::RandomOrthonormal { seed: k as u64 });
        let cp = one_neuron_erf(k, &t).unwrap();
        let kf = k as f64;
        // k/3 - (2/pi) k^2 asin(1/(2k)), written independently of the library form
        let closed = kf / 3.0 - 2.0 / PI * kf * kf * (0.5 / kf).asin();
        grad = grad.max(cp.grad_norm);
        dev = dev.max((cp.loss_value - closed).abs());
    }
    let (l2, l5) = (erf_one_neuron_loss(2), erf_one_neuron_loss(5));
    let ok = grad <= 1e-9 && dev <= 1e-12 && (l2 - 0.0232216).abs() <= 5e-7 && (l5 - 0.0724524).abs() <= 5e-7;
    Outcome::check(
        ok,
        format!(
            "k = 1..10: max grad {grad:.1e} (<= 1e-9), max loss deviation {dev:.1e} (<= 1e-12); \
             L*(2) = {l2:.10} (quoted 0.0232216), L*(5) = {l5:.10} (quoted 0.0724524)"
        ),
    )
}

fn fixed_point_solver() -> Outcome {
    let erf = KernelSpec::analytic(ActivationKind::Erf).unwrap();
    let mut erf_dev: f64 = 0.0;
    for k in 2..=10 {
        let root = fixed_point_norm(&erf, 1.0 / (k as f64).sqrt()).unwrap();
        erf_dev = erf_dev.max((root.r - 1.0 / ((2 * k - 1) as f64).sqrt()).abs());
    }
    let softplus = KernelSpec::quadrature(ActivationKind::Softplus { beta: 1.0 }, 48).unwrap();
    let (mut bounds, mut no_bracket, mut worst_grad) = (0, 0, 0.0_f64);
    for k in 2..=10 {
        let t = unit_teacher(softplus.kind, k, k, TeacherFrame::CanonicalBasis);
        if let Ok((cp, _)) = one_neuron_fixed_point(&softplus, &t) {
            let (r, a) = (cp.student.norms()[0], cp.student.a(0));
            worst_grad = worst_grad.max(cp.grad_norm);
            if r <= 1.0 / (k as f64).sqrt() && a >= k as f64 {
                bounds += 1;
            }
        }
        if let Err(Error::NoBracket { .. }) = fixed_point_norm(&softplus, -1.0 / (k as f64).sqrt()) {
            no_bracket += 1;
        }
    }
    Outcome::check(
        erf_dev <= 1e-10 && bounds == 9 && no_bracket == 9,
        format!(
            "erf max |r - 1/sqrt(2k-1)| {erf_dev:.1e} (<= 1e-10); softplus bounds hold for {bounds}/9 k \
             (grad <= {worst_grad:.1e}); no bracket at u = -1/sqrt(k) for {no_bracket}/9 k"
        ),
    )
}

fn copy_average_criticality() -> Outcome {
    let mut total = 0;
    let (mut full, mut full_worst) = (0, 0.0_f64);
    let (mut partial, mut partial_min, mut partial_dev) = (0, f64::INFINITY, 0.0_f64);
    for k in 1..=6 {
        let canonical = unit_teacher(ActivationKind::Erf, k, k + 1, TeacherFrame::CanonicalBasis);
        let rotated = unit_teacher(ActivationKind::Erf, k, k + 1, TeacherFrame::RandomOrthonormal { seed: 7 + k as u64 });
        for n in 1..=3.min(k) {
            for groups in labeled_group_assignments(n, k) {
                let partition: Vec<usize> = groups.iter().map(Vec::len).collect();
                let covers_all = partition.iter().sum::<usize>() == k;
                for mask in 0..1u32 << n {
                    let signs: Vec<i8> = (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
                    total += 1;
                    let cp = build_copy_average(&canonical, &partition, &signs, &groups).unwrap();
                    if covers_all {
                        full += 1;
                        let rot = build_copy_average(&rotated, &partition, &signs, &groups).unwrap();
                        full_worst = full_worst.max(cp.grad_norm).max(rot.grad_norm);
                    } else {
                        partial += 1;
                        partial_min = partial_min.min(cp.grad_norm);
                        // pull of an uncovered teacher neuron: (2 sqrt2 / pi) |a_i| / sqrt(1 + r_i^2)
                        let pull = (0..n)
                            .map(|i| {
                                let r = cp.student.norms()[i];
                                2.0 * SQRT_2 / PI * cp.student.a(i).abs() / (1.0 + r * r).sqrt()
                            })
                            .fold(0.0, f64::max);
                        partial_dev = partial_dev.max((cp.grad_norm - pull).abs());
                    }
                }
            }
        }
    }
    let literal = full_worst <= 1e-8 && partial_min <= 1e-8;
    let explained = full_worst <= 1e-8 && partial_dev <= 1e-12;
    let detail = format!(
        "{total} signed points (n <= 3, k <= 6): {full} covering all teachers, max grad {full_worst:.1e} (<= 1e-8); \
         {partial} leaving teachers uncovered, min grad {partial_min:.3} and max deviation from the closed-form \
         uncovered-teacher gradient {partial_dev:.1e}"
    );
    let verdict = match (literal, explained) {
        (true, _) => Verdict::Pass,
        (false, true) => Verdict::Documented,
        (false, false) => Verdict::Fail,
    };
    Outcome { verdict, detail }
}

fn optimal_copy_average() -> Outcome {
    let mut checked = 0;
    let mut ok = true;
    for k in 2..=10 {
        for n in 1..=3.min(k - 1) {
            let best = ca_loss(&optimal_partition(n, k).unwrap(), k).unwrap();
            let t = unit_teacher(ActivationKind::Erf, k, k + 1, TeacherFrame::CanonicalBasis);
            let cp = optimal_ca(n, k, &t).unwrap();
            ok &= (cp.loss_value - best).abs() <= 1e-10;
            for m in 1..=n {
                for p in partitions(m, k) {
                    checked += 1;
                    ok &= best <= ca_loss(&p, k).unwrap() + 1e-15;
                }
            }
        }
    }
    let concave = (2..=50).all(|l| erf_one_neuron_loss(l + 1) - 2.0 * erf_one_neuron_loss(l) + erf_one_neuron_loss(l - 1) < 0.0);
    Outcome::check(
        ok && concave,
        format!("(1,...,1,k-n+1) minimal against {checked} subset partitions; discrete concavity on l = 2..50: {concave}"),
    )
}

fn sweep(kind: ActivationKind, n: usize, k: usize, flow: FlowConfig) -> tslab_core::harness::SweepOutcome {
    let cfg = SweepConfig {
        activation: kind,
        n_values: vec![n],
        k_values: vec![k],
        d_rule: DRule::KPlus1,
        seeds: (0..20).collect(),
        flow,
        kernel: KernelMethod::Analytic,
        output_path: None,
        teacher_frame: TeacherFrame::CanonicalBasis,
        thresholds: ClassifyThresholds::default(),
        workers: None,
    };
    run_phase_sweep(&cfg).expect("sweep runs")
}

fn gradient_flow_reproduction() -> Outcome {
    let erf = ActivationKind::Erf;
    let count = |cells: &[tslab_core::harness::PhaseCell], f: &dyn Fn(&tslab_core::harness::PhaseCell) -> bool| {
        cells.iter().filter(|c| f(c)).count()
    };
    let small = sweep(erf, 2, 3, FlowConfig::default()).cells;
    let small_ok = count(&small, &|c| {
        c.converged && c.label == Some(Label::OptCa) && c.gap.is_some_and(|g| g.abs() <= 1e-4)
    });
    let polish = FlowConfig { newton_polish: true, ..FlowConfig::default() };
    let mid = sweep(erf, 4, 8, polish).cells;
    let mid_ok = count(&mid, &|c| {
        c.converged && c.label == Some(Label::OptCa) && c.gap.is_some_and(|g| g.abs() <= 1e-4)
    });
    let mid_polished = count(&mid, &|c| c.polished);
    let red = sweep(erf, 8, 9, FlowConfig::default()).cells;
    let l2 = erf_one_neuron_loss(2);
    let red_ok = count(&red, &|c| c.label == Some(Label::PerturbedNCopy) && c.final_loss < l2);
    Outcome::check(
        small_ok == 20 && mid_ok == 20 && red_ok > 10,
        format!(
            "(2,3): {small_ok}/20 OptCA within 1e-4 of L*(2); (4,8): {mid_ok}/20 OptCA within 1e-4 of L*(5) \
             ({mid_polished} finished by Newton polish); (8,9): {red_ok}/20 perturbed n-copy below L*(2) (needs > 10)"
        ),
    )
}

fn hessian_sign_study() -> Outcome {
    let plus_one = run_hessian_scan(&(2..=14).collect::<Vec<_>>(), HessianSeries::Offset(1), DRule::KPlus1).unwrap();
    let double = run_hessian_scan(&(2..=8).collect::<Vec<_>>(), HessianSeries::Ratio(2), DRule::KPlus1).unwrap();
    let signs: String = plus_one.iter().map(|r| if r.min_eigenvalue > 0.0 { '+' } else { '-' }).collect();
    let flip = plus_one
        .windows(2)
        .find(|w| w[0].min_eigenvalue > 0.0 && w[1].min_eigenvalue < 0.0)
        .map(|w| w[1].n);
    let all_positive = double.iter().all(|r| r.min_eigenvalue > 0.0);
    let smallest_double = double.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
    Outcome::check(
        plus_one[0].min_eigenvalue > 0.0 && flip.is_some() && all_positive,
        format!(
            "k = n+1, n = 2..14 signs {signs} (first negative at n = {}); k = 2n, n = 2..8 all positive: \
             {all_positive} (smallest {smallest_double:.2e})",
            flip.map_or("none".into(), |n| n.to_string())
        ),
    )
}

fn relu_h(u: f64) -> f64 {
    ((1.0 - u * u).sqrt() + (PI - u.acos()) * u) / (2.0 * PI)
}

fn relu_one_neuron() -> Outcome {
    let mut dev: f64 = 0.0;
    for k in 1..=10 {
        let t = unit_teacher(ActivationKind::Relu, k, k, TeacherFrame::CanonicalBasis);
        let cp = one_neuron_relu(k, &t, NormChoice::Balanced).unwrap();
        let kf = k as f64;
        let h = relu_h(1.0 / kf.sqrt());
        let closed = kf / 2.0 + kf * (kf - 1.0) / (2.0 * PI) - 2.0 * kf * kf * h * h;
        dev = dev.max((cp.loss_value - closed).abs());
    }
    let m = relu_one_neuron_magnitude(4);
    let per_neuron = (3f64.sqrt() - 0.5f64.acos() + PI) / PI * 2.0;
    let runs = sweep(ActivationKind::Relu, 1, 4, FlowConfig::default()).cells;
    let converged: Vec<f64> = runs
        .iter()
        .filter(|c| c.converged)
        .map(|c| {
            let w = &c.final_theta[..c.d];
            w.iter().map(|x| x * x).sum::<f64>().sqrt() * c.final_theta[c.d]
        })
        .collect();
    let flow_dev = converged.iter().map(|x| (x - m).abs()).fold(0.0, f64::max);
    Outcome::check(
        dev <= 1e-10 && (m - per_neuron).abs() <= 1e-12 && converged.len() >= 10 && flow_dev <= 1e-3,
        format!(
            "k = 1..10 loss deviation {dev:.1e} (<= 1e-10); k = 4 magnitude {m:.10} vs per-neuron form {per_neuron:.10} \
             (quoted 2.4360682); flow: {}/20 converged, max |norm*a - theory| {flow_dev:.1e} (<= 1e-3)",
            converged.len()
        ),
    )
}

fn invariant_suites() -> Outcome {
    let mut inv: f64 = 0.0;
    for seed in 0..30u64 {
        for kind in [ActivationKind::Erf, ActivationKind::Tanh, ActivationKind::Relu] {
            let spec = match kind {
                ActivationKind::Tanh => KernelSpec::quadrature(kind, 32).unwrap(),
                _ => KernelSpec::analytic(kind).unwrap(),
            };
            let t = unit_teacher(kind, 4, 5, TeacherFrame::RandomOrthonormal { seed });
            let s = StudentNet::from_theta(3, 5, kind, random_theta(18, seed, 0.8)).unwrap();
            let base = loss(&s, &t, &spec).unwrap();
            let mut neurons: Vec<(Vec<f64>, f64)> = (0..3).map(|i| (s.w(i).to_vec(), s.a(i))).collect();
            neurons.rotate_left(1 + seed as usize % 2);
            match kind {
                ActivationKind::Relu => {
                    let c = 0.3 + seed as f64 * 0.2;
                    neurons[0].0.iter_mut().for_each(|x| *x *= c);
                    neurons[0].1 /= c;
                }
                _ => {
                    neurons[1].0.iter_mut().for_each(|x| *x = -*x);
                    neurons[1].1 = -neurons[1].1;
                }
            }
            let moved = StudentNet::from_neurons(kind, &neurons).unwrap();
            inv = inv.max((loss(&moved, &t, &spec).unwrap() - base).abs() / (1.0 + base));
        }
    }
    let mut feasible = 0;
    for seed in 0..100u64 {
        let (n, k) = (1 + seed as usize % 4, 1 + seed as usize % 6);
        let d = k + seed as usize % 3;
        let t = unit_teacher(ActivationKind::Erf, k, d, TeacherFrame::RandomOrthonormal { seed: seed + 500 });
        let s = StudentNet::from_theta(n, d, ActivationKind::Erf, random_theta(n * d + n, seed, 1.0)).unwrap();
        if constraint_residuals(&to_order_params(&s, &t).unwrap()).is_feasible(1e-12) {
            feasible += 1;
        }
    }
    let mut fd: f64 = 0.0;
    for seed in 0..20u64 {
        let kind = [ActivationKind::Erf, ActivationKind::Relu, ActivationKind::Sigmoid, ActivationKind::Gelu][seed as usize % 4];
        let spec = KernelSpec::preferred(kind);
        let t = unit_teacher(kind, 3, 4, TeacherFrame::RandomOrthonormal { seed: seed + 900 });
        let s = StudentNet::from_theta(2, 4, kind, random_theta(10, seed + 40, 0.9)).unwrap();
        let g = gradient(&s, &t, &spec).unwrap();
        let f = finite_difference_gradient(&s, &t, &spec).unwrap();
        let err = g.iter().zip(&f).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        fd = fd.max(err / (1.0 + sup_norm(&g)));
    }
    let t = unit_teacher(ActivationKind::Erf, 3, 4, TeacherFrame::CanonicalBasis);
    let s = StudentNet::from_theta(2, 4, ActivationKind::Erf, random_theta(10, 1, 0.8)).unwrap();
    let exact = loss(&s, &t, &KernelSpec::analytic(ActivationKind::Erf).unwrap()).unwrap();
    let (mean, stderr) = mc_loss(&s, &t, 400_000, 5);
    let z = (mean - exact).abs() / stderr;
    Outcome::check(
        inv <= 1e-11 && feasible == 100 && fd <= 1e-6 && z <= 3.0,
        format!(
            "permutation/sign/scaling max relative change {inv:.1e}; feasible {feasible}/100; \
             gradient vs finite difference {fd:.1e} (<= 1e-6, 20 points); loss vs direct MC |z| {z:.2}"
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);
    let criteria: [Criterion; 10] = [
        ("kernel equivalence", kernel_equivalence, Some(Duration::from_secs(10))),
        ("Stein rule for the correlation derivative", stein_rule, None),
        ("one-neuron erf closed form", erf_one_neuron, None),
        ("fixed-point solver", fixed_point_solver, Some(Duration::from_secs(30))),
        ("copy-average criticality", copy_average_criticality, Some(Duration::from_secs(60))),
        ("optimal copy-average selection", optimal_copy_average, None),
        ("gradient-flow reproduction", gradient_flow_reproduction, Some(Duration::from_secs(600))),
        ("Hessian sign study", hessian_sign_study, Some(Duration::from_secs(300))),
        ("ReLU one-neuron optimum", relu_one_neuron, None),
        ("invariant suites", invariant_suites, None),
    ];
    let (mut pass, mut documented, mut failed) = (0, 0, 0);
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if let Some(limit) = budget {
            if elapsed > *limit {
                outcome.verdict = Verdict::Fail;
                outcome.detail.push_str(&format!("; over the {} s budget", limit.as_secs()));
            }
        }
        let tag = match outcome.verdict {
            Verdict::Pass => {
                pass += 1;
                "PASS"
            }
            Verdict::Documented => {
                documented += 1;
                "FAIL [documented]"
            }
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
        };
        println!("criterion {:>2} {tag} {name} ({:.1} s): {}", i + 1, elapsed.as_secs_f64(), outcome.detail);
    }
    println!("acceptance: {pass} passed, {documented} documented failures, {failed} unexpected failures");
    if failed > 0 {
        std::process::exit(1);
    }
}
