use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::critical::{one_neuron_erf, one_neuron_fixed_point, one_neuron_relu, optimal_ca, NormChoice};
use crate::error::Result;
use crate::harness::config::DRule;
use crate::kernel::{KernelMethod, KernelSpec};
use crate::loss::{hessian, min_eigenvalue};
use crate::network::{TeacherFrame, TeacherNet};

/// Structure of the one-neuron optimum for one activation and teacher width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneNeuronRow {
    pub kind: ActivationKind,
    pub k: usize,
    /// `closed_form` or `fixed_point`.
    pub method: String,
    pub r: Option<f64>,
    pub a: Option<f64>,
    pub u: f64,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    /// `r <= 1/sqrt(k)`, reported for tanh, sigmoid and softplus.
    pub norm_bound_holds: Option<bool>,
    /// `a >= k`, reported for tanh, sigmoid and softplus.
    pub weight_bound_holds: Option<bool>,
    pub error: Option<String>,
}

fn one_neuron_row(kind: ActivationKind, k: usize, method: KernelMethod) -> OneNeuronRow {
    let u = 1.0 / (k as f64).sqrt();
    let mut row = OneNeuronRow {
        kind,
        k,
        method: "closed_form".into(),
        r: None,
        a: None,
        u,
        loss: None,
        grad_norm: None,
        norm_bound_holds: None,
        weight_bound_holds: None,
        error: None,
    };
    let result = (|| {
        let t = TeacherNet::unit_orthonormal(k, k, TeacherFrame::CanonicalBasis, kind)?;
        match kind {
            ActivationKind::Erf => one_neuron_erf(k, &t),
            ActivationKind::Relu => one_neuron_relu(k, &t, NormChoice::Balanced),
            _ => {
                let spec = KernelSpec::new(kind, method)?;
                one_neuron_fixed_point(&spec, &t).map(|(cp, _)| cp)
            }
        }
    })();
    if !matches!(kind, ActivationKind::Erf | ActivationKind::Relu) {
        row.method = "fixed_point".into();
    }
    match result {
        Ok(cp) => {
            let (r, a) = (cp.student.norms()[0], cp.student.a(0));
            row.r = Some(r);
            row.a = Some(a);
            row.loss = Some(cp.loss_value);
            row.grad_norm = Some(cp.grad_norm);
            if matches!(kind, ActivationKind::Tanh | ActivationKind::Sigmoid | ActivationKind::Softplus { .. }) {
                row.norm_bound_holds = Some(r <= u);
                row.weight_bound_holds = Some(a >= k as f64);
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// One-neuron optimum per `(kind, k)`: closed forms for erf and ReLU, the
/// fixed-point solver (with `method` as kernel backend) otherwise. Failures
/// are reported in the row, not raised.
pub fn run_one_neuron_table(kinds: &[ActivationKind], ks: &[usize], method: KernelMethod) -> Vec<OneNeuronRow> {
    let cells: Vec<(ActivationKind, usize)> = kinds.iter().flat_map(|&kind| ks.iter().map(move |&k| (kind, k))).collect();
    cells.par_iter().map(|&(kind, k)| one_neuron_row(kind, k, method)).collect()
}

/// Which `k` goes with each `n` in a Hessian scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSeries {
    /// `k = n + offset`.
    Offset(usize),
    /// `k = ratio * n`.
    Ratio(usize),
}

impl HessianSeries {
    pub fn k(&self, n: usize) -> usize {
        match *self {
            HessianSeries::Offset(o) => n + o,
            HessianSeries::Ratio(r) => r * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianRow {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub min_eigenvalue: f64,
    /// `max |H - H^T|` of the finite-difference Hessian before symmetrization.
    pub asymmetry: f64,
    pub grad_norm: f64,
    pub loss: f64,
}

/// Minimum Hessian eigenvalue of the erf loss at the optimal copy-average
/// point, for each `n` with `k` from `series`.
pub fn run_hessian_scan(n_values: &[usize], series: HessianSeries, d_rule: DRule) -> Result<Vec<HessianRow>> {
    let spec = KernelSpec::analytic(ActivationKind::Erf)?;
    n_values
        .iter()
        .map(|&n| {
            let k = series.k(n);
            let d = d_rule.d(k);
            let t = TeacherNet::unit_orthonormal(k, d, TeacherFrame::CanonicalBasis, ActivationKind::Erf)?;
            let cp = optimal_ca(n, k, &t)?;
            let h = hessian(&cp.student, &t, &spec)?;
            Ok(HessianRow {
                n,
                k,
                d,
                min_eigenvalue: min_eigenvalue(&h.matrix),
                asymmetry: h.asymmetry,
                grad_norm: cp.grad_norm,
                loss: cp.loss_value,
            })
        })
        .collect()
}
