//! Population loss of a student against a teacher, written through the
//! interaction kernel, with its gradient and a finite-difference Hessian.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::network::{order_params_lenient, StudentNet, TeacherNet};

/// Relative step of the central-difference gradient check.
pub const GRADIENT_FD_STEP: f64 = 1e-6;
/// Relative step of the finite-difference Hessian.
pub const HESSIAN_FD_STEP: f64 = 1e-5;

fn check_kinds(s: &StudentNet, t: &TeacherNet, spec: &KernelSpec) -> Result<()> {
    if s.kind != t.kind() || s.kind != spec.kind {
        return Err(Error::KindMismatch(format!(
            "student {}, teacher {}, kernel {}",
            s.kind,
            t.kind(),
            spec.kind
        )));
    }
    if s.d != t.d() {
        return Err(Error::InvalidConfig(format!(
            "student input dimension {} differs from teacher's {}",
            s.d,
            t.d()
        )));
    }
    Ok(())
}

/// `E[f*(x)^2]`, assembled through the kernel.
pub fn teacher_energy(t: &TeacherNet, spec: &KernelSpec) -> Result<f64> {
    let nv = t.norms();
    let b = t.b();
    let mut c = 0.0;
    for j in 0..t.k() {
        c += b[j] * b[j] * spec.g(nv[j], nv[j], 1.0)?;
        for j2 in 0..j {
            c += 2.0 * b[j] * b[j2] * spec.g(nv[j], nv[j2], 0.0)?;
        }
    }
    Ok(c)
}

/// Population loss `E[(f(x) - f*(x))^2]` over standard Gaussian `x`.
pub fn loss(s: &StudentNet, t: &TeacherNet, spec: &KernelSpec) -> Result<f64> {
    check_kinds(s, t, spec)?;
    let (p, _) = order_params_lenient(s, t);
    let nv = t.norms();
    let b = t.b();
    let mut total = teacher_energy(t, spec)?;
    for i in 0..s.n {
        let ai = s.a(i);
        total += ai * ai * spec.g(p.r[i], p.r[i], 1.0)?;
        for i2 in 0..i {
            total += 2.0 * ai * s.a(i2) * spec.g(p.r[i], p.r[i2], p.rho[i][i2])?;
        }
        for j in 0..t.k() {
            total -= 2.0 * ai * b[j] * spec.g(p.r[i], nv[j], p.u[i][j])?;
        }
    }
    Ok(total)
}

/// Gradient of [`loss`] with respect to `theta`, by the chain rule through
/// norms and correlations.
pub fn gradient(s: &StudentNet, t: &TeacherNet, spec: &KernelSpec) -> Result<Vec<f64>> {
    check_kinds(s, t, spec)?;
    let (p, degenerate) = order_params_lenient(s, t);
    if let Some(index) = degenerate {
        return Err(Error::DegenerateNeuron { index });
    }
    let (n, d) = (s.n, s.d);
    let nv = t.norms();
    let b = t.b();
    let mut grad = vec![0.0; s.param_count()];

    // pairwise student terms, each unordered pair visited once
    let mut coef_hat = vec![0.0; n]; // coefficient of w_i / r_i
    let mut da = vec![0.0; n];
    let mut mix = vec![vec![0.0; n]; n]; // coefficient of w_i' in dL/dw_i
    for i in 0..n {
        let (ri, ai) = (p.r[i], s.a(i));
        coef_hat[i] += ai * ai * spec.dg_dr_diag(ri)?;
        da[i] += 2.0 * ai * spec.g(ri, ri, 1.0)?;
        for i2 in 0..i {
            let (r2, a2, rho) = (p.r[i2], s.a(i2), p.rho[i][i2]);
            let [gv, g1, g2, gu] = spec.pair_terms(ri, r2, rho)?;
            let c = 2.0 * ai * a2;
            da[i] += 2.0 * a2 * gv;
            da[i2] += 2.0 * ai * gv;
            coef_hat[i] += c * (g1 - gu * rho / ri);
            coef_hat[i2] += c * (g2 - gu * rho / r2);
            mix[i][i2] = c * gu / (ri * r2);
            mix[i2][i] = mix[i][i2];
        }
    }

    for i in 0..n {
        let (ri, ai) = (p.r[i], s.a(i));
        let mut teacher_mix = vec![0.0; t.k()];
        for j in 0..t.k() {
            let u = p.u[i][j];
            let c = 2.0 * ai * b[j];
            let [gv, g1, _, gu] = spec.pair_terms(ri, nv[j], u)?;
            da[i] -= 2.0 * b[j] * gv;
            coef_hat[i] -= c * (g1 - gu * u / ri);
            teacher_mix[j] = -c * gu / (ri * nv[j]);
        }
        let off = i * (d + 1);
        let wi = s.w(i);
        for q in 0..d {
            let mut v = coef_hat[i] * wi[q] / ri;
            for (i2, m) in mix[i].iter().enumerate() {
                if i2 != i {
                    v += m * s.w(i2)[q];
                }
            }
            for (j, m) in teacher_mix.iter().enumerate() {
                v += m * t.v(j)[q];
            }
            grad[off + q] = v;
        }
        grad[off + d] = da[i];
    }
    Ok(grad)
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central-difference gradient of [`loss`], step `1e-6 (1 + |theta_i|)`.
pub fn finite_difference_gradient(s: &StudentNet, t: &TeacherNet, spec: &KernelSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; s.param_count()];
    let mut probe = s.clone();
    for (q, slot) in out.iter_mut().enumerate() {
        let x = s.theta[q];
        let h = GRADIENT_FD_STEP * (1.0 + x.abs());
        probe.theta[q] = x + h;
        let up = loss(&probe, t, spec)?;
        probe.theta[q] = x - h;
        let down = loss(&probe, t, spec)?;
        probe.theta[q] = x;
        *slot = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Symmetrized finite-difference Hessian with the largest asymmetry seen
/// before symmetrization.
#[derive(Debug, Clone)]
pub struct Hessian {
    pub matrix: DMatrix<f64>,
    pub asymmetry: f64,
}

/// Hessian by central differences of [`gradient`], step `1e-5 (1 + |theta_i|)`.
/// Columns are evaluated in parallel; the result does not depend on the
/// thread count.
pub fn hessian(s: &StudentNet, t: &TeacherNet, spec: &KernelSpec) -> Result<Hessian> {
    gradient(s, t, spec)?;
    let dim = s.param_count();
    let columns: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|q| {
            let x = s.theta[q];
            let h = HESSIAN_FD_STEP * (1.0 + x.abs());
            let mut probe = s.clone();
            probe.theta[q] = x + h;
            let up = gradient(&probe, t, spec)?;
            probe.theta[q] = x - h;
            let down = gradient(&probe, t, spec)?;
            Ok(up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let raw = DMatrix::from_fn(dim, dim, |r, c| columns[c][r]);
    let asymmetry = (0..dim)
        .flat_map(|r| (0..dim).map(move |c| (r, c)))
        .fold(0.0_f64, |m, (r, c)| m.max((raw[(r, c)] - raw[(c, r)]).abs()));
    let matrix = (&raw + raw.transpose()) * 0.5;
    Ok(Hessian { matrix, asymmetry })
}

pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
