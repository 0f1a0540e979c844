//! Spectral diagnostics for the saddle-point matrix `K_A`: positive
//! stability, the Benzi-Simoncini sufficient condition for a real positive
//! spectrum, and a fixed-step demonstration of the residual flow
//! `d(q3,q4)/dt = -K_A' (q3,q4)` that diverges (rotates) on linear programs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::dynamics::{init_state, LiftedState};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::slf::assemble_kkt;

/// Eigenvalue written out for serialization.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// Spectral facts about `K_A` at a state.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Eigenvalue>,
    /// All real parts strictly positive.
    pub positive_stable: bool,
    /// All eigenvalues real (to 1e-10 relative) and positive.
    pub all_real_positive: bool,
    /// `lambda_min(d2L) >= 4 ||S_H||_2` with `S_H = J (d2L)^{-1} J'`; a
    /// sufficient condition for a real positive spectrum, not a necessary
    /// one.
    pub benzi_simoncini_holds: bool,
    /// Why the Benzi-Simoncini branch was skipped, when it was.
    pub benzi_simoncini_skipped: Option<String>,
    pub lambda_min: Option<f64>,
    pub schur_norm: Option<f64>,
}

/// Computes the spectral report at `q`. Equality-constrained (or
/// unconstrained) problems only.
pub fn analyze(p: &ProblemSpec, q: &LiftedState) -> Result<SpectralReport> {
    if !p.flags().is_equality_only {
        return Err(Error::IncompatibleRecipe(
            "spectral analysis covers equality-constrained problems".into(),
        ));
    }
    let k_a = assemble_kkt(p, q, false)?;
    let eig = k_a.complex_eigenvalues();
    let mut eigenvalues: Vec<Eigenvalue> = eig
        .iter()
        .map(|z| Eigenvalue { re: z.re, im: z.im })
        .collect();
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let max_abs = eigenvalues
        .iter()
        .map(|e| (e.re * e.re + e.im * e.im).sqrt())
        .fold(0.0f64, f64::max);
    let max_im = eigenvalues
        .iter()
        .map(|e| e.im.abs())
        .fold(0.0f64, f64::max);
    let min_re = eigenvalues
        .iter()
        .map(|e| e.re)
        .fold(f64::INFINITY, f64::min);
    // real parts within rounding of zero (relative to the spectral radius)
    // do not count as positive
    let positive_stable = min_re > 1e-12 * max_abs;
    let all_real_positive = positive_stable && max_im <= 1e-10 * max_abs;

    // Benzi-Simoncini branch
    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
    let hess_eigs = hess.clone().symmetric_eigenvalues();
    let lambda_min = hess_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let (holds, skipped, lambda_min_out, schur_norm) = if lambda_min <= 0.0 {
        (
            false,
            Some(format!(
                "Lagrangian Hessian is not positive definite (lambda_min = {lambda_min:.3e})"
            )),
            Some(lambda_min),
            None,
        )
    } else if p.m() == 0 {
        // no constraint block: the spectrum is that of the Hessian itself
        (true, None, Some(lambda_min), Some(0.0))
    } else {
        let jac = p.constraint_jacobian(&q.q1)?;
        let sv = jac.clone().svd(false, false).singular_values;
        let sigma_max = sv.iter().copied().fold(0.0f64, f64::max);
        let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if p.m() > p.n() || sigma_min <= 1e-10 * sigma_max {
            (
                false,
                Some("constraint Jacobian is not full row rank".to_string()),
                Some(lambda_min),
                None,
            )
        } else {
            // S_H = J H^{-1} J'
            let solved = hess
                .clone()
                .lu()
                .solve(&jac.transpose())
                .ok_or(Error::SingularMetric { cond: None })?;
            let s_h = &jac * solved;
            let s_h_sym = (&s_h + s_h.transpose()) * 0.5;
            let norm = s_h_sym
                .symmetric_eigenvalues()
                .iter()
                .map(|v| v.abs())
                .fold(0.0f64, f64::max);
            (lambda_min >= 4.0 * norm, None, Some(lambda_min), Some(norm))
        }
    };

    Ok(SpectralReport {
        eigenvalues,
        positive_stable,
        all_real_positive,
        benzi_simoncini_holds: holds,
        benzi_simoncini_skipped: skipped,
        lambda_min: lambda_min_out,
        schur_norm,
    })
}

/// Norm history of the linear residual flow `x' = -K x` integrated with
/// classical fixed-step RK4.
#[derive(Clone, Debug, Serialize)]
pub struct FlowReport {
    pub steps: usize,
    pub dt: f64,
    pub initial_norm: f64,
    pub min_norm: f64,
    pub final_norm: f64,
    /// `min_norm / initial_norm` (1.0 for a zero start, which stays at its
    /// equilibrium).
    pub min_relative_norm: f64,
    pub final_relative_norm: f64,
}

/// Integrates `x' = -K x` and records the worst norm contraction.
pub fn residual_flow_norms(
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
    dt: f64,
) -> FlowReport {
    let f = |x: &DVector<f64>| -(k * x);
    let initial_norm = x0.norm();
    let mut x = x0.clone();
    let mut min_norm = initial_norm;
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (dt / 2.0)));
        let k3 = f(&(&x + &k2 * (dt / 2.0)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        min_norm = min_norm.min(x.norm());
    }
    let final_norm = x.norm();
    let (min_rel, final_rel) = if initial_norm > 0.0 {
        (min_norm / initial_norm, final_norm / initial_norm)
    } else {
        (1.0, 1.0)
    };
    FlowReport {
        steps,
        dt,
        initial_norm,
        min_norm,
        final_norm,
        min_relative_norm: min_rel,
        final_relative_norm: final_rel,
    }
}

/// Demonstrates non-convergence of the Arrow-Hurwicz-Uzawa flow on a linear
/// program: the residual norm never contracts. Rejects non-LP input.
pub fn lp_divergence_demo(p: &ProblemSpec, steps: usize, dt: f64) -> Result<FlowReport> {
    if !p.flags().is_lp {
        return Err(Error::IncompatibleRecipe(
            "the divergence demo is defined for linear programs".into(),
        ));
    }
    if !p.flags().is_equality_only {
        return Err(Error::IncompatibleRecipe(
            "the divergence demo needs equality constraints only".into(),
        ));
    }
    let (q1, q2) = p.default_start();
    let q = init_state(p, &q1, &q2)?;
    let k_a = assemble_kkt(p, &q, false)?;
    let mut x0 = DVector::zeros(p.n() + p.m());
    x0.rows_mut(0, p.n()).copy_from(&q.q3);
    x0.rows_mut(p.n(), p.m()).copy_from(&q.q4);
    Ok(residual_flow_norms(&k_a.transpose(), &x0, steps, dt))
}

impl SpectralReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!(self)
    }
}
