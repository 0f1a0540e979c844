//! The lifted state, the control-affine vector field it obeys, and the
//! hypersurface restoration that finishes every jump.
//!
//! The lifted state `q = (q0, q1, q2, q3, q4, q5)` carries the cost
//! multiplier, the optimization variable, the constraint multiplier, the
//! negative Lagrangian gradient, the constraint values and the cost. Three
//! integrals of motion tie the last three coordinates to the first three:
//!
//! ```text
//!     q3 + dL/dq1(q0, q1, q2) = 0,   q4 - g(q1) = 0,   q5 - g0(q1) = 0
//! ```
//!
//! The generator never integrates the field; it jumps in `(q0, q1, q2)` and
//! recomputes `(q3, q4, q5)` exactly, so iterates stay on the hypersurface by
//! construction. [`eval_field`] exists for invariant checks and for the flow
//! demonstrations in [`crate::stability`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

/// Point in the lifted space. `v1` is present only in accelerated mode,
/// where the variable rate is steered through a velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedState {
    pub q0: f64,
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub q3: DVector<f64>,
    pub q4: DVector<f64>,
    pub q5: f64,
    pub v1: Option<DVector<f64>>,
}

/// Control `u = (u0, u1, u2)`: rates of the cost multiplier, the variable
/// (or its velocity in accelerated mode) and the constraint multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlVector {
    pub u0: f64,
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
}

impl ControlVector {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            u0: 0.0,
            u1: DVector::zeros(n),
            u2: DVector::zeros(m),
        }
    }

    /// Control with `u0 = 0`, the normalization used by every recipe.
    pub fn from_parts(u1: DVector<f64>, u2: DVector<f64>) -> Self {
        Self { u0: 0.0, u1, u2 }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            u0: self.u0 * s,
            u1: &self.u1 * s,
            u2: &self.u2 * s,
        }
    }
}

/// Time derivative of a [`LiftedState`] under a given control.
#[derive(Clone, Debug)]
pub struct StateRate {
    pub dq0: f64,
    pub dq1: DVector<f64>,
    pub dq2: DVector<f64>,
    pub dq3: DVector<f64>,
    pub dq4: DVector<f64>,
    pub dq5: f64,
    pub dv1: Option<DVector<f64>>,
}

/// The stabilizable subsystem rows `(q0, q2, q3, q4)` written as a matrix in
/// `u`, so that `B * u` reproduces those rows of [`eval_field`].
#[derive(Clone, Debug)]
pub struct ControlJacobian {
    /// `(1 + m + n + m) x (1 + n + m)`, rows ordered `q0, q2, q3, q4`.
    pub matrix: DMatrix<f64>,
}

fn check_control_dims(p: &ProblemSpec, u: &ControlVector) -> Result<()> {
    if u.u1.len() != p.n() {
        return Err(Error::DimensionMismatch {
            context: "control u1",
            expected: p.n(),
            actual: u.u1.len(),
        });
    }
    if u.u2.len() != p.m() {
        return Err(Error::DimensionMismatch {
            context: "control u2",
            expected: p.m(),
            actual: u.u2.len(),
        });
    }
    Ok(())
}

/// Evaluates the control-affine field at `q`. The field has zero drift:
/// `u = 0` gives zero rates. In accelerated mode the variable rate is the
/// stored velocity and the control steers the velocity instead.
pub fn eval_field(p: &ProblemSpec, q: &LiftedState, u: &ControlVector) -> Result<StateRate> {
    check_control_dims(p, u)?;
    // rate of q1: the control directly, or the velocity in accelerated mode
    let w = match &q.v1 {
        Some(v1) => v1.clone(),
        None => u.u1.clone(),
    };
    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
    let jac = p.constraint_jacobian(&q.q1)?;
    let grad0 = p.cost_gradient(&q.q1)?;
    // dq3 = -[d2L] w - dL/dq1 evaluated at multipliers (u0, u2)
    let mut dq3 = -(&hess * &w) - &grad0 * u.u0;
    if p.m() > 0 {
        dq3 -= jac.transpose() * &u.u2;
    }
    let dq4 = &jac * &w;
    let dq5 = grad0.dot(&w);
    Ok(StateRate {
        dq0: u.u0,
        dq1: w,
        dq2: u.u2.clone(),
        dq3,
        dq4,
        dq5,
        dv1: q.v1.as_ref().map(|_| u.u1.clone()),
    })
}

/// Builds the initial lifted state from guesses of the variable and the
/// multiplier: `q0 = 1` and `(q3, q4, q5)` computed so the hypersurface
/// identities hold exactly.
pub fn init_state(
    p: &ProblemSpec,
    q1_guess: &DVector<f64>,
    q2_guess: &DVector<f64>,
) -> Result<LiftedState> {
    restore_to_surface(p, 1.0, q1_guess.clone(), q2_guess.clone(), None)
}

/// As [`init_state`] with a zero initial velocity, for accelerated runs.
pub fn init_state_accelerated(
    p: &ProblemSpec,
    q1_guess: &DVector<f64>,
    q2_guess: &DVector<f64>,
) -> Result<LiftedState> {
    restore_to_surface(
        p,
        1.0,
        q1_guess.clone(),
        q2_guess.clone(),
        Some(DVector::zeros(p.n())),
    )
}

/// Recomputes `(q3, q4, q5)` from `(q0, q1, q2)`. This is the canonical
/// finisher of every jump; the dependent coordinates are recomputed, never
/// projected.
pub fn restore_to_surface(
    p: &ProblemSpec,
    q0: f64,
    q1: DVector<f64>,
    q2: DVector<f64>,
    v1: Option<DVector<f64>>,
) -> Result<LiftedState> {
    let q3 = -p.lagrangian_grad(q0, &q1, &q2)?;
    let q4 = p.constraints(&q1)?;
    let q5 = p.cost_value(&q1)?;
    if !q3.iter().all(|v| v.is_finite()) || !q4.iter().all(|v| v.is_finite()) || !q5.is_finite() {
        return Err(Error::EvaluatorFailure {
            op: "restore_to_surface",
            at: None,
        });
    }
    Ok(LiftedState {
        q0,
        q1,
        q2,
        q3,
        q4,
        q5,
        v1,
    })
}

/// Worst violation of the three integrals of motion (infinity norms).
pub fn hypersurface_residual(p: &ProblemSpec, q: &LiftedState) -> Result<f64> {
    let r_grad = (&q.q3 + p.lagrangian_grad(q.q0, &q.q1, &q.q2)?).amax();
    let r_cons = if p.m() > 0 {
        (&q.q4 - p.constraints(&q.q1)?).amax()
    } else {
        0.0
    };
    let r_cost = (q.q5 - p.cost_value(&q.q1)?).abs();
    Ok(r_grad.max(r_cons).max(r_cost))
}

/// Assembles the control Jacobian of the `(q0, q2, q3, q4)` subsystem at `q`
/// (standard mode: accelerated states route their `q1` rate through `v1`, not
/// through the control, so `B * u` would not reproduce the field there).
pub fn control_jacobian(p: &ProblemSpec, q: &LiftedState) -> Result<ControlJacobian> {
    let (n, m) = (p.n(), p.m());
    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
    let jac = p.constraint_jacobian(&q.q1)?;
    let grad0 = p.cost_gradient(&q.q1)?;

    let rows = 1 + m + n + m;
    let cols = 1 + n + m;
    let mut b = DMatrix::zeros(rows, cols);
    b[(0, 0)] = 1.0; // dq0 = u0
    for i in 0..m {
        b[(1 + i, 1 + n + i)] = 1.0; // dq2 = u2
    }
    let q3_row = 1 + m;
    for i in 0..n {
        b[(q3_row + i, 0)] = -grad0[i];
        for j in 0..n {
            b[(q3_row + i, 1 + j)] = -hess[(i, j)];
        }
        for j in 0..m {
            b[(q3_row + i, 1 + n + j)] = -jac[(j, i)];
        }
    }
    let q4_row = 1 + m + n;
    for i in 0..m {
        for j in 0..n {
            b[(q4_row + i, 1 + j)] = jac[(i, j)];
        }
    }
    Ok(ControlJacobian { matrix: b })
}

impl ControlJacobian {
    /// Stacks the `(q0, q2, q3, q4)` rows of a state rate for comparison with
    /// `B * u`.
    pub fn stack_rate(rate: &StateRate) -> DVector<f64> {
        let m = rate.dq2.len();
        let n = rate.dq3.len();
        let mut out = DVector::zeros(1 + m + n + m);
        out[0] = rate.dq0;
        out.rows_mut(1, m).copy_from(&rate.dq2);
        out.rows_mut(1 + m, n).copy_from(&rate.dq3);
        out.rows_mut(1 + m + n, m).copy_from(&rate.dq4);
        out
    }

    pub fn stack_control(u: &ControlVector) -> DVector<f64> {
        let n = u.u1.len();
        let m = u.u2.len();
        let mut out = DVector::zeros(1 + n + m);
        out[0] = u.u0;
        out.rows_mut(1, n).copy_from(&u.u1);
        out.rows_mut(1 + n, m).copy_from(&u.u2);
        out
    }
}
