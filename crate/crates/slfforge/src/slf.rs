//! Search Lyapunov functions, their directional derivatives, and the
//! pointwise minimum principles that produce jump directions.
//!
//! An SLF is a nonnegative merit function that vanishes exactly on the KKT
//! target set. A direction is admissible only if it strictly decreases the
//! SLF; that pointwise certificate is what makes the generated algorithm
//! convergent, so every solver here returns the achieved derivative together
//! with the direction and refuses directions that cannot decrease.
//!
//! Two principles are implemented:
//!
//! * minimum principle over a quadratic control set `u' W u <= delta`, whose
//!   solution is `W u = sigma * K_A * (q3, q4)` with the asymmetric KKT
//!   matrix `K_A`; the named metrics recover Newton/SQP (`W = K_S^2`), the
//!   Arrow-Hurwicz-Uzawa flow (`W = K_A`, sigma = 1) and sign gradient
//!   descent (Hessian metric with the l1 SLF);
//! * rate-constrained principle: the minimum-norm control satisfying a
//!   prescribed decrease rate `DS <= -R(S)`, used by the accelerated variant.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{eval_field, ControlVector, LiftedState};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

/// Which merit function to dissipate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlfKind {
    /// `S = 0.5 <q3, q3> + 0.5 <q4, q4>`.
    QuadraticResidual,
    /// `S = ||q3||_1`; unconstrained problems only.
    L1Gradient,
    /// `S = 0.5 <q3, q3> + 0.5 <v1, v1>`; accelerated mode, unconstrained
    /// problems only.
    VelocityAugmented,
}

/// Designer choice of merit function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlfSpec {
    pub kind: SlfKind,
}

impl SlfSpec {
    pub fn quadratic_residual() -> Self {
        Self {
            kind: SlfKind::QuadraticResidual,
        }
    }
    pub fn l1_gradient() -> Self {
        Self {
            kind: SlfKind::L1Gradient,
        }
    }
    pub fn velocity_augmented() -> Self {
        Self {
            kind: SlfKind::VelocityAugmented,
        }
    }
}

/// Metric recipes for the quadratic control set.
#[derive(Clone, Debug)]
pub enum MetricRecipe {
    /// `W = I`: steepest descent on the SLF.
    Identity,
    /// `W = K_S^2`, the squared symmetric KKT matrix: Newton/SQP directions.
    Sqp,
    /// `W = K_A` taken as a pseudometric: the Arrow-Hurwicz-Uzawa ansatz
    /// `u = (q3, q4)` at sigma = 1.
    Ahu,
    /// `W = d2g0`: with the l1 SLF this is sign gradient descent.
    Hessian,
    /// An explicit symmetric positive definite matrix of size (n+m).
    Explicit(DMatrix<f64>),
}

impl MetricRecipe {
    fn tag(&self) -> &'static str {
        match self {
            MetricRecipe::Identity => "identity",
            MetricRecipe::Sqp => "sqp",
            MetricRecipe::Ahu => "ahu",
            MetricRecipe::Hessian => "hessian",
            MetricRecipe::Explicit(_) => "explicit",
        }
    }
}

/// Required decrease rate for the rate-constrained principle.
#[derive(Clone, Copy, Debug)]
pub enum RateSpec {
    /// `R = gain * S`.
    Linear { gain: f64 },
    /// `R = gain * S^exponent` with exponent in (0, 1); enforces decrease
    /// that does not stall as S shrinks.
    BhatBernstein { gain: f64, exponent: f64 },
}

impl RateSpec {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            RateSpec::Linear { gain } => gain * s,
            RateSpec::BhatBernstein { gain, exponent } => gain * s.powf(*exponent),
        }
    }
}

/// Designer choice of control set.
#[derive(Clone, Debug)]
pub enum ControlSetSpec {
    /// `{u : u' W u <= delta}`. With `delta = None` the multiplier sigma is
    /// set to 1 and absorbed downstream by the jump length; with
    /// `delta = Some(d)` the direction is normalized to the set boundary.
    QuadraticMetric {
        metric: MetricRecipe,
        delta: Option<f64>,
    },
    /// Minimum-norm control subject to `DS <= -R(S)`.
    RateConstrained { rate: RateSpec },
}

/// A jump direction together with its descent certificate.
#[derive(Clone, Debug)]
pub struct DirectionResult {
    pub u: ControlVector,
    /// SLF directional derivative at (q, u); strictly negative.
    pub ds: f64,
    /// Multiplier of the control constraint, when the quadratic principle
    /// produced one.
    pub sigma: Option<f64>,
    pub diagnostics: DirectionDiagnostics,
}

#[derive(Clone, Debug, Default)]
pub struct DirectionDiagnostics {
    pub metric_condition: Option<f64>,
    pub recipe: &'static str,
}

fn require_unconstrained(kind: SlfKind, m: usize) -> Result<()> {
    if m != 0 {
        return Err(Error::IncompatibleSlf(format!(
            "{kind:?} requires an unconstrained problem, got m = {m}"
        )));
    }
    Ok(())
}

/// Value of the SLF at a state.
pub fn slf_value(s: &SlfSpec, q: &LiftedState) -> Result<f64> {
    match s.kind {
        SlfKind::QuadraticResidual => Ok(0.5 * q.q3.norm_squared() + 0.5 * q.q4.norm_squared()),
        SlfKind::L1Gradient => {
            require_unconstrained(s.kind, q.q2.len())?;
            Ok(q.q3.iter().map(|v| v.abs()).sum())
        }
        SlfKind::VelocityAugmented => {
            require_unconstrained(s.kind, q.q2.len())?;
            let v1 = q.v1.as_ref().ok_or_else(|| {
                Error::IncompatibleSlf("velocity-augmented SLF needs a velocity state".into())
            })?;
            Ok(0.5 * q.q3.norm_squared() + 0.5 * v1.norm_squared())
        }
    }
}

/// Directional derivative of the SLF along the field at (q, u).
///
/// Smooth kinds pair the SLF gradient with the state rate. The l1 kind uses
/// the one-sided value: on coordinates where `q3_i = 0` the subgradient
/// element minimizing the pairing is chosen, contributing `-|dq3_i|`.
pub fn slf_directional_derivative(
    s: &SlfSpec,
    p: &ProblemSpec,
    q: &LiftedState,
    u: &ControlVector,
) -> Result<f64> {
    let rate = eval_field(p, q, u)?;
    match s.kind {
        SlfKind::QuadraticResidual => Ok(q.q3.dot(&rate.dq3) + q.q4.dot(&rate.dq4)),
        SlfKind::L1Gradient => {
            require_unconstrained(s.kind, q.q2.len())?;
            let mut ds = 0.0;
            for i in 0..q.q3.len() {
                if q.q3[i] > 0.0 {
                    ds += rate.dq3[i];
                } else if q.q3[i] < 0.0 {
                    ds -= rate.dq3[i];
                } else {
                    ds -= rate.dq3[i].abs();
                }
            }
            Ok(ds)
        }
        SlfKind::VelocityAugmented => {
            require_unconstrained(s.kind, q.q2.len())?;
            let v1 = q.v1.as_ref().ok_or_else(|| {
                Error::IncompatibleSlf("velocity-augmented SLF needs a velocity state".into())
            })?;
            let dv1 = rate.dv1.as_ref().ok_or_else(|| {
                Error::IncompatibleSlf("velocity-augmented SLF needs a velocity rate".into())
            })?;
            Ok(q.q3.dot(&rate.dq3) + v1.dot(dv1))
        }
    }
}

/// Assembles the saddle-point (KKT) matrix at `q`: the asymmetric form
/// `[[d2L, -J'], [J, 0]]`, or the symmetric form `[[d2L, J'], [J, 0]]`.
/// For `m = 0` both reduce to the Lagrangian Hessian.
pub fn assemble_kkt(p: &ProblemSpec, q: &LiftedState, symmetric: bool) -> Result<DMatrix<f64>> {
    let (n, m) = (p.n(), p.m());
    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
    let jac = p.constraint_jacobian(&q.q1)?;
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&hess);
    if m > 0 {
        let sign = if symmetric { 1.0 } else { -1.0 };
        k.view_mut((0, n), (n, m))
            .copy_from(&(jac.transpose() * sign));
        k.view_mut((n, 0), (m, n)).copy_from(&jac);
    }
    Ok(k)
}

fn stack_q3_q4(q: &LiftedState) -> DVector<f64> {
    let n = q.q3.len();
    let m = q.q4.len();
    let mut out = DVector::zeros(n + m);
    out.rows_mut(0, n).copy_from(&q.q3);
    out.rows_mut(n, m).copy_from(&q.q4);
    out
}

fn split_control(p: &ProblemSpec, d: DVector<f64>) -> ControlVector {
    let n = p.n();
    let m = p.m();
    ControlVector::from_parts(
        DVector::from_iterator(n, d.iter().take(n).copied()),
        DVector::from_iterator(m, d.iter().skip(n).take(m).copied()),
    )
}

fn condition_estimate(w: &DMatrix<f64>) -> Option<f64> {
    let sv = w.clone().svd(false, false).singular_values;
    let (mut hi, mut lo) = (0.0f64, f64::INFINITY);
    for v in sv.iter() {
        hi = hi.max(*v);
        lo = lo.min(*v);
    }
    if lo > 0.0 {
        Some(hi / lo)
    } else {
        None
    }
}

fn solve_checked(w: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let sol = w.clone().lu().solve(rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let resid = (w * &sol - rhs).amax();
    if resid > 1e-8 * (1.0 + rhs.amax()) {
        return None;
    }
    Some(sol)
}

/// Solves the minimum principle over the quadratic control set, returning the
/// direction and its descent certificate.
///
/// The raw direction solves `W d = K_A (q3, q4)`. With `delta = None` the
/// constraint multiplier is fixed at 1 (it is absorbed by the jump length);
/// with `delta = Some(d)` the direction is scaled onto the set boundary
/// `<u, W u> = delta`.
pub fn solve_direction_quadratic(
    s: &SlfSpec,
    c: &ControlSetSpec,
    p: &ProblemSpec,
    q: &LiftedState,
) -> Result<DirectionResult> {
    let ControlSetSpec::QuadraticMetric { metric, delta } = c else {
        return Err(Error::IncompatibleSlf(
            "solve_direction_quadratic needs a quadratic-metric control set".into(),
        ));
    };
    let (n, m) = (p.n(), p.m());
    let mut metric_condition = None;

    // raw direction at sigma = 1
    let raw: DVector<f64> = match (metric, s.kind) {
        (MetricRecipe::Ahu, SlfKind::QuadraticResidual) => stack_q3_q4(q),
        (MetricRecipe::Identity, SlfKind::QuadraticResidual) => {
            let ka = assemble_kkt(p, q, false)?;
            &ka * stack_q3_q4(q)
        }
        (MetricRecipe::Explicit(w), SlfKind::QuadraticResidual) => {
            if w.nrows() != n + m || w.ncols() != n + m {
                return Err(Error::DimensionMismatch {
                    context: "explicit metric",
                    expected: n + m,
                    actual: w.nrows(),
                });
            }
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(Error::InvalidProblem(
                    "explicit metric must be symmetric".into(),
                ));
            }
            let rhs = assemble_kkt(p, q, false)? * stack_q3_q4(q);
            metric_condition = condition_estimate(w);
            solve_checked(w, &rhs).ok_or(Error::SingularMetric {
                cond: metric_condition,
            })?
        }
        (MetricRecipe::Sqp, SlfKind::QuadraticResidual) => {
            let ks = assemble_kkt(p, q, true)?;
            let rhs = assemble_kkt(p, q, false)? * stack_q3_q4(q);
            let w = &ks * &ks;
            match solve_checked(&w, &rhs) {
                Some(d) => {
                    metric_condition = condition_estimate(&w);
                    d
                }
                None => {
                    // regularize the Hessian block once before giving up
                    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
                    let tau = 1e-8 * (1.0 + hess.amax());
                    let mut ks_reg = ks;
                    for i in 0..n {
                        ks_reg[(i, i)] += tau;
                    }
                    let w_reg = &ks_reg * &ks_reg;
                    metric_condition = condition_estimate(&w_reg);
                    solve_checked(&w_reg, &rhs).ok_or(Error::SingularMetric {
                        cond: metric_condition,
                    })?
                }
            }
        }
        (MetricRecipe::Hessian, SlfKind::L1Gradient) => {
            // sign-gradient closed form: u = sign(q3), zero at kinks
            require_unconstrained(s.kind, m)?;
            DVector::from_iterator(
                n,
                q.q3.iter().map(|v| {
                    if *v > 0.0 {
                        1.0
                    } else if *v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }),
            )
        }
        (MetricRecipe::Hessian, SlfKind::QuadraticResidual) => {
            require_unconstrained(s.kind, m)?;
            let w = p.cost_hessian(&q.q1)? * q.q0;
            let rhs = assemble_kkt(p, q, false)? * stack_q3_q4(q);
            metric_condition = condition_estimate(&w);
            solve_checked(&w, &rhs).ok_or(Error::SingularMetric {
                cond: metric_condition,
            })?
        }
        (metric, kind) => {
            return Err(Error::IncompatibleSlf(format!(
                "metric {:?} is not defined for SLF kind {kind:?}",
                metric.tag()
            )))
        }
    };

    let (direction, sigma) = match delta {
        None => (raw, 1.0),
        Some(delta) => {
            if matches!(metric, MetricRecipe::Ahu) {
                return Err(Error::IncompatibleSlf(
                    "the AHU pseudometric has no boundary normalization; use delta = None".into(),
                ));
            }
            let wd = match metric {
                MetricRecipe::Identity => raw.clone(),
                MetricRecipe::Explicit(w) => w * &raw,
                MetricRecipe::Sqp => {
                    let ks = assemble_kkt(p, q, true)?;
                    &ks * (&ks * &raw)
                }
                MetricRecipe::Hessian => (p.cost_hessian(&q.q1)? * q.q0) * &raw,
                MetricRecipe::Ahu => unreachable!(),
            };
            let norm_sq = raw.dot(&wd);
            if norm_sq <= 0.0 {
                return Err(Error::SingularMetric {
                    cond: metric_condition,
                });
            }
            let scale = (delta / norm_sq).sqrt();
            (raw * scale, scale)
        }
    };

    let u = split_control(p, direction);
    let ds = slf_directional_derivative(s, p, q, &u)?;
    if ds.is_nan() || ds >= 0.0 {
        return Err(Error::NoDescent { ds });
    }
    Ok(DirectionResult {
        u,
        ds,
        sigma: Some(sigma),
        diagnostics: DirectionDiagnostics {
            metric_condition,
            recipe: metric.tag(),
        },
    })
}

/// Solves the rate-constrained principle: the minimum-norm control `u`
/// satisfying `DS(q, u) <= -R(S)`.
///
/// `DS` is affine in `u`, `DS = d + <c_vec, u>`; the offset `d` is nonzero
/// only in accelerated mode. Returns `u = 0` when the offset already meets
/// the rate, and fails with a guidability error when `c_vec = 0` while the
/// rate is not met.
pub fn solve_direction_rate_constrained(
    s: &SlfSpec,
    c: &ControlSetSpec,
    p: &ProblemSpec,
    q: &LiftedState,
) -> Result<DirectionResult> {
    let ControlSetSpec::RateConstrained { rate } = c else {
        return Err(Error::IncompatibleSlf(
            "solve_direction_rate_constrained needs a rate-constrained control set".into(),
        ));
    };
    let (n, m) = (p.n(), p.m());
    // DS(u) = d + <c_vec, u> over the stacked (u1, u2) coordinates
    let (c_vec, d) = match s.kind {
        SlfKind::QuadraticResidual => {
            if q.v1.is_some() {
                return Err(Error::IncompatibleSlf(
                    "rate-constrained quadratic SLF runs in standard mode; velocity present".into(),
                ));
            }
            let c_vec = -(assemble_kkt(p, q, false)? * stack_q3_q4(q));
            (c_vec, 0.0)
        }
        SlfKind::VelocityAugmented => {
            require_unconstrained(s.kind, m)?;
            let v1 = q.v1.as_ref().ok_or_else(|| {
                Error::IncompatibleSlf("velocity-augmented SLF needs a velocity state".into())
            })?;
            let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
            let d = -q.q3.dot(&(&hess * v1));
            (v1.clone(), d)
        }
        SlfKind::L1Gradient => {
            return Err(Error::IncompatibleSlf(
                "the rate-constrained principle is defined for smooth SLFs".into(),
            ))
        }
    };

    let s_val = slf_value(s, q)?;
    let r = rate.value(s_val);
    let bound = -r - d;
    let (direction, ds) = if bound >= 0.0 {
        (DVector::zeros(c_vec.len()), d)
    } else {
        let norm_sq = c_vec.norm_squared();
        if norm_sq == 0.0 {
            return Err(Error::GuidabilityFailure);
        }
        let dir = &c_vec * (bound / norm_sq);
        (dir, -r)
    };

    let u = if s.kind == SlfKind::VelocityAugmented {
        ControlVector::from_parts(direction, DVector::zeros(m))
    } else {
        split_control(p, direction)
    };
    debug_assert_eq!(u.u1.len(), n);
    if ds.is_nan() || ds >= 0.0 {
        return Err(Error::NoDescent { ds });
    }
    Ok(DirectionResult {
        u,
        ds,
        sigma: None,
        diagnostics: DirectionDiagnostics {
            metric_condition: None,
            recipe: "rate_constrained",
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_problem;
    use crate::dynamics::{init_state, init_state_accelerated};
    use nalgebra::dvector;

    fn p2_init() -> (ProblemSpec, LiftedState) {
        let p = load_problem("eqqp2").unwrap();
        let q = init_state(&p, &dvector![0.0, 0.0], &dvector![0.0]).unwrap();
        (p, q)
    }

    #[test]
    fn slf_values() {
        let (_, q) = p2_init();
        let s = SlfSpec::quadratic_residual();
        assert_eq!(slf_value(&s, &q).unwrap(), 0.5);

        let p = load_problem("eqqp2").unwrap();
        let at_kkt = init_state(&p, &dvector![0.5, 0.5], &dvector![-0.5]).unwrap();
        assert!(slf_value(&s, &at_kkt).unwrap() < 1e-30);

        let p1 = load_problem("quad1d").unwrap();
        let q1 = init_state(&p1, &dvector![3.0], &dvector![]).unwrap();
        assert_eq!(slf_value(&SlfSpec::l1_gradient(), &q1).unwrap(), 3.0);
    }

    #[test]
    fn l1_rejects_constrained_problems() {
        let (_, q) = p2_init();
        assert!(matches!(
            slf_value(&SlfSpec::l1_gradient(), &q),
            Err(Error::IncompatibleSlf(_))
        ));
    }

    #[test]
    fn directional_derivative_hand_value() {
        let (p, q) = p2_init();
        let s = SlfSpec::quadratic_residual();
        let u = ControlVector::from_parts(dvector![1.0, 1.0], dvector![0.0]);
        assert_eq!(slf_directional_derivative(&s, &p, &q, &u).unwrap(), -2.0);
        let zero = ControlVector::zeros(2, 1);
        assert_eq!(slf_directional_derivative(&s, &p, &q, &zero).unwrap(), 0.0);
    }

    #[test]
    fn directional_derivative_matches_finite_difference() {
        let p = load_problem("circqp").unwrap();
        let q = init_state(&p, &dvector![0.8, -0.3], &dvector![0.4]).unwrap();
        let s = SlfSpec::quadratic_residual();
        let u = ControlVector::from_parts(dvector![0.6, -1.1], dvector![0.9]);
        let ds = slf_directional_derivative(&s, &p, &q, &u).unwrap();

        let delta = 1e-8;
        let rate = eval_field(&p, &q, &u).unwrap();
        let mut moved = q.clone();
        moved.q3 += &rate.dq3 * delta;
        moved.q4 += &rate.dq4 * delta;
        let fd = (slf_value(&s, &moved).unwrap() - slf_value(&s, &q).unwrap()) / delta;
        assert!((ds - fd).abs() <= 1e-6, "ds = {ds}, fd = {fd}");
    }

    #[test]
    fn l1_derivative_uses_minimizing_subgradient_at_kinks() {
        // a 2-D separable quadratic state with one zero gradient coordinate
        let p = ProblemSpec::quadratic(
            "sep2",
            DMatrix::from_diagonal(&dvector![1.0, 2.0]),
            dvector![0.0, 0.0],
            DMatrix::zeros(0, 2),
            dvector![],
            dvector![],
            dvector![],
        )
        .unwrap();
        let q = init_state(&p, &dvector![0.0, 1.5], &dvector![]).unwrap();
        assert_eq!(q.q3[0], 0.0);
        let s = SlfSpec::l1_gradient();
        // rates: dq3 = -H u1 = (-1, -2) under u1 = (1, 1); the kink
        // coordinate contributes -|dq3_0|, the smooth one sign(q3_1) dq3_1
        let u = ControlVector::from_parts(dvector![1.0, 1.0], dvector![]);
        let ds = slf_directional_derivative(&s, &p, &q, &u).unwrap();
        assert_eq!(ds, -1.0 + (-1.0) * (-2.0)); // = 1.0
        let u = ControlVector::from_parts(dvector![1.0, 0.0], dvector![]);
        let ds = slf_directional_derivative(&s, &p, &q, &u).unwrap();
        assert_eq!(ds, -1.0);
    }

    #[test]
    fn explicit_metric_solves_and_validates() {
        let (p, q) = p2_init();
        let s = SlfSpec::quadratic_residual();
        let w = DMatrix::from_diagonal(&dvector![2.0, 2.0, 4.0]);
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Explicit(w),
            delta: None,
        };
        let r = solve_direction_quadratic(&s, &c, &p, &q).unwrap();
        // W u = K_A (q3, q4) = ((1,1), 0)
        assert_eq!(r.u.u1, dvector![0.5, 0.5]);
        assert_eq!(r.u.u2, dvector![0.0]);

        let asym = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Explicit(asym),
            delta: None,
        };
        assert!(solve_direction_quadratic(&s, &c, &p, &q).is_err());
    }

    #[test]
    fn rank_deficient_jacobian_reports_singular_metric() {
        // a zero constraint row keeps K_S singular even after the Hessian
        // regularization retry
        let p = ProblemSpec::quadratic(
            "degenerate",
            DMatrix::identity(2, 2),
            dvector![1.0, 0.0],
            DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
            dvector![1.0],
            dvector![0.0],
            dvector![0.0],
        )
        .unwrap();
        let q = init_state(&p, &dvector![1.0, 1.0], &dvector![0.5]).unwrap();
        let s = SlfSpec::quadratic_residual();
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Sqp,
            delta: None,
        };
        assert!(matches!(
            solve_direction_quadratic(&s, &c, &p, &q),
            Err(Error::SingularMetric { .. })
        ));
    }

    #[test]
    fn kkt_assembly_hand_values() {
        let p3 = load_problem("lp1").unwrap();
        let q = init_state(&p3, &dvector![0.0], &dvector![0.0]).unwrap();
        let ka = assemble_kkt(&p3, &q, false).unwrap();
        assert_eq!(ka, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));

        let (p2, q2) = p2_init();
        let ks = assemble_kkt(&p2, &q2, true).unwrap();
        assert_eq!(
            ks,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0])
        );
        assert_eq!(ks, ks.transpose());

        let p1 = load_problem("quad1d").unwrap();
        let q1 = init_state(&p1, &dvector![2.0], &dvector![]).unwrap();
        let h = p1.lagrangian_hess(1.0, &q1.q1, &q1.q2).unwrap();
        assert_eq!(assemble_kkt(&p1, &q1, false).unwrap(), h);
        assert_eq!(assemble_kkt(&p1, &q1, true).unwrap(), h);
    }

    #[test]
    fn identity_metric_direction_is_hand_value() {
        let (p, q) = p2_init();
        let s = SlfSpec::quadratic_residual();
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Identity,
            delta: None,
        };
        let r = solve_direction_quadratic(&s, &c, &p, &q).unwrap();
        assert_eq!(r.u.u1, dvector![1.0, 1.0]);
        assert_eq!(r.u.u2, dvector![0.0]);
        assert_eq!(r.ds, -2.0);
        assert_eq!(r.sigma, Some(1.0));
    }

    #[test]
    fn sqp_direction_is_newton_step() {
        let (p, q) = p2_init();
        let s = SlfSpec::quadratic_residual();
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Sqp,
            delta: None,
        };
        let r = solve_direction_quadratic(&s, &c, &p, &q).unwrap();
        assert!((r.u.u1[0] - 0.5).abs() < 1e-12);
        assert!((r.u.u1[1] - 0.5).abs() < 1e-12);
        assert!((r.u.u2[0] + 0.5).abs() < 1e-12);
        assert!(r.ds < 0.0);
    }

    #[test]
    fn sign_gradient_direction() {
        let p1 = load_problem("quad1d").unwrap();
        let q = init_state(&p1, &dvector![3.0], &dvector![]).unwrap();
        let s = SlfSpec::l1_gradient();
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Hessian,
            delta: None,
        };
        let r = solve_direction_quadratic(&s, &c, &p1, &q).unwrap();
        // gradient of the cost is +3, so the step moves in -sign direction
        assert_eq!(r.u.u1, dvector![-1.0]);
        assert!(r.ds < 0.0);
    }

    #[test]
    fn boundary_normalization_scales_with_sqrt_delta() {
        let (p, q) = p2_init();
        let s = SlfSpec::quadratic_residual();
        let dir = |delta: Option<f64>| {
            solve_direction_quadratic(
                &s,
                &ControlSetSpec::QuadraticMetric {
                    metric: MetricRecipe::Identity,
                    delta,
                },
                &p,
                &q,
            )
            .unwrap()
        };
        let r1 = dir(Some(1.0));
        let r2 = dir(Some(2.0));
        let ratio = r2.u.u1[0] / r1.u.u1[0];
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
        // normalized direction unchanged
        let n1 = &r1.u.u1 / r1.u.u1.norm();
        let n2 = &r2.u.u1 / r2.u.u1.norm();
        assert!((n1 - n2).amax() < 1e-14);
        // boundary: |u|^2 = delta for the identity metric
        let norm_sq = r1.u.u1.norm_squared() + r1.u.u2.norm_squared();
        assert!((norm_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ahu_direction_is_raw_residual() {
        let p = load_problem("eqqp2").unwrap();
        let q = init_state(&p, &dvector![0.3, 0.1], &dvector![0.2]).unwrap();
        let s = SlfSpec::quadratic_residual();
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Ahu,
            delta: None,
        };
        let r = solve_direction_quadratic(&s, &c, &p, &q).unwrap();
        assert_eq!(r.u.u1, q.q3);
        assert_eq!(r.u.u2, q.q4);
    }

    #[test]
    fn ahu_fails_on_lp_with_no_descent() {
        let p = load_problem("lp1").unwrap();
        let q = init_state(&p, &dvector![0.0], &dvector![0.0]).unwrap();
        let s = SlfSpec::quadratic_residual();
        let c = ControlSetSpec::QuadraticMetric {
            metric: MetricRecipe::Ahu,
            delta: None,
        };
        match solve_direction_quadratic(&s, &c, &p, &q) {
            Err(Error::NoDescent { ds }) => assert_eq!(ds, 0.0),
            other => panic!("expected NoDescent, got {other:?}"),
        }
    }

    #[test]
    fn rate_constrained_hand_values() {
        let p1 = load_problem("quad1d").unwrap();
        let q = init_state(&p1, &dvector![2.0], &dvector![]).unwrap();
        let s = SlfSpec::quadratic_residual();
        let c = ControlSetSpec::RateConstrained {
            rate: RateSpec::Linear { gain: 1.0 },
        };
        let r = solve_direction_rate_constrained(&s, &c, &p1, &q).unwrap();
        assert!((r.u.u1[0] + 1.0).abs() < 1e-15);
        assert!((r.ds + 2.0).abs() < 1e-15);
    }

    #[test]
    fn rate_constrained_coasts_when_rate_already_met() {
        let p1 = load_problem("quad1d").unwrap();
        let mut q = init_state_accelerated(&p1, &dvector![2.0], &dvector![]).unwrap();
        // large inward velocity: the offset d = -<q3, H v1> already beats the rate
        q.v1 = Some(dvector![-10.0]);
        let s = SlfSpec::velocity_augmented();
        let c = ControlSetSpec::RateConstrained {
            rate: RateSpec::Linear { gain: 0.01 },
        };
        let r = solve_direction_rate_constrained(&s, &c, &p1, &q).unwrap();
        assert_eq!(r.u.u1, dvector![0.0]);
        assert!(r.ds < 0.0);
    }

    #[test]
    fn rate_constrained_accel_hand_value() {
        let p1 = load_problem("quad1d").unwrap();
        let mut q = init_state_accelerated(&p1, &dvector![2.0], &dvector![]).unwrap();
        q.v1 = Some(dvector![-1.0]);
        let s = SlfSpec::velocity_augmented();
        let c = ControlSetSpec::RateConstrained {
            rate: RateSpec::Linear { gain: 1.0 },
        };
        // S = 2.5, d = -2, bound = -0.5, u1 = 0.5
        let r = solve_direction_rate_constrained(&s, &c, &p1, &q).unwrap();
        assert!((r.u.u1[0] - 0.5).abs() < 1e-15);
        assert!((r.ds + 2.5).abs() < 1e-15);
    }

    #[test]
    fn rate_constrained_guidability_failure() {
        let p1 = load_problem("quad1d").unwrap();
        let q = init_state_accelerated(&p1, &dvector![2.0], &dvector![]).unwrap();
        let s = SlfSpec::velocity_augmented();
        let c = ControlSetSpec::RateConstrained {
            rate: RateSpec::Linear { gain: 1.0 },
        };
        assert!(matches!(
            solve_direction_rate_constrained(&s, &c, &p1, &q),
            Err(Error::GuidabilityFailure)
        ));
    }
}
