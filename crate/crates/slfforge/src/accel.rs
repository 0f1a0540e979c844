//! The second-order lift: the variable moves with a velocity and the control
//! steers the acceleration, so a bounded control produces momentum-style
//! iterates. Termination requires the velocity to vanish along with the
//! residual.
//!
//! The direction problem is the rate-constrained minimum-norm principle on
//! the velocity-augmented SLF `S = 0.5<q3,q3> + 0.5<v1,v1>`, whose derivative
//! splits as `DS = d + <v1, u1>` with `d = -<q3, d2g0 v1>`. When the velocity
//! is (numerically) zero while the gradient is not, no control can enforce
//! the rate: the run applies a velocity kick, a single rate-constrained step
//! that treats the velocity itself as the control, accepted only if it
//! strictly decreases the augmented SLF.

use nalgebra::DVector;

use crate::dynamics::{ControlVector, LiftedState};
use crate::error::{Error, Result};
use crate::generator::{run, GeneratorConfig, Recipe, Trace};
use crate::jump::{solve_jump, JumpConfig, JumpResult};
use crate::problem::ProblemSpec;
use crate::slf::{
    slf_value, solve_direction_rate_constrained, ControlSetSpec, DirectionResult, RateSpec, SlfSpec,
};

/// Minimum-norm acceleration enforcing the prescribed SLF decrease rate.
///
/// A velocity at or below `v_tol` (the run tolerance) cannot steer descent;
/// that case reports a guidability failure so the caller can apply the kick.
pub fn accel_direction(
    p: &ProblemSpec,
    q: &LiftedState,
    rate: &RateSpec,
    v_tol: f64,
) -> Result<DirectionResult> {
    let v1 = q.v1.as_ref().ok_or_else(|| {
        Error::IncompatibleSlf("accelerated direction needs a velocity state".into())
    })?;
    let spec = SlfSpec::velocity_augmented();
    let control = ControlSetSpec::RateConstrained { rate: *rate };
    let result = solve_direction_rate_constrained(&spec, &control, p, q);
    match result {
        Ok(d) if d.u.u1.amax() == 0.0 => Ok(d), // coasting: the rate is already met
        Ok(d) => {
            if v1.amax() <= v_tol {
                Err(Error::GuidabilityFailure)
            } else {
                Ok(d)
            }
        }
        other => other,
    }
}

/// The velocity kick: a rate-constrained solve for the velocity itself on
/// the gradient subsystem `dq3 = -d2g0 v`.
pub fn velocity_kick(p: &ProblemSpec, q: &LiftedState, rate: &RateSpec) -> Result<DVector<f64>> {
    let spec = SlfSpec::velocity_augmented();
    let s_pre = slf_value(&spec, q)?;
    let r = rate.value(s_pre);
    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
    let c = -(&hess * &q.q3);
    let norm_sq = c.norm_squared();
    if norm_sq == 0.0 || r <= 0.0 {
        return Err(Error::GuidabilityFailure);
    }
    Ok(&c * (-r / norm_sq))
}

/// Applies the kick and performs its jump: the velocity is replaced by the
/// kick value, the control is zero, and the jump is accepted only when the
/// augmented SLF strictly decreases past its pre-kick value.
///
/// The rate-sized kick can be too fast where the gradient subsystem is
/// ill-conditioned: the injected `0.5 |v|^2` then exceeds any decrease the
/// coast can recover. The jump length absorbs the kick magnitude, so the
/// kick is retried at geometrically smaller scales (a relaxed rate gain)
/// before guidability failure is declared.
pub fn kick_step(
    p: &ProblemSpec,
    q: &LiftedState,
    rate: &RateSpec,
    jump_cfg: &JumpConfig,
) -> Result<(JumpResult, f64)> {
    let spec = SlfSpec::velocity_augmented();
    let s_pre = slf_value(&spec, q)?;
    let v_kick = velocity_kick(p, q, rate)?;
    // the jump coasts on the kicked velocity; minimize the profile fully so
    // the velocity injection can be paid back within the same step
    let cfg = JumpConfig {
        full_minimize: !p.flags().is_quadratic,
        ..*jump_cfg
    };
    let zero = ControlVector::zeros(p.n(), p.m());
    for scale_pow in 0..14 {
        let mut kicked = q.clone();
        kicked.v1 = Some(&v_kick * 0.25f64.powi(scale_pow));
        let jump = match solve_jump(&spec, p, &kicked, &zero, &cfg) {
            Ok(j) => j,
            Err(_) => continue,
        };
        if jump.s_next < s_pre {
            let ds = -rate.value(s_pre) * 0.25f64.powi(scale_pow);
            return Ok((jump, ds));
        }
    }
    Err(Error::GuidabilityFailure)
}

/// Convenience wrapper: the generator loop under the accelerated recipe.
pub fn accel_run(p: &ProblemSpec, cfg: &GeneratorConfig, q1_guess: &DVector<f64>) -> Result<Trace> {
    if !matches!(
        cfg.recipe,
        Recipe::Accelerated
            | Recipe::Custom {
                accelerated: true,
                ..
            }
    ) {
        return Err(Error::IncompatibleRecipe(
            "accel_run needs an accelerated recipe".into(),
        ));
    }
    run(p, cfg, q1_guess, &DVector::zeros(p.m()))
}
