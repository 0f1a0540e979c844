//! Jump sizing: maximal SLF decrement along a fixed direction.
//!
//! Each jump moves `(q0, q1, q2)` by an Euler step of length `h` and then
//! recomputes `(q3, q4, q5)` on the hypersurface; the one-dimensional profile
//! `phi(h)` = SLF after such a jump is minimized. On quadratic problem data
//! with a quadratic SLF the profile is an even-degree polynomial of degree at
//! most four and is minimized in closed form; otherwise a safeguarded search
//! starts from the guess `h0 = S / (-DS)` and backtracks through Hermite
//! interpolation. The accepted step always decreases the SLF strictly; the
//! cost itself is free to climb.

use crate::dynamics::{restore_to_surface, ControlVector, LiftedState};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::slf::{slf_directional_derivative, slf_value, SlfKind, SlfSpec};

/// Knobs for [`solve_jump`]. Defaults match the generator.
#[derive(Clone, Copy, Debug)]
pub struct JumpConfig {
    /// Sufficient-decrease constant in `phi(h) <= S + c1 h DS`.
    pub c1: f64,
    /// Interpolation backtracks before the search gives up.
    pub max_backtracks: usize,
    /// Use the closed-form minimizer on quadratic data.
    pub allow_exact: bool,
    /// Replace sufficient-decrease acceptance with a full one-dimensional
    /// minimization (golden-section refinement). Used by agreement checks.
    pub full_minimize: bool,
}

impl Default for JumpConfig {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            max_backtracks: 30,
            allow_exact: true,
            full_minimize: false,
        }
    }
}

/// How the accepted step was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpMode {
    /// Closed-form polynomial minimization (quadratic problem data).
    ExactQuadratic,
    /// Guess, sufficient decrease, Hermite-interpolated backtracking.
    CubicBacktrack,
}

/// An accepted jump: step length, the restored next state and its SLF value.
#[derive(Clone, Debug)]
pub struct JumpResult {
    pub h: f64,
    pub q_next: LiftedState,
    pub s_next: f64,
    /// Number of SLF evaluations spent.
    pub evals: usize,
    pub mode: JumpMode,
}

/// Initial step guess `S / (-DS)`: the exact minimizer if the SLF were to
/// decay linearly to its global minimum of zero.
pub fn step_guess(s_val: f64, ds_val: f64) -> Result<f64> {
    if ds_val.is_nan() || ds_val >= 0.0 {
        return Err(Error::NoDescent { ds: ds_val });
    }
    Ok(s_val / (-ds_val))
}

/// Advances the state by one jump: Euler step in the free coordinates, then
/// hypersurface restoration. In accelerated mode the velocity is advanced
/// first and the variable moves with the updated velocity.
pub fn apply_map(
    p: &ProblemSpec,
    q: &LiftedState,
    u: &ControlVector,
    h: f64,
) -> Result<LiftedState> {
    let q0 = q.q0 + h * u.u0;
    let q2 = &q.q2 + &u.u2 * h;
    let (q1, v1) = match &q.v1 {
        Some(v1) => {
            let v_next = v1 + &u.u1 * h;
            (&q.q1 + &v_next * h, Some(v_next))
        }
        None => (&q.q1 + &u.u1 * h, None),
    };
    restore_to_surface(p, q0, q1, q2, v1)
}

/// SLF value after a jump of length `h` along `u`.
pub fn phi_along(
    s: &SlfSpec,
    p: &ProblemSpec,
    q: &LiftedState,
    u: &ControlVector,
    h: f64,
) -> Result<f64> {
    let moved = apply_map(p, q, u, h).map_err(|e| match e {
        Error::EvaluatorFailure { op, .. } => Error::EvaluatorFailure { op, at: Some(h) },
        other => other,
    })?;
    let value = slf_value(s, &moved)?;
    if !value.is_finite() {
        return Err(Error::EvaluatorFailure {
            op: "phi_along",
            at: Some(h),
        });
    }
    Ok(value)
}

/// Coefficients of `phi(h)` when the problem data are quadratic: degree two
/// in standard mode, degree four in accelerated mode.
fn phi_polynomial(
    s: &SlfSpec,
    p: &ProblemSpec,
    q: &LiftedState,
    u: &ControlVector,
    s0: f64,
    ds: f64,
) -> Result<Option<[f64; 5]>> {
    if !p.flags().is_quadratic || u.u0 != 0.0 {
        return Ok(None);
    }
    let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2)?;
    match (s.kind, &q.v1) {
        (SlfKind::QuadraticResidual, None) => {
            let jac = p.constraint_jacobian(&q.q1)?;
            // q3(h) = q3 - h r3, q4(h) = q4 + h r4
            let mut r3 = &hess * &u.u1;
            if p.m() > 0 {
                r3 += jac.transpose() * &u.u2;
            }
            let r4 = &jac * &u.u1;
            let c2 = 0.5 * (r3.norm_squared() + r4.norm_squared());
            Ok(Some([s0, ds, c2, 0.0, 0.0]))
        }
        (SlfKind::VelocityAugmented, Some(v1)) => {
            // q3(h) = q3 - h H v1 - h^2 H u1, v(h) = v1 + h u1
            let b = -(&hess * v1);
            let c = -(&hess * &u.u1);
            let a = &q.q3;
            let p0 = 0.5 * (a.norm_squared() + v1.norm_squared());
            let p1 = a.dot(&b) + v1.dot(&u.u1);
            let p2 = 0.5 * b.norm_squared() + a.dot(&c) + 0.5 * u.u1.norm_squared();
            let p3 = b.dot(&c);
            let p4 = 0.5 * c.norm_squared();
            debug_assert!((p0 - s0).abs() <= 1e-9 * (1.0 + s0.abs()));
            debug_assert!((p1 - ds).abs() <= 1e-9 * (1.0 + ds.abs()));
            Ok(Some([p0, p1, p2, p3, p4]))
        }
        _ => Ok(None),
    }
}

fn poly_eval(c: &[f64; 5], h: f64) -> f64 {
    (((c[4] * h + c[3]) * h + c[2]) * h + c[1]) * h + c[0]
}

/// Real roots of `a h^3 + b h^2 + c h + d = 0`, ascending.
fn cubic_real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        // quadratic
        if b.abs() <= 1e-14 * scale {
            if c.abs() <= 1e-14 * scale {
                return Vec::new();
            }
            return vec![-d / c];
        }
        let disc = c * c - 4.0 * b * d;
        if disc < 0.0 {
            return Vec::new();
        }
        let sd = disc.sqrt();
        let mut roots = vec![(-c + sd) / (2.0 * b), (-c - sd) / (2.0 * b)];
        roots.sort_by(f64::total_cmp);
        return roots;
    }
    // depressed cubic t^3 + pt + q with h = t - b/(3a)
    let bn = b / a;
    let cn = c / a;
    let dn = d / a;
    let p = cn - bn * bn / 3.0;
    let q = 2.0 * bn.powi(3) / 27.0 - bn * cn / 3.0 + dn;
    let shift = -bn / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        let sd = disc.sqrt();
        let u = (-q / 2.0 + sd).cbrt();
        let v = (-q / 2.0 - sd).cbrt();
        vec![u + v + shift]
    } else {
        // three real roots, trigonometric form
        let r = (-p / 3.0).max(0.0).sqrt();
        if r == 0.0 {
            vec![shift]
        } else {
            let cos_arg = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0);
            let theta = cos_arg.acos();
            (0..3)
                .map(|k| {
                    2.0 * r * ((theta - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + shift
                })
                .collect()
        }
    };
    // one Newton polish per root
    for root in &mut roots {
        for _ in 0..2 {
            let f = ((a * *root + b) * *root + c) * *root + d;
            let df = (3.0 * a * *root + 2.0 * b) * *root + c;
            if df.abs() > 0.0 {
                *root -= f / df;
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Smallest positive stationary point of the polynomial at which it has
/// decreased from `phi(0)`.
fn minimize_polynomial(c: &[f64; 5]) -> Option<f64> {
    // derivative: 4 c4 h^3 + 3 c3 h^2 + 2 c2 h + c1
    let roots = cubic_real_roots(4.0 * c[4], 3.0 * c[3], 2.0 * c[2], c[1]);
    roots
        .into_iter()
        .filter(|h| *h > 0.0 && h.is_finite())
        .find(|h| poly_eval(c, *h) < c[0])
}

fn sufficient(s0: f64, ds: f64, c1: f64, h: f64, phi: f64) -> bool {
    // the strict part keeps the accepted sequence strictly decreasing even
    // when c1 * h * ds underflows against s0
    phi <= s0 + c1 * h * ds && phi < s0
}

/// Nocedal-Wright interpolation step: quadratic on the first backtrack,
/// Hermite cubic through `(phi(0), DS, phi(h), phi(h_prev))` afterwards.
fn interpolate(s0: f64, ds: f64, h: f64, phi_h: f64, prev: Option<(f64, f64)>) -> f64 {
    let fallback = 0.5 * h;
    let trial = match prev {
        None => {
            let denom = 2.0 * (phi_h - s0 - ds * h);
            if denom <= 0.0 {
                fallback
            } else {
                -ds * h * h / denom
            }
        }
        Some((hp, phip)) => {
            let d1 = phi_h - s0 - ds * h;
            let d2 = phip - s0 - ds * hp;
            let denom = h * h * hp * hp * (h - hp);
            if denom == 0.0 {
                fallback
            } else {
                let a = (hp * hp * d1 - h * h * d2) / denom;
                let b = (-hp.powi(3) * d1 + h.powi(3) * d2) / denom;
                if a == 0.0 {
                    if b == 0.0 {
                        fallback
                    } else {
                        -ds / (2.0 * b)
                    }
                } else {
                    let disc = b * b - 3.0 * a * ds;
                    if disc < 0.0 {
                        fallback
                    } else {
                        (-b + disc.sqrt()) / (3.0 * a)
                    }
                }
            }
        }
    };
    if trial.is_finite() {
        trial.clamp(0.1 * h, 0.5 * h)
    } else {
        fallback
    }
}

/// Golden-section refinement on a bracket around a decreasing start.
fn golden_refine(
    phi: &mut dyn FnMut(f64) -> Option<f64>,
    h_seed: f64,
    phi_seed: f64,
    s0: f64,
    evals: &mut usize,
) -> Option<(f64, f64)> {
    // expand until phi turns up
    let (mut a, mut b) = (0.0f64, h_seed);
    let mut phi_b = phi_seed;
    let mut best = (h_seed, phi_seed);
    for _ in 0..60 {
        let c = b * 2.0;
        *evals += 1;
        match phi(c) {
            Some(v) if v < phi_b => {
                a = b;
                b = c;
                phi_b = v;
                best = (c, v);
            }
            _ => {
                let hi = c;
                // golden section on [a, hi]
                let gr = (5f64.sqrt() - 1.0) / 2.0;
                let (mut lo, mut up) = (a, hi);
                let mut x1 = up - gr * (up - lo);
                let mut x2 = lo + gr * (up - lo);
                *evals += 2;
                let mut f1 = phi(x1)?;
                let mut f2 = phi(x2)?;
                for _ in 0..120 {
                    if up - lo < 1e-12 * (1.0 + up) {
                        break;
                    }
                    if f1 < f2 {
                        up = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = up - gr * (up - lo);
                        *evals += 1;
                        f1 = phi(x1)?;
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + gr * (up - lo);
                        *evals += 1;
                        f2 = phi(x2)?;
                    }
                }
                let (hx, fx) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
                return if fx < s0 && fx < best.1 {
                    Some((hx, fx))
                } else if best.1 < s0 {
                    Some(best)
                } else {
                    None
                };
            }
        }
    }
    Some(best)
}

/// Solves the jump problem: the maximal SLF decrement along `u`, starting
/// from the guess `S / (-DS)`.
pub fn solve_jump(
    s: &SlfSpec,
    p: &ProblemSpec,
    q: &LiftedState,
    u: &ControlVector,
    cfg: &JumpConfig,
) -> Result<JumpResult> {
    let s0 = slf_value(s, q)?;
    let ds = slf_directional_derivative(s, p, q, u)?;
    if ds.is_nan() || ds >= 0.0 {
        return Err(Error::NoDescent { ds });
    }

    let mut evals = 0usize;
    if cfg.allow_exact && !cfg.full_minimize {
        if let Some(coeffs) = phi_polynomial(s, p, q, u, s0, ds)? {
            if let Some(h) = minimize_polynomial(&coeffs) {
                let q_next = apply_map(p, q, u, h)?;
                let s_next = slf_value(s, &q_next)?;
                evals += 1;
                if s_next < s0 {
                    return Ok(JumpResult {
                        h,
                        q_next,
                        s_next,
                        evals,
                        mode: JumpMode::ExactQuadratic,
                    });
                }
            }
            // fall through to the numeric path on any closed-form defect
        }
    }

    let h0 = step_guess(s0, ds)?;
    let mut phi = |h: f64| -> Option<f64> { phi_along(s, p, q, u, h).ok() };
    let mut h = h0;
    evals += 1;
    let mut phi_h = phi(h);

    if let Some(v) = phi_h {
        if sufficient(s0, ds, cfg.c1, h, v) {
            if cfg.full_minimize {
                if let Some((hb, _)) = golden_refine(&mut phi, h, v, s0, &mut evals) {
                    let q_next = apply_map(p, q, u, hb)?;
                    let s_next = slf_value(s, &q_next)?;
                    return Ok(JumpResult {
                        h: hb,
                        q_next,
                        s_next,
                        evals,
                        mode: JumpMode::CubicBacktrack,
                    });
                }
            }
            // forward exploration: the guess may be far short of the
            // maximal decrement. Double while the profile keeps falling and
            // the decrease condition still holds at the larger step.
            let mut best = (h, v);
            let mut doublings = 0usize;
            loop {
                let h_next = best.0 * 2.0;
                evals += 1;
                match phi(h_next) {
                    Some(vn) if vn < best.1 && sufficient(s0, ds, cfg.c1, h_next, vn) => {
                        best = (h_next, vn);
                        doublings += 1;
                        if doublings >= 50 {
                            return Err(Error::LineSearchFailed {
                                evals,
                                h: h_next,
                                unbounded: true,
                            });
                        }
                    }
                    _ => break,
                }
            }
            let q_next = apply_map(p, q, u, best.0)?;
            return Ok(JumpResult {
                h: best.0,
                q_next,
                s_next: best.1,
                evals,
                mode: JumpMode::CubicBacktrack,
            });
        }
    }

    // backtracking with interpolation; a failed evaluation simply halves
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..cfg.max_backtracks {
        let h_new = match phi_h {
            Some(v) => {
                let hn = interpolate(s0, ds, h, v, prev);
                prev = Some((h, v));
                hn
            }
            None => 0.5 * h,
        };
        h = h_new;
        evals += 1;
        phi_h = phi(h);
        if let Some(v) = phi_h {
            if sufficient(s0, ds, cfg.c1, h, v) {
                if cfg.full_minimize {
                    if let Some((hb, _)) = golden_refine(&mut phi, h, v, s0, &mut evals) {
                        let q_next = apply_map(p, q, u, hb)?;
                        let s_next = slf_value(s, &q_next)?;
                        return Ok(JumpResult {
                            h: hb,
                            q_next,
                            s_next,
                            evals,
                            mode: JumpMode::CubicBacktrack,
                        });
                    }
                }
                let q_next = apply_map(p, q, u, h)?;
                return Ok(JumpResult {
                    h,
                    q_next,
                    s_next: v,
                    evals,
                    mode: JumpMode::CubicBacktrack,
                });
            }
        }
    }
    Err(Error::LineSearchFailed {
        evals,
        h,
        unbounded: false,
    })
}
