//! The algorithm generator: configuration, the iterate-until-target loop,
//! stopping, trace recording and recipe comparison.
//!
//! One iteration is: stop if the SLF is within tolerance, otherwise solve
//! the direction problem, solve the jump problem along that direction, and
//! advance through the iterative map. Direction or jump failures end the run
//! with a describing outcome; they are never raised past the trace.

use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use crate::accel;
use crate::dynamics::{init_state, init_state_accelerated, ControlVector, LiftedState};
use crate::error::{Error, Result};
use crate::jump::{solve_jump, JumpConfig, JumpResult};
use crate::problem::{ProblemSpec, TargetResidual};
use crate::slf::{
    slf_value, solve_direction_quadratic, solve_direction_rate_constrained, ControlSetSpec,
    DirectionResult, MetricRecipe, RateSpec, SlfKind, SlfSpec,
};

/// Named algorithm recipes: each is an (SLF, control set) pair.
#[derive(Clone, Debug)]
pub enum Recipe {
    /// Quadratic SLF, identity metric: steepest descent on the SLF.
    Gradient,
    /// Quadratic SLF, squared-KKT metric: Newton/SQP directions.
    Sqp,
    /// Quadratic SLF, KKT pseudometric at sigma = 1: the Arrow-Hurwicz-Uzawa
    /// ansatz. A demonstrator; its descent certificate can fail.
    Ahu,
    /// l1 SLF, Hessian metric: sign gradient descent (unconstrained only).
    SignGradient,
    /// Velocity-augmented SLF with a rate-constrained minimum-norm control
    /// (unconstrained only).
    Accelerated,
    /// Any explicit pairing.
    Custom {
        slf: SlfSpec,
        control: ControlSetSpec,
        accelerated: bool,
    },
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Gradient => "gradient",
            Recipe::Sqp => "sqp",
            Recipe::Ahu => "ahu",
            Recipe::SignGradient => "sign_gradient",
            Recipe::Accelerated => "accelerated",
            Recipe::Custom { .. } => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Recipe> {
        match name {
            "gradient" => Some(Recipe::Gradient),
            "sqp" => Some(Recipe::Sqp),
            "ahu" => Some(Recipe::Ahu),
            "sign_gradient" | "sign-gradient" => Some(Recipe::SignGradient),
            "accelerated" => Some(Recipe::Accelerated),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceLevel {
    None,
    Summary,
    Full,
}

/// Generator configuration. The default stopping tolerance is the square
/// root of machine precision; a digital iterate cannot reliably do better.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub recipe: Recipe,
    pub epsilon: f64,
    pub max_iter: usize,
    pub trace_level: TraceLevel,
    pub jump: JumpConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            recipe: Recipe::Gradient,
            epsilon: crate::default_epsilon(),
            max_iter: 10_000,
            trace_level: TraceLevel::Summary,
            jump: JumpConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn with_recipe(recipe: Recipe) -> Self {
        Self {
            recipe,
            ..Self::default()
        }
    }
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    MaxIter,
    LineFailure,
    GuidabilityFailure,
    DescentFailure,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::MaxIter => "max_iter",
            Outcome::LineFailure => "line_failure",
            Outcome::GuidabilityFailure => "guidability_failure",
            Outcome::DescentFailure => "descent_failure",
        }
    }
}

/// One completed iteration: the state it started from and the jump taken.
#[derive(Clone, Debug)]
pub struct IterateRecord {
    pub k: usize,
    pub s: f64,
    pub ds: f64,
    pub h: f64,
    pub residual: TargetResidual,
    /// Violation of the integrals of motion at the iterate, recomputed from
    /// the evaluators.
    pub hypersurface: f64,
    pub cost: f64,
    /// Velocity norm at the iterate; accelerated runs only.
    pub velocity_norm: Option<f64>,
    pub q1: Option<Vec<f64>>,
    pub q2: Option<Vec<f64>>,
    pub u1: Option<Vec<f64>>,
    pub u2: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

/// Full run log: per-iteration records plus the final state and counters.
#[derive(Clone, Debug)]
pub struct Trace {
    pub problem: String,
    pub recipe: String,
    pub records: Vec<IterateRecord>,
    pub outcome: Outcome,
    pub final_state: LiftedState,
    pub final_s: f64,
    pub final_residual: TargetResidual,
    pub iterations: usize,
    pub slf_evals: usize,
    pub wall_seconds: f64,
    pub advisory: Option<String>,
}

impl Trace {
    /// Summary object with a stable key set.
    pub fn summary(&self) -> serde_json::Value {
        json!({
            "problem": self.problem,
            "recipe": self.recipe,
            "outcome": self.outcome.as_str(),
            "iterations": self.iterations,
            "final_S": self.final_s,
            "final_residual": self.final_residual.total,
            "final_cost": self.final_state.q5,
            "slf_evals": self.slf_evals,
            "wall_seconds": self.wall_seconds,
            "advisory": self.advisory,
        })
    }

    /// One JSON object per iteration, fields `(k, S, DS, h, residuals, q1, q2)`.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = json!({
                "k": r.k,
                "S": r.s,
                "DS": r.ds,
                "h": r.h,
                "residuals": r.residual,
                "q1": r.q1,
                "q2": r.q2,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

pub(crate) struct RecipePlan {
    pub slf: SlfSpec,
    pub control: ControlSetSpec,
    pub accelerated: bool,
}

pub(crate) fn resolve_recipe(p: &ProblemSpec, recipe: &Recipe) -> Result<RecipePlan> {
    let flags = p.flags();
    let require_equality = |tag: &str| -> Result<()> {
        if !flags.is_equality_only {
            return Err(Error::IncompatibleRecipe(format!(
                "{tag} requires an equality-constrained or unconstrained problem; \
                 inequality bounds need a complementarity-aware SLF"
            )));
        }
        Ok(())
    };
    let require_unconstrained = |tag: &str| -> Result<()> {
        if p.m() != 0 {
            return Err(Error::IncompatibleRecipe(format!(
                "{tag} requires an unconstrained problem (m = 0), got m = {}",
                p.m()
            )));
        }
        Ok(())
    };
    match recipe {
        Recipe::Gradient => {
            require_equality("the gradient recipe")?;
            Ok(RecipePlan {
                slf: SlfSpec::quadratic_residual(),
                control: ControlSetSpec::QuadraticMetric {
                    metric: MetricRecipe::Identity,
                    delta: None,
                },
                accelerated: false,
            })
        }
        Recipe::Sqp => {
            require_equality("the sqp recipe")?;
            Ok(RecipePlan {
                slf: SlfSpec::quadratic_residual(),
                control: ControlSetSpec::QuadraticMetric {
                    metric: MetricRecipe::Sqp,
                    delta: None,
                },
                accelerated: false,
            })
        }
        Recipe::Ahu => {
            require_equality("the ahu recipe")?;
            Ok(RecipePlan {
                slf: SlfSpec::quadratic_residual(),
                control: ControlSetSpec::QuadraticMetric {
                    metric: MetricRecipe::Ahu,
                    delta: None,
                },
                accelerated: false,
            })
        }
        Recipe::SignGradient => {
            require_unconstrained("the sign-gradient recipe")?;
            Ok(RecipePlan {
                slf: SlfSpec::l1_gradient(),
                control: ControlSetSpec::QuadraticMetric {
                    metric: MetricRecipe::Hessian,
                    delta: None,
                },
                accelerated: false,
            })
        }
        Recipe::Accelerated => {
            require_unconstrained("the accelerated recipe")?;
            Ok(RecipePlan {
                slf: SlfSpec::velocity_augmented(),
                control: ControlSetSpec::RateConstrained {
                    rate: RateSpec::BhatBernstein {
                        gain: 1.0,
                        exponent: 0.5,
                    },
                },
                accelerated: true,
            })
        }
        Recipe::Custom {
            slf,
            control,
            accelerated,
        } => {
            match slf.kind {
                SlfKind::QuadraticResidual => require_equality("a quadratic-residual SLF")?,
                SlfKind::L1Gradient => require_unconstrained("the l1 SLF")?,
                SlfKind::VelocityAugmented => require_unconstrained("the velocity-augmented SLF")?,
            }
            if slf.kind == SlfKind::VelocityAugmented && !accelerated {
                return Err(Error::IncompatibleRecipe(
                    "a velocity-augmented SLF needs accelerated dynamics".into(),
                ));
            }
            Ok(RecipePlan {
                slf: *slf,
                control: control.clone(),
                accelerated: *accelerated,
            })
        }
    }
}

/// Whether a recipe's preconditions accept a problem (without running it).
pub fn recipe_applies(p: &ProblemSpec, recipe: &Recipe) -> bool {
    resolve_recipe(p, recipe).is_ok()
}

fn solve_direction(
    plan: &RecipePlan,
    p: &ProblemSpec,
    q: &LiftedState,
    epsilon: f64,
) -> Result<DirectionResult> {
    match &plan.control {
        ControlSetSpec::QuadraticMetric { .. } => {
            solve_direction_quadratic(&plan.slf, &plan.control, p, q)
        }
        ControlSetSpec::RateConstrained { rate } => {
            if plan.accelerated {
                accel::accel_direction(p, q, rate, epsilon)
            } else {
                solve_direction_rate_constrained(&plan.slf, &plan.control, p, q)
            }
        }
    }
}

/// Shrinks a quadratic control set radius for the retry after a failed
/// descent certificate.
fn shrink_control(control: &ControlSetSpec) -> ControlSetSpec {
    match control {
        ControlSetSpec::QuadraticMetric { metric, delta } => ControlSetSpec::QuadraticMetric {
            metric: metric.clone(),
            delta: delta.map(|d| d / 16.0),
        },
        other => other.clone(),
    }
}

/// Runs the generator loop on a problem from the given guesses.
pub fn run(
    p: &ProblemSpec,
    cfg: &GeneratorConfig,
    q1_guess: &DVector<f64>,
    q2_guess: &DVector<f64>,
) -> Result<Trace> {
    let plan = resolve_recipe(p, &cfg.recipe)?;
    let start = Instant::now();
    let mut q = if plan.accelerated {
        init_state_accelerated(p, q1_guess, q2_guess)?
    } else {
        init_state(p, q1_guess, q2_guess)?
    };
    let mut records = Vec::new();
    let mut slf_evals = 0usize;
    let mut iterations = 0usize;
    let mut outcome = Outcome::MaxIter;

    let rate_of = |control: &ControlSetSpec| match control {
        ControlSetSpec::RateConstrained { rate } => *rate,
        _ => RateSpec::BhatBernstein {
            gain: 1.0,
            exponent: 0.5,
        },
    };

    for k in 0.. {
        let s_val = slf_value(&plan.slf, &q)?;
        slf_evals += 1;
        let velocity_small =
            q.v1.as_ref()
                .map(|v| v.amax() <= cfg.epsilon)
                .unwrap_or(true);
        if s_val <= cfg.epsilon && velocity_small {
            outcome = Outcome::Converged;
            break;
        }
        if k >= cfg.max_iter {
            outcome = Outcome::MaxIter;
            break;
        }

        // Step 2: jump direction, with one shrunk retry when the descent
        // certificate fails.
        let mut kicked = false;
        let direction = match solve_direction(&plan, p, &q, cfg.epsilon) {
            Ok(d) => Some(d),
            Err(Error::NoDescent { .. }) => {
                let shrunk = RecipePlan {
                    slf: plan.slf,
                    control: shrink_control(&plan.control),
                    accelerated: plan.accelerated,
                };
                match solve_direction(&shrunk, p, &q, cfg.epsilon) {
                    Ok(d) => Some(d),
                    Err(_) => {
                        outcome = Outcome::DescentFailure;
                        break;
                    }
                }
            }
            Err(Error::GuidabilityFailure) if plan.accelerated => {
                kicked = true;
                None
            }
            Err(Error::GuidabilityFailure) => {
                outcome = Outcome::GuidabilityFailure;
                break;
            }
            Err(_) => {
                outcome = Outcome::DescentFailure;
                break;
            }
        };

        // Steps 3 and 4: jump length and the iterative map.
        let step: std::result::Result<(JumpResult, f64, ControlVector), Outcome> = if kicked {
            match accel::kick_step(p, &q, &rate_of(&plan.control), &cfg.jump) {
                Ok((jump, ds)) => Ok((jump, ds, ControlVector::zeros(p.n(), p.m()))),
                Err(_) => Err(Outcome::GuidabilityFailure),
            }
        } else {
            let dir = direction.expect("direction present unless kicked");
            // on a line failure, shrink the control (the radius retry) and
            // try again a few times before giving up
            let mut used = dir.u.clone();
            let mut used_ds = dir.ds;
            let mut attempt = solve_jump(&plan.slf, p, &q, &used, &cfg.jump);
            let mut shrink = 0;
            while attempt.is_err() && shrink < 3 {
                shrink += 1;
                let scale = 0.25f64.powi(shrink);
                used = dir.u.scale(scale);
                used_ds = dir.ds * scale;
                attempt = solve_jump(&plan.slf, p, &q, &used, &cfg.jump);
            }
            match attempt {
                Ok(jump) => Ok((jump, used_ds, used)),
                Err(_) => Err(Outcome::LineFailure),
            }
        };

        let (jump, ds, u) = match step {
            Ok(t) => t,
            Err(o) => {
                outcome = o;
                break;
            }
        };
        slf_evals += jump.evals;

        if cfg.trace_level != TraceLevel::None {
            let full = cfg.trace_level == TraceLevel::Full;
            records.push(IterateRecord {
                k,
                s: s_val,
                ds,
                h: jump.h,
                residual: p.target_residual(&q)?,
                hypersurface: crate::dynamics::hypersurface_residual(p, &q)?,
                cost: q.q5,
                velocity_norm: q.v1.as_ref().map(|v| v.amax()),
                q1: full.then(|| q.q1.as_slice().to_vec()),
                q2: full.then(|| q.q2.as_slice().to_vec()),
                u1: full.then(|| u.u1.as_slice().to_vec()),
                u2: full.then(|| u.u2.as_slice().to_vec()),
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
        q = jump.q_next;
        iterations += 1;
    }

    let final_s = slf_value(&plan.slf, &q)?;
    let final_residual = p.target_residual(&q)?;
    let advisory = match (&cfg.recipe, outcome) {
        (Recipe::Ahu, o) if p.flags().is_lp && o != Outcome::Converged => Some(
            "on a linear program the saddle-point matrix has zero symmetric part, so the \
             Arrow-Hurwicz-Uzawa flow rotates the residual without decreasing it; \
             see the analyze and demo-ahu reports"
                .to_string(),
        ),
        _ => None,
    };
    Ok(Trace {
        problem: p.name().to_string(),
        recipe: cfg.recipe.name().to_string(),
        iterations,
        records,
        outcome,
        final_s,
        final_residual,
        final_state: q,
        slf_evals,
        wall_seconds: start.elapsed().as_secs_f64(),
        advisory,
    })
}

/// One comparison row per (config, guess) pair.
#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub problem: String,
    pub recipe: String,
    pub outcome: &'static str,
    pub iters: usize,
    pub final_s: f64,
    pub final_residual: f64,
    pub evals: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<CompareRow>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("problem,recipe,outcome,iters,final_S,final_residual,evals,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{},{:.6}\n",
                r.problem,
                r.recipe,
                r.outcome,
                r.iters,
                r.final_s,
                r.final_residual,
                r.evals,
                r.seconds
            ));
        }
        out
    }
}

/// Runs each configuration (from each guess, or from the problem's default
/// start when no guesses are given) and tabulates the results.
pub fn compare(
    p: &ProblemSpec,
    cfgs: &[GeneratorConfig],
    guesses: &[(DVector<f64>, DVector<f64>)],
) -> Result<ComparisonReport> {
    if cfgs.is_empty() {
        return Err(Error::InvalidProblem(
            "compare needs at least one config".into(),
        ));
    }
    let default_guess = vec![p.default_start()];
    let starts: &[(DVector<f64>, DVector<f64>)] = if guesses.is_empty() {
        &default_guess
    } else {
        guesses
    };
    let mut rows = Vec::new();
    for cfg in cfgs {
        for (q1, q2) in starts {
            let trace = run(p, cfg, q1, q2)?;
            rows.push(CompareRow {
                problem: trace.problem.clone(),
                recipe: trace.recipe.clone(),
                outcome: trace.outcome.as_str(),
                iters: trace.iterations,
                final_s: trace.final_s,
                final_residual: trace.final_residual.total,
                evals: trace.slf_evals,
                seconds: trace.wall_seconds,
            });
        }
    }
    Ok(ComparisonReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_problem;
    use nalgebra::dvector;

    #[test]
    fn sqp_on_eqqp2_converges_in_two() {
        let p = load_problem("eqqp2").unwrap();
        let cfg = GeneratorConfig::with_recipe(Recipe::Sqp);
        let t = run(&p, &cfg, &dvector![0.0, 0.0], &dvector![0.0]).unwrap();
        assert_eq!(t.outcome, Outcome::Converged);
        assert!(t.iterations <= 2, "took {}", t.iterations);
        assert!((t.final_state.q1[0] - 0.5).abs() < 1e-10);
        assert!((t.final_state.q1[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn ahu_on_lp_does_not_converge() {
        let p = load_problem("lp1").unwrap();
        let (q1, q2) = p.default_start();
        let t = run(&p, &GeneratorConfig::with_recipe(Recipe::Ahu), &q1, &q2).unwrap();
        assert_ne!(t.outcome, Outcome::Converged);
        assert!(t.advisory.is_some());
    }

    #[test]
    fn start_at_kkt_point_stops_immediately() {
        let p = load_problem("eqqp2").unwrap();
        let cfg = GeneratorConfig::with_recipe(Recipe::Sqp);
        let t = run(&p, &cfg, &dvector![0.5, 0.5], &dvector![-0.5]).unwrap();
        assert_eq!(t.outcome, Outcome::Converged);
        assert_eq!(t.iterations, 0);
    }

    #[test]
    fn incompatible_recipe_is_rejected() {
        let p = load_problem("eqqp2").unwrap();
        let err = run(
            &p,
            &GeneratorConfig::with_recipe(Recipe::SignGradient),
            &dvector![0.0, 0.0],
            &dvector![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::IncompatibleRecipe(_)));
    }

    #[test]
    fn compare_single_config_matches_run() {
        let p = load_problem("eqqp2").unwrap();
        let cfg = GeneratorConfig::with_recipe(Recipe::Sqp);
        let report = compare(&p, std::slice::from_ref(&cfg), &[]).unwrap();
        assert_eq!(report.rows.len(), 1);
        let (q1, q2) = p.default_start();
        let t = run(&p, &cfg, &q1, &q2).unwrap();
        assert_eq!(report.rows[0].iters, t.iterations);
        assert_eq!(report.rows[0].outcome, t.outcome.as_str());
    }

    #[test]
    fn compare_gradient_vs_sqp_on_rosenbrock() {
        // only the ordering is asserted: newton-metric directions beat
        // steepest descent on this valley by far more than a factor of ten
        let p = load_problem("rosenbrock").unwrap();
        let cfgs = vec![
            GeneratorConfig {
                max_iter: 100_000,
                trace_level: TraceLevel::None,
                ..GeneratorConfig::with_recipe(Recipe::Gradient)
            },
            GeneratorConfig::with_recipe(Recipe::Sqp),
        ];
        let report = compare(&p, &cfgs, &[]).unwrap();
        let grad = &report.rows[0];
        let sqp = &report.rows[1];
        assert_eq!(sqp.outcome, "converged");
        assert!(
            grad.iters >= 10 * sqp.iters,
            "gradient {} vs sqp {}",
            grad.iters,
            sqp.iters
        );
    }

    #[test]
    fn traces_are_deterministic() {
        let p = load_problem("eqqp3").unwrap();
        let cfg = GeneratorConfig {
            trace_level: TraceLevel::Full,
            ..GeneratorConfig::with_recipe(Recipe::Gradient)
        };
        let (q1, q2) = p.default_start();
        let a = run(&p, &cfg, &q1, &q2).unwrap();
        let b = run(&p, &cfg, &q1, &q2).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.final_state.q1, b.final_state.q1);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.s.to_bits(), rb.s.to_bits());
            assert_eq!(ra.h.to_bits(), rb.h.to_bits());
            assert_eq!(ra.q1, rb.q1);
        }
    }

    #[test]
    fn summary_has_stable_keys() {
        let p = load_problem("quad1d").unwrap();
        let (q1, q2) = p.default_start();
        let t = run(
            &p,
            &GeneratorConfig::with_recipe(Recipe::Gradient),
            &q1,
            &q2,
        )
        .unwrap();
        let summary = t.summary();
        let keys: Vec<&str> = summary
            .as_object()
            .unwrap()
            .keys()
            .map(|s| s.as_str())
            .collect();
        assert_eq!(
            keys,
            vec![
                "advisory",
                "final_S",
                "final_cost",
                "final_residual",
                "iterations",
                "outcome",
                "problem",
                "recipe",
                "slf_evals",
                "wall_seconds"
            ]
        );
    }
}
