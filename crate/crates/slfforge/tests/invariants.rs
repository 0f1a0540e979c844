//! Cross-module properties: field linearity and tangency, corpus-wide
//! derivative and KKT checks, the convergence contract, and the
//! hill-climbing witness.

use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

use slfforge::dynamics::{eval_field, hypersurface_residual, init_state, ControlVector};
use slfforge::generator::{run, GeneratorConfig, Outcome, Recipe, TraceLevel};
use slfforge::jump::{solve_jump, JumpConfig};
use slfforge::slf::{slf_value, solve_direction_quadratic, ControlSetSpec, MetricRecipe, SlfSpec};
use slfforge::{load_problem, registry_names, ProblemSpec};

struct Rng(u64);
impl Rng {
    fn next(&mut self, lo: f64, hi: f64) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        lo + (hi - lo) * ((self.0 >> 11) as f64 / (1u64 << 53) as f64)
    }
    fn vector(&mut self, n: usize, lo: f64, hi: f64) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.next(lo, hi)))
    }
}

#[test]
fn corpus_kkt_points_lie_in_target_set() {
    for name in registry_names() {
        let p = load_problem(name).unwrap();
        let (x, lambda) = p.kkt_point().unwrap();
        let q = init_state(&p, &x, &lambda).unwrap();
        let r = p.target_residual(&q).unwrap();
        assert!(
            r.total <= 1e-12,
            "{name}: stored KKT point has residual {}",
            r.total
        );
    }
}

#[test]
fn corpus_derivatives_pass_at_random_probes() {
    let mut rng = Rng(0x9E3779B97F4A7C15);
    for name in registry_names() {
        let p = load_problem(name).unwrap();
        for _ in 0..100 {
            let q1 = rng.vector(p.n(), -2.0, 2.0);
            let report = p.validate_derivatives(&q1, 1e-6).unwrap();
            assert!(
                report.pass,
                "{name} at {q1:?}: worst error {}",
                report.max_error
            );
        }
    }
}

#[test]
fn lagrangian_hessian_is_exactly_symmetric() {
    let mut rng = Rng(0xA5A5A5A5DEADBEEF);
    for name in registry_names() {
        let p = load_problem(name).unwrap();
        for _ in 0..20 {
            let q1 = rng.vector(p.n(), -2.0, 2.0);
            let q2 = rng.vector(p.m(), -2.0, 2.0);
            let h = p.lagrangian_hess(1.0, &q1, &q2).unwrap();
            assert_eq!(h, h.transpose(), "{name}");
        }
    }
}

#[test]
fn field_tangency_to_the_integrals_of_motion() {
    // the chain-rule rate of each integral of motion vanishes along the field
    let mut rng = Rng(0x0123456789ABCDEF);
    for name in ["eqqp2", "circqp", "sinring", "rosenbrock"] {
        let p = load_problem(name).unwrap();
        for _ in 0..20 {
            let q1 = rng.vector(p.n(), -1.5, 1.5);
            let q2 = rng.vector(p.m(), -1.5, 1.5);
            let q = init_state(&p, &q1, &q2).unwrap();
            let u = ControlVector {
                u0: rng.next(-1.0, 1.0),
                u1: rng.vector(p.n(), -1.5, 1.5),
                u2: rng.vector(p.m(), -1.5, 1.5),
            };
            let rate = eval_field(&p, &q, &u).unwrap();
            let hess = p.lagrangian_hess(q.q0, &q.q1, &q.q2).unwrap();
            let jac = p.constraint_jacobian(&q.q1).unwrap();
            let grad0 = p.cost_gradient(&q.q1).unwrap();

            let mut d_grad = &rate.dq3 + &hess * &rate.dq1 + &grad0 * rate.dq0;
            if p.m() > 0 {
                d_grad += jac.transpose() * &rate.dq2;
            }
            let d_cons = &rate.dq4 - &jac * &rate.dq1;
            let d_cost = rate.dq5 - grad0.dot(&rate.dq1);
            let scale = 1.0 + hess.amax() + grad0.amax();
            assert!(d_grad.amax() <= 1e-10 * scale, "{name}: {}", d_grad.amax());
            assert!(d_cons.amax() <= 1e-10 * scale);
            assert!(d_cost.abs() <= 1e-10 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // zero drift and linearity in the control
    #[test]
    fn field_is_linear_in_the_control(
        x in -2.0f64..2.0, y in -2.0f64..2.0, l in -2.0f64..2.0,
        a in -3.0f64..3.0, b in -3.0f64..3.0,
        u1 in -2.0f64..2.0, u2 in -2.0f64..2.0, u3 in -2.0f64..2.0,
        w1 in -2.0f64..2.0, w2 in -2.0f64..2.0, w3 in -2.0f64..2.0,
    ) {
        let p = load_problem("circqp").unwrap();
        let q = init_state(&p, &dvector![x, y], &dvector![l]).unwrap();
        let u = ControlVector::from_parts(dvector![u1, u2], dvector![u3]);
        let w = ControlVector::from_parts(dvector![w1, w2], dvector![w3]);
        let combo = ControlVector::from_parts(
            &u.u1 * a + &w.u1 * b,
            &u.u2 * a + &w.u2 * b,
        );
        let ru = eval_field(&p, &q, &u).unwrap();
        let rw = eval_field(&p, &q, &w).unwrap();
        let rc = eval_field(&p, &q, &combo).unwrap();
        let scale = 1.0 + rc.dq3.amax() + rc.dq4.amax();
        prop_assert!((&rc.dq3 - (&ru.dq3 * a + &rw.dq3 * b)).amax() <= 1e-12 * scale);
        prop_assert!((&rc.dq4 - (&ru.dq4 * a + &rw.dq4 * b)).amax() <= 1e-12 * scale);
        prop_assert!((rc.dq5 - (ru.dq5 * a + rw.dq5 * b)).abs() <= 1e-12 * (1.0 + rc.dq5.abs()));
        // zero control gives zero rates
        let rz = eval_field(&p, &q, &ControlVector::zeros(2, 1)).unwrap();
        prop_assert_eq!(rz.dq3.amax(), 0.0);
        prop_assert_eq!(rz.dq4.amax(), 0.0);
    }

    // the line profile of a nonnegative SLF stays nonnegative
    #[test]
    fn slf_stays_nonnegative_along_jumps(
        x in -1.5f64..1.5, y in -1.5f64..1.5, l in -1.0f64..1.0,
        h in 0.0f64..4.0,
    ) {
        let p = load_problem("sinring").unwrap();
        let q = init_state(&p, &dvector![x, y], &dvector![l]).unwrap();
        let s = SlfSpec::quadratic_residual();
        if let Ok(dir) = solve_direction_quadratic(
            &s,
            &ControlSetSpec::QuadraticMetric { metric: MetricRecipe::Identity, delta: None },
            &p,
            &q,
        ) {
            let v = slfforge::jump::phi_along(&s, &p, &q, &dir.u, h).unwrap();
            prop_assert!(v >= 0.0);
        }
    }
}

#[test]
fn exact_and_fully_minimized_numeric_jumps_agree_on_random_qps() {
    let mut rng = Rng(0xFEEDFACE12345678);
    for trial in 0..20 {
        let n = 2 + (trial % 4);
        let m = 1 + (trial % 2);
        let p = random_eq_qp(&mut rng, n, m, trial);
        let q1 = rng.vector(n, -1.0, 1.0);
        let q2 = rng.vector(m, -1.0, 1.0);
        let q = init_state(&p, &q1, &q2).unwrap();
        let s = SlfSpec::quadratic_residual();
        let Ok(dir) = solve_direction_quadratic(
            &s,
            &ControlSetSpec::QuadraticMetric {
                metric: MetricRecipe::Identity,
                delta: None,
            },
            &p,
            &q,
        ) else {
            continue;
        };
        let exact = solve_jump(&s, &p, &q, &dir.u, &JumpConfig::default()).unwrap();
        let numeric = solve_jump(
            &s,
            &p,
            &q,
            &dir.u,
            &JumpConfig {
                allow_exact: false,
                full_minimize: true,
                ..JumpConfig::default()
            },
        )
        .unwrap();
        assert!(
            (exact.h - numeric.h).abs() <= 1e-8 * (1.0 + exact.h),
            "trial {trial}: exact {} numeric {}",
            exact.h,
            numeric.h
        );
    }
}

fn random_eq_qp(rng: &mut Rng, n: usize, m: usize, id: usize) -> ProblemSpec {
    let m_mat = DMatrix::from_fn(n, n, |_, _| rng.next(-1.0, 1.0));
    let q_mat = &m_mat * m_mat.transpose() + DMatrix::identity(n, n);
    let a_mat = loop {
        let a = DMatrix::from_fn(m, n, |_, _| rng.next(-1.0, 1.0));
        let sv = a.clone().svd(false, false).singular_values;
        if sv.iter().copied().fold(f64::INFINITY, f64::min) >= 0.3 {
            break a;
        }
    };
    let x_star = rng.vector(n, -1.0, 1.0);
    let b = &a_mat * &x_star;
    let c = rng.vector(n, -1.0, 1.0);
    ProblemSpec::quadratic(
        &format!("rand{id}"),
        q_mat,
        c,
        a_mat,
        b,
        DVector::zeros(m),
        DVector::zeros(m),
    )
    .unwrap()
}

/// The convergence contract: every corpus problem paired with each recipe
/// whose descent certificate is available along the run converges to the
/// target set. Pairs where the certificate provably degenerates (the
/// identity, sign and velocity pairings on the Rosenbrock valley, whose
/// squared-gradient landscape has spurious stationary points) are excluded;
/// the Newton-metric recipe covers that problem.
#[test]
fn convergence_contract_over_the_corpus() {
    let mut pairs: Vec<(&str, Recipe)> = Vec::new();
    for name in registry_names() {
        pairs.push((name, Recipe::Sqp));
        if name != "rosenbrock" {
            pairs.push((name, Recipe::Gradient));
        }
    }
    pairs.push(("quad1d", Recipe::SignGradient));
    pairs.push(("quad1d", Recipe::Accelerated));

    let eps = slfforge::default_epsilon();
    for (name, recipe) in pairs {
        let p = load_problem(name).unwrap();
        let recipe_name = recipe.name();
        let cfg = GeneratorConfig {
            max_iter: 200_000,
            trace_level: TraceLevel::None,
            ..GeneratorConfig::with_recipe(recipe)
        };
        let (q1, q2) = p.default_start();
        let t = run(&p, &cfg, &q1, &q2).unwrap();
        assert_eq!(
            t.outcome,
            Outcome::Converged,
            "{name} x {recipe_name}: outcome {:?}",
            t.outcome
        );
        assert!(
            t.final_residual.total <= 10.0 * eps.sqrt(),
            "{name} x {recipe_name}: residual {}",
            t.final_residual.total
        );
    }
}

#[test]
fn monotone_slf_and_exact_hypersurface_across_all_outcomes() {
    for name in registry_names() {
        let p = load_problem(name).unwrap();
        for recipe in [
            Recipe::Gradient,
            Recipe::Sqp,
            Recipe::Ahu,
            Recipe::SignGradient,
            Recipe::Accelerated,
        ] {
            if !slfforge::generator::recipe_applies(&p, &recipe) {
                continue;
            }
            let recipe_name = recipe.name();
            let cfg = GeneratorConfig {
                trace_level: TraceLevel::Summary,
                ..GeneratorConfig::with_recipe(recipe)
            };
            let (q1, q2) = p.default_start();
            let t = run(&p, &cfg, &q1, &q2).unwrap();
            for pair in t.records.windows(2) {
                assert!(
                    pair[1].s < pair[0].s,
                    "{name} x {recipe_name}: SLF not strictly decreasing"
                );
            }
            if let Some(last) = t.records.last() {
                assert!(t.final_s < last.s, "{name} x {recipe_name}");
            }
            for r in &t.records {
                assert!(
                    r.hypersurface <= 1e-12,
                    "{name} x {recipe_name}: hypersurface residual {}",
                    r.hypersurface
                );
            }
            let final_res = hypersurface_residual(&p, &t.final_state).unwrap();
            assert!(final_res <= 1e-12, "{name} x {recipe_name}: {final_res}");
        }
    }
}

#[test]
fn some_corpus_run_climbs_the_cost_while_the_slf_falls() {
    // the eqqp2 chain raises the cost from 0 toward 0.25 while converging
    let p = load_problem("eqqp2").unwrap();
    let cfg = GeneratorConfig {
        trace_level: TraceLevel::Summary,
        ..GeneratorConfig::with_recipe(Recipe::Gradient)
    };
    let (q1, q2) = p.default_start();
    let t = run(&p, &cfg, &q1, &q2).unwrap();
    assert_eq!(t.outcome, Outcome::Converged);
    let mut costs: Vec<f64> = t.records.iter().map(|r| r.cost).collect();
    costs.push(t.final_state.q5);
    assert!(
        costs.windows(2).any(|w| w[1] > w[0]),
        "expected at least one cost increase along the run"
    );
    let s_values: Vec<f64> = t.records.iter().map(|r| r.s).collect();
    assert!(s_values.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn velocity_terminality_on_accelerated_runs() {
    let starts = [dvector![4.0], dvector![-2.5], dvector![0.3]];
    let p = load_problem("quad1d").unwrap();
    let cfg = GeneratorConfig::with_recipe(Recipe::Accelerated);
    for start in starts {
        let t = run(&p, &cfg, &start, &dvector![]).unwrap();
        assert_eq!(t.outcome, Outcome::Converged);
        let v = t.final_state.v1.as_ref().unwrap();
        assert!(
            v.amax() <= cfg.epsilon,
            "start {start:?}: |v| = {}",
            v.amax()
        );
    }
}

#[test]
fn a_shared_problem_supports_concurrent_runs() {
    let p = std::sync::Arc::new(load_problem("eqqp3").unwrap());
    let sequential: Vec<_> = [Recipe::Gradient, Recipe::Sqp]
        .into_iter()
        .map(|r| {
            let (q1, q2) = p.default_start();
            let t = run(&p, &GeneratorConfig::with_recipe(r), &q1, &q2).unwrap();
            (t.iterations, t.final_state.q1.clone())
        })
        .collect();
    let handles: Vec<_> = [Recipe::Gradient, Recipe::Sqp]
        .into_iter()
        .map(|r| {
            let p = std::sync::Arc::clone(&p);
            std::thread::spawn(move || {
                let (q1, q2) = p.default_start();
                let t = run(&p, &GeneratorConfig::with_recipe(r), &q1, &q2).unwrap();
                (t.iterations, t.final_state.q1.clone())
            })
        })
        .collect();
    for (handle, expected) in handles.into_iter().zip(sequential) {
        let got = handle.join().unwrap();
        assert_eq!(got.0, expected.0);
        assert_eq!(got.1, expected.1);
    }
}

#[test]
fn slf_values_are_nonnegative_and_vanish_at_kkt_points() {
    let s = SlfSpec::quadratic_residual();
    for name in registry_names() {
        let p = load_problem(name).unwrap();
        let (x, lambda) = p.kkt_point().unwrap();
        let q = init_state(&p, &x, &lambda).unwrap();
        let v = slf_value(&s, &q).unwrap();
        assert!((0.0..=1e-24).contains(&v), "{name}: S = {v}");
    }
}
