//! Built-in problem corpus and file ingestion.
//!
//! Every registry entry carries a default start and, where one is known in
//! closed form, the KKT point and multiplier used by the test suites.

use nalgebra::{dvector, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{problem_from_qp_file, ProblemSpec, QpFile};

/// Names of the built-in problems, in registry order.
pub fn registry_names() -> Vec<&'static str> {
    vec![
        "quad1d",
        "eqqp2",
        "lp1",
        "rosenbrock",
        "eqqp3",
        "eqqp4",
        "circqp",
        "sinring",
    ]
}

/// Loads a problem from the registry by name, or from a QP/LP JSON file when
/// the source is not a registry name.
pub fn load_problem(source: &str) -> Result<ProblemSpec> {
    match source {
        "quad1d" => quad1d(),
        "eqqp2" => eqqp2(),
        "lp1" => lp1(),
        "rosenbrock" => rosenbrock(),
        "eqqp3" => eqqp3(),
        "eqqp4" => eqqp4(),
        "circqp" => circqp(),
        "sinring" => sinring(),
        path => {
            if !std::path::Path::new(path).exists() {
                return Err(Error::UnknownProblem(path.to_string()));
            }
            load_problem_file(path)
        }
    }
}

/// Loads a dense QP/LP problem from a JSON file (see the schema on
/// [`ProblemSpec`]'s module documentation).
pub fn load_problem_file(path: &str) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)?;
    let file: QpFile = serde_json::from_str(&text)?;
    let stem = std::path::Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("file");
    problem_from_qp_file(stem, file)
}

/// 1-D quadratic `0.5 x^2`, unconstrained. Minimizer at the origin.
fn quad1d() -> Result<ProblemSpec> {
    Ok(ProblemSpec::quadratic(
        "quad1d",
        DMatrix::identity(1, 1),
        dvector![0.0],
        DMatrix::zeros(0, 1),
        dvector![],
        dvector![],
        dvector![],
    )?
    .with_start(dvector![2.0], dvector![])
    .with_kkt_point(dvector![0.0], dvector![]))
}

/// `0.5 ||x||^2` subject to `x1 + x2 = 1`. KKT point (0.5, 0.5), multiplier
/// -0.5.
fn eqqp2() -> Result<ProblemSpec> {
    Ok(ProblemSpec::quadratic(
        "eqqp2",
        DMatrix::identity(2, 2),
        dvector![0.0, 0.0],
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        dvector![1.0],
        dvector![0.0],
        dvector![0.0],
    )?
    .with_start(dvector![0.0, 0.0], dvector![0.0])
    .with_kkt_point(dvector![0.5, 0.5], dvector![-0.5]))
}

/// Linear program `min x` subject to `x = 1`. KKT point x = 1, multiplier -1.
fn lp1() -> Result<ProblemSpec> {
    Ok(ProblemSpec::quadratic(
        "lp1",
        DMatrix::zeros(1, 1),
        dvector![1.0],
        DMatrix::from_row_slice(1, 1, &[1.0]),
        dvector![1.0],
        dvector![0.0],
        dvector![0.0],
    )?
    .with_start(dvector![0.0], dvector![0.0])
    .with_kkt_point(dvector![1.0], dvector![-1.0]))
}

/// The Rosenbrock valley, unconstrained, from the classic start (-1.2, 1).
fn rosenbrock() -> Result<ProblemSpec> {
    Ok(ProblemSpec::general(
        "rosenbrock",
        2,
        0,
        |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
        |x| {
            dvector![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0])
            ]
        },
        |x| {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    2.0 - 400.0 * x[1] + 1200.0 * x[0] * x[0],
                    -400.0 * x[0],
                    -400.0 * x[0],
                    200.0,
                ],
            )
        },
        |_| dvector![],
        |_| DMatrix::zeros(0, 2),
        None,
        dvector![],
        dvector![],
    )?
    .with_start(dvector![-1.2, 1.0], dvector![])
    .with_kkt_point(dvector![1.0, 1.0], dvector![]))
}

/// Diagonal 3-variable QP with one equality row; constructed so the KKT point
/// is exactly (1, 1, 1) with multiplier 1.
fn eqqp3() -> Result<ProblemSpec> {
    Ok(ProblemSpec::quadratic(
        "eqqp3",
        DMatrix::from_diagonal(&dvector![2.0, 3.0, 4.0]),
        dvector![-3.0, -4.0, -5.0],
        DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
        dvector![3.0],
        dvector![0.0],
        dvector![0.0],
    )?
    .with_start(dvector![0.0, 0.0, 0.0], dvector![0.0])
    .with_kkt_point(dvector![1.0, 1.0, 1.0], dvector![1.0]))
}

/// 4-variable QP with two equality rows; KKT point (1, -1, 0.5, -0.5) with
/// multipliers (1, 2) by construction.
fn eqqp4() -> Result<ProblemSpec> {
    Ok(ProblemSpec::quadratic(
        "eqqp4",
        DMatrix::from_diagonal(&dvector![1.0, 2.0, 3.0, 4.0]),
        dvector![-2.0, 1.0, -3.5, 0.0],
        DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]),
        dvector![0.0, 0.0],
        dvector![0.0, 0.0],
        dvector![0.0, 0.0],
    )?
    .with_start(dvector![0.0, 0.0, 0.0, 0.0], dvector![0.0, 0.0])
    .with_kkt_point(dvector![1.0, -1.0, 0.5, -0.5], dvector![1.0, 2.0]))
}

/// Quadratic cost over the unit circle: `min 0.5((x1-2)^2 + x2^2)` subject to
/// `x1^2 + x2^2 = 1`. KKT point (1, 0), multiplier 0.5.
fn circqp() -> Result<ProblemSpec> {
    Ok(ProblemSpec::general(
        "circqp",
        2,
        1,
        |x| 0.5 * ((x[0] - 2.0).powi(2) + x[1] * x[1]),
        |x| dvector![x[0] - 2.0, x[1]],
        |_| DMatrix::identity(2, 2),
        |x| dvector![x[0] * x[0] + x[1] * x[1] - 1.0],
        |x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
        Some(Box::new(|_| {
            vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])]
        })),
        dvector![0.0],
        dvector![0.0],
    )?
    .with_start(dvector![0.5, 0.5], dvector![0.0])
    .with_kkt_point(dvector![1.0, 0.0], dvector![0.5]))
}

/// `min 0.5 ||x||^2` subject to `sin(x1) + x2 = 0`; nonlinear equality with
/// the KKT point at the origin.
fn sinring() -> Result<ProblemSpec> {
    Ok(ProblemSpec::general(
        "sinring",
        2,
        1,
        |x| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        |x| dvector![x[0], x[1]],
        |_| DMatrix::identity(2, 2),
        |x| dvector![x[0].sin() + x[1]],
        |x| DMatrix::from_row_slice(1, 2, &[x[0].cos(), 1.0]),
        Some(Box::new(|x: &DVector<f64>| {
            vec![DMatrix::from_row_slice(2, 2, &[-x[0].sin(), 0.0, 0.0, 0.0])]
        })),
        dvector![0.0],
        dvector![0.0],
    )?
    .with_start(dvector![0.5, 0.5], dvector![0.0])
    .with_kkt_point(dvector![0.0, 0.0], dvector![0.0]))
}
