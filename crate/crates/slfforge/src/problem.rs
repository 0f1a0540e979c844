//! Problem data: cost and constraint evaluators with derivatives, bounds,
//! KKT target-set residuals and derivative validation.
//!
//! A problem is
//!
//! ```text
//!     minimize g0(x)   subject to   gL <= g(x) <= gU
//! ```
//!
//! with `x` of dimension `n` and `g` of dimension `m`. Rows with equal bounds
//! are equality constraints. Evaluators must be pure; a [`ProblemSpec`] may be
//! shared by concurrent solver runs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::LiftedState;
use crate::error::{Error, Result};

type ScalarFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type MatrixListFn = Box<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Structural flags derived from the problem data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct KindFlags {
    /// Every constraint row has equal lower and upper bound (vacuously true
    /// for m = 0).
    pub is_equality_only: bool,
    /// Linear cost and affine constraints (all Hessians identically zero).
    pub is_lp: bool,
    /// Quadratic cost and affine constraints; the jump engine uses this to
    /// minimize the line function in closed form.
    pub is_quadratic: bool,
}

/// A constrained optimization problem with derivative evaluators.
pub struct ProblemSpec {
    name: String,
    n: usize,
    m: usize,
    cost: ScalarFn,
    cost_grad: VectorFn,
    cost_hess: MatrixFn,
    cons: VectorFn,
    cons_jac: MatrixFn,
    cons_hess: Option<MatrixListFn>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    flags: KindFlags,
    default_start: (DVector<f64>, DVector<f64>),
    kkt_point: Option<(DVector<f64>, DVector<f64>)>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("flags", &self.flags)
            .finish()
    }
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

fn validate_bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<()> {
    for i in 0..lower.len() {
        if lower[i] > upper[i] {
            return Err(Error::InvalidProblem(format!(
                "lower bound exceeds upper bound in row {i}: {} > {}",
                lower[i], upper[i]
            )));
        }
        if lower[i] == f64::NEG_INFINITY && upper[i] == f64::INFINITY {
            return Err(Error::InvalidProblem(format!(
                "row {i} has infinite lower and upper bound; the row is vacuous"
            )));
        }
        if lower[i].is_nan() || upper[i].is_nan() {
            return Err(Error::InvalidProblem(format!("NaN bound in row {i}")));
        }
    }
    Ok(())
}

impl ProblemSpec {
    /// Builds a problem from general closures. `cons_hess` may be omitted, in
    /// which case constraint Hessians fall back to central finite differences
    /// of the constraint Jacobian.
    #[allow(clippy::too_many_arguments)]
    pub fn general(
        name: &str,
        n: usize,
        m: usize,
        cost: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        cost_grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        cost_hess: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        cons: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        cons_jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        cons_hess: Option<MatrixListFn>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidProblem("n must be at least 1".into()));
        }
        check_dim("lower bound length", m, lower.len())?;
        check_dim("upper bound length", m, upper.len())?;
        validate_bounds(&lower, &upper)?;
        let is_equality_only = (0..m).all(|i| lower[i] == upper[i]);
        Ok(Self {
            name: name.to_string(),
            n,
            m,
            cost: Box::new(cost),
            cost_grad: Box::new(cost_grad),
            cost_hess: Box::new(cost_hess),
            cons: Box::new(cons),
            cons_jac: Box::new(cons_jac),
            cons_hess,
            lower,
            upper,
            flags: KindFlags {
                is_equality_only,
                is_lp: false,
                is_quadratic: false,
            },
            default_start: (DVector::zeros(n), DVector::zeros(m)),
            kkt_point: None,
        })
    }

    /// Builds a problem with quadratic cost `0.5 x'Qx + c'x` and affine
    /// constraints `g(x) = Ax - b`. Rejects a non-symmetric `Q`.
    pub fn quadratic(
        name: &str,
        q_mat: DMatrix<f64>,
        c: DVector<f64>,
        a_mat: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        let m = b.len();
        if n == 0 {
            return Err(Error::InvalidProblem("n must be at least 1".into()));
        }
        check_dim("Q rows", n, q_mat.nrows())?;
        check_dim("Q cols", n, q_mat.ncols())?;
        check_dim("A rows", m, a_mat.nrows())?;
        if m > 0 {
            check_dim("A cols", n, a_mat.ncols())?;
        }
        check_dim("lower bound length", m, lower.len())?;
        check_dim("upper bound length", m, upper.len())?;
        validate_bounds(&lower, &upper)?;
        let scale = q_mat.amax().max(1.0);
        if (&q_mat - q_mat.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidProblem("Q is not symmetric".into()));
        }
        let is_lp = q_mat.amax() == 0.0;
        let is_equality_only = (0..m).all(|i| lower[i] == upper[i]);

        let a_cols = if m > 0 { a_mat.ncols() } else { n };
        let q1 = q_mat.clone();
        let q2 = q_mat.clone();
        let q3 = q_mat;
        let c1 = c.clone();
        let c2 = c;
        let a1 = a_mat.clone();
        let a2 = a_mat;
        let b1 = b;
        let m_ = m;
        Ok(Self {
            name: name.to_string(),
            n,
            m,
            cost: Box::new(move |x| 0.5 * (&q1 * x).dot(x) + c1.dot(x)),
            cost_grad: Box::new(move |x| &q2 * x + &c2),
            cost_hess: Box::new(move |_| q3.clone()),
            cons: Box::new(move |x| {
                if m_ == 0 {
                    DVector::zeros(0)
                } else {
                    &a1 * x - &b1
                }
            }),
            cons_jac: Box::new(move |_| a2.clone()),
            cons_hess: Some(Box::new(move |_| {
                (0..m_).map(|_| DMatrix::zeros(a_cols, a_cols)).collect()
            })),
            lower,
            upper,
            flags: KindFlags {
                is_equality_only,
                is_lp,
                is_quadratic: true,
            },
            default_start: (DVector::zeros(n), DVector::zeros(m)),
            kkt_point: None,
        })
    }

    pub fn with_start(mut self, q1: DVector<f64>, q2: DVector<f64>) -> Self {
        assert_eq!(q1.len(), self.n);
        assert_eq!(q2.len(), self.m);
        self.default_start = (q1, q2);
        self
    }

    /// Records a hand-solved KKT point and multiplier for the corpus.
    pub fn with_kkt_point(mut self, q1: DVector<f64>, q2: DVector<f64>) -> Self {
        assert_eq!(q1.len(), self.n);
        assert_eq!(q2.len(), self.m);
        self.kkt_point = Some((q1, q2));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn flags(&self) -> KindFlags {
        self.flags
    }
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }
    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }
    pub fn default_start(&self) -> (DVector<f64>, DVector<f64>) {
        self.default_start.clone()
    }
    pub fn kkt_point(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        self.kkt_point.clone()
    }

    pub fn cost_value(&self, q1: &DVector<f64>) -> Result<f64> {
        check_dim("cost argument", self.n, q1.len())?;
        Ok((self.cost)(q1))
    }

    pub fn cost_gradient(&self, q1: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("gradient argument", self.n, q1.len())?;
        Ok((self.cost_grad)(q1))
    }

    pub fn cost_hessian(&self, q1: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("hessian argument", self.n, q1.len())?;
        Ok((self.cost_hess)(q1))
    }

    pub fn constraints(&self, q1: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("constraint argument", self.n, q1.len())?;
        Ok((self.cons)(q1))
    }

    pub fn constraint_jacobian(&self, q1: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("jacobian argument", self.n, q1.len())?;
        if self.m == 0 {
            return Ok(DMatrix::zeros(0, self.n));
        }
        Ok((self.cons_jac)(q1))
    }

    /// Constraint Hessians, one n-by-n matrix per row of `g`. Falls back to
    /// central finite differences of the analytic Jacobian when the problem
    /// carries no Hessian evaluator.
    pub fn constraint_hessians(&self, q1: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        check_dim("constraint hessian argument", self.n, q1.len())?;
        if self.m == 0 {
            return Ok(Vec::new());
        }
        if let Some(ch) = &self.cons_hess {
            return Ok(ch(q1));
        }
        let n = self.n;
        let mut hessians = vec![DMatrix::zeros(n, n); self.m];
        let mut x = q1.clone();
        for k in 0..n {
            let delta = f64::EPSILON.cbrt() * (1.0 + q1[k].abs());
            x[k] = q1[k] + delta;
            let jp = (self.cons_jac)(&x);
            x[k] = q1[k] - delta;
            let jm = (self.cons_jac)(&x);
            x[k] = q1[k];
            for (i, h) in hessians.iter_mut().enumerate() {
                for j in 0..n {
                    h[(j, k)] = (jp[(i, j)] - jm[(i, j)]) / (2.0 * delta);
                }
            }
        }
        for h in &mut hessians {
            let sym = (&*h + h.transpose()) * 0.5;
            h.copy_from(&sym);
        }
        Ok(hessians)
    }

    /// Gradient of the generalized Lagrangian
    /// `L(q0, q1, q2) = q0 g0(q1) + <q2, g(q1)>` with respect to `q1`.
    pub fn lagrangian_grad(
        &self,
        q0: f64,
        q1: &DVector<f64>,
        q2: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("lagrangian_grad q1", self.n, q1.len())?;
        check_dim("lagrangian_grad q2", self.m, q2.len())?;
        let mut grad = self.cost_gradient(q1)? * q0;
        if self.m > 0 {
            grad += self.constraint_jacobian(q1)?.transpose() * q2;
        }
        Ok(grad)
    }

    /// Hessian of the generalized Lagrangian with respect to `q1`,
    /// symmetrized exactly.
    pub fn lagrangian_hess(
        &self,
        q0: f64,
        q1: &DVector<f64>,
        q2: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        check_dim("lagrangian_hess q1", self.n, q1.len())?;
        check_dim("lagrangian_hess q2", self.m, q2.len())?;
        let mut hess = self.cost_hessian(q1)? * q0;
        if self.m > 0 {
            let cons_hessians = self.constraint_hessians(q1)?;
            for (i, h) in cons_hessians.iter().enumerate() {
                hess += h * q2[i];
            }
        }
        Ok((&hess + hess.transpose()) * 0.5)
    }

    /// Distance to the KKT target set, split into its three components.
    ///
    /// A row is treated as active at a bound when `|q4_i - bound|` is within
    /// `1e-8 * (1 + |bound|)`.
    pub fn target_residual(&self, q: &LiftedState) -> Result<TargetResidual> {
        if q.q0 <= 0.0 {
            return Err(Error::NormalizationViolated { q0: q.q0 });
        }
        check_dim("target_residual q3", self.n, q.q3.len())?;
        check_dim("target_residual q4", self.m, q.q4.len())?;
        let grad_norm = q.q3.amax();
        let mut bound_violation = 0.0f64;
        let mut comp_violation = 0.0f64;
        for i in 0..self.m {
            let (lo, hi, v, mult) = (self.lower[i], self.upper[i], q.q4[i], q.q2[i]);
            bound_violation = bound_violation
                .max((lo - v).max(0.0))
                .max((v - hi).max(0.0));
            if lo == hi {
                continue; // equality row: multiplier unrestricted
            }
            let at_lower = lo.is_finite() && (v - lo).abs() <= 1e-8 * (1.0 + lo.abs());
            let at_upper = hi.is_finite() && (v - hi).abs() <= 1e-8 * (1.0 + hi.abs());
            let c = match (at_lower, at_upper) {
                (true, true) => 0.0,
                (true, false) => mult.max(0.0),
                (false, true) => (-mult).max(0.0),
                (false, false) => {
                    if v < lo {
                        mult.max(0.0)
                    } else if v > hi {
                        (-mult).max(0.0)
                    } else {
                        mult.abs()
                    }
                }
            };
            comp_violation = comp_violation.max(c);
        }
        let total = grad_norm.max(bound_violation).max(comp_violation);
        Ok(TargetResidual {
            grad_norm,
            bound_violation,
            comp_violation,
            total,
        })
    }

    /// Cross-checks the analytic derivatives against central finite
    /// differences of step `delta`. Passes when the worst relative error is
    /// at most `100 * delta`.
    pub fn validate_derivatives(&self, q1: &DVector<f64>, delta: f64) -> Result<DerivativeReport> {
        assert!(delta > 0.0, "finite-difference step must be positive");
        check_dim("validate_derivatives q1", self.n, q1.len())?;
        let n = self.n;
        let rel = |a: f64, fd: f64| (a - fd).abs() / (1.0 + a.abs());
        let finite = |v: f64, op: &'static str| -> Result<f64> {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::EvaluatorFailure { op, at: None })
            }
        };

        let grad = self.cost_gradient(q1)?;
        let jac = self.constraint_jacobian(q1)?;
        let probe_q2 = DVector::from_element(self.m, 1.0);
        let lhess = self.lagrangian_hess(1.0, q1, &probe_q2)?;

        let mut cost_grad_error = 0.0f64;
        let mut cons_jac_error = 0.0f64;
        let mut lagrangian_hess_error = 0.0f64;
        let mut x = q1.clone();
        for k in 0..n {
            x[k] = q1[k] + delta;
            let fp = finite(self.cost_value(&x)?, "cost")?;
            let gp = self.constraints(&x)?;
            let lp = self.lagrangian_grad(1.0, &x, &probe_q2)?;
            x[k] = q1[k] - delta;
            let fm = finite(self.cost_value(&x)?, "cost")?;
            let gm = self.constraints(&x)?;
            let lm = self.lagrangian_grad(1.0, &x, &probe_q2)?;
            x[k] = q1[k];

            cost_grad_error = cost_grad_error.max(rel(grad[k], (fp - fm) / (2.0 * delta)));
            for i in 0..self.m {
                let fd = (gp[i] - gm[i]) / (2.0 * delta);
                if !fd.is_finite() {
                    return Err(Error::EvaluatorFailure {
                        op: "constraints",
                        at: None,
                    });
                }
                cons_jac_error = cons_jac_error.max(rel(jac[(i, k)], fd));
            }
            for j in 0..n {
                let fd = (lp[j] - lm[j]) / (2.0 * delta);
                lagrangian_hess_error = lagrangian_hess_error.max(rel(lhess[(j, k)], fd));
            }
        }
        let max_error = cost_grad_error
            .max(cons_jac_error)
            .max(lagrangian_hess_error);
        let threshold = 100.0 * delta;
        Ok(DerivativeReport {
            cost_grad_error,
            cons_jac_error,
            lagrangian_hess_error,
            max_error,
            threshold,
            pass: max_error <= threshold,
        })
    }
}

/// Componentwise distance to the KKT target set.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TargetResidual {
    /// Infinity norm of the Lagrangian-gradient coordinate q3.
    pub grad_norm: f64,
    /// Infinity-norm distance of the constraint values to their bounds.
    pub bound_violation: f64,
    /// Worst complementarity violation over the inequality rows.
    pub comp_violation: f64,
    /// Maximum of the three components.
    pub total: f64,
}

/// Result of [`ProblemSpec::validate_derivatives`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DerivativeReport {
    pub cost_grad_error: f64,
    pub cons_jac_error: f64,
    pub lagrangian_hess_error: f64,
    pub max_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Dense QP/LP problem file:
/// `{"n", "m", "Q", "c", "A", "b", "gL", "gU"}` with row-major matrices and
/// `"inf"` / `"-inf"` string sentinels for infinite bounds.
#[derive(Deserialize)]
pub(crate) struct QpFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(rename = "gL")]
    pub g_l: Vec<BoundEntry>,
    #[serde(rename = "gU")]
    pub g_u: Vec<BoundEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
pub(crate) enum BoundEntry {
    Number(f64),
    Sentinel(String),
}

impl BoundEntry {
    fn value(&self) -> Result<f64> {
        match self {
            BoundEntry::Number(v) => Ok(*v),
            BoundEntry::Sentinel(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(Error::InvalidProblem(format!(
                    "unrecognized bound sentinel '{other}' (use \"inf\" or \"-inf\")"
                ))),
            },
        }
    }
}

pub(crate) fn problem_from_qp_file(name: &str, file: QpFile) -> Result<ProblemSpec> {
    let dense = |rows: &[Vec<f64>], nr: usize, nc: usize, what: &str| -> Result<DMatrix<f64>> {
        if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
            return Err(Error::InvalidProblem(format!(
                "{what} must be a {nr}x{nc} row-major matrix"
            )));
        }
        Ok(DMatrix::from_row_iterator(
            nr,
            nc,
            rows.iter().flat_map(|r| r.iter().copied()),
        ))
    };
    if file.c.len() != file.n {
        return Err(Error::InvalidProblem("c must have length n".into()));
    }
    if file.b.len() != file.m || file.g_l.len() != file.m || file.g_u.len() != file.m {
        return Err(Error::InvalidProblem("b, gL, gU must have length m".into()));
    }
    let q = dense(&file.q, file.n, file.n, "Q")?;
    let a = if file.m == 0 {
        DMatrix::zeros(0, file.n)
    } else {
        dense(&file.a, file.m, file.n, "A")?
    };
    let lower = DVector::from_iterator(
        file.m,
        file.g_l
            .iter()
            .map(|e| e.value())
            .collect::<Result<Vec<_>>>()?,
    );
    let upper = DVector::from_iterator(
        file.m,
        file.g_u
            .iter()
            .map(|e| e.value())
            .collect::<Result<Vec<_>>>()?,
    );
    ProblemSpec::quadratic(
        name,
        q,
        DVector::from_vec(file.c),
        a,
        DVector::from_vec(file.b),
        lower,
        upper,
    )
}
