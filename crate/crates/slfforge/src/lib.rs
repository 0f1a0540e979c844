//! slfforge synthesizes convergent optimization algorithms instead of
//! hard-coding them: pick a search Lyapunov function (SLF) — a nonnegative
//! merit function that vanishes exactly on the KKT target set — and a compact
//! control set, and the generator derives the search direction from a
//! pointwise minimum principle and the step length from a maximal SLF
//! decrement. Different (SLF, control set) pairs reproduce familiar methods:
//! a quadratic SLF with the squared KKT-matrix metric yields Newton/SQP, the
//! KKT matrix itself as a pseudometric yields the Arrow-Hurwicz-Uzawa flow,
//! the Hessian metric with an l1 SLF yields sign gradient descent, and a
//! velocity-augmented SLF with a rate-constrained controller yields an
//! accelerated (momentum) method.
//!
//! The iterates form a polygonal arc in a lifted space carrying the
//! optimization variable, the multipliers, the Lagrangian gradient, the
//! constraint values and the cost. Every jump is an Euler move in the free
//! coordinates followed by an exact recomputation of the dependent ones, so
//! each iterate sits on the defining hypersurface to machine precision and
//! the SLF value decreases strictly until it reaches the stopping tolerance.

pub mod accel;
pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod generator;
pub mod jump;
pub mod problem;
pub mod slf;
pub mod stability;

pub use corpus::{load_problem, registry_names};
pub use dynamics::{ControlJacobian, ControlVector, LiftedState, StateRate};
pub use error::Error;
pub use generator::{GeneratorConfig, IterateRecord, Outcome, Recipe, Trace, TraceLevel};
pub use jump::{JumpConfig, JumpMode, JumpResult};
pub use problem::{DerivativeReport, KindFlags, ProblemSpec, TargetResidual};
pub use slf::{ControlSetSpec, DirectionResult, MetricRecipe, RateSpec, SlfKind, SlfSpec};
pub use stability::SpectralReport;

/// Default stopping tolerance: the square root of machine precision.
pub fn default_epsilon() -> f64 {
    f64::EPSILON.sqrt()
}
