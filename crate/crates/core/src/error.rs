//! Crate-wide error type.

use crate::expr::Var;
use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Source text does not conform to the expression grammar.
    #[error("syntax error at byte {offset}: found {found}, expected {}", expected.join(" | "))]
    Syntax {
        offset: usize,
        found: String,
        expected: Vec<&'static str>,
    },

    /// Identifier that is neither `x<k>`/`v<k>` nor a declared parameter.
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },

    /// Evaluation left the domain of definition of an expression node.
    #[error("domain error in `{op}` (node {node}) on argument {arg}; bindings: {}",
            format_bindings(bindings))]
    Domain {
        op: &'static str,
        node: usize,
        arg: f64,
        bindings: Vec<(Var, f64)>,
    },

    /// A variable required for evaluation carries no binding.
    #[error("unbound variable `{0}` during evaluation")]
    UnboundVariable(Var),

    /// Model definition is malformed (dimension/variable mismatches etc.).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The velocity Hessian of L does not have signature (-,+,...,+).
    #[error("signature error at {at}: eigenvalues {eigenvalues:?} are not (-,+,...,+)")]
    Signature { at: String, eigenvalues: Vec<f64> },

    /// A point-velocity pair lies outside the declared model domain.
    #[error("({x:?}, {v:?}) is outside the declared model domain")]
    OutsideDomain { x: Vec<f64>, v: Vec<f64> },

    /// Too few in-domain samples were found for a sampling diagnostic.
    #[error("found only {found} in-domain samples, need at least {need}")]
    InsufficientSamples { found: usize, need: usize },

    /// Newton iteration for the Legendre transform failed or landed outside
    /// the future cone: the covector is not in the polar cone.
    #[error("covector {omega:?} is not in the polar cone ({reason})")]
    NotInPolarCone { omega: Vec<f64>, reason: String },

    /// `-df` is not in the polar cone, so `f` is not temporal at this point.
    #[error("function is not temporal at {x:?}: {reason}")]
    NotTemporal { x: Vec<f64>, reason: String },

    /// (N, epsilon) violates the admissible epsilon-range.
    #[error("epsilon range violated: {0}")]
    OutOfEpsilonRange(String),

    /// A geodesic argument was expected to be of unit speed, F(v) = 1.
    #[error("geodesic is not unit speed: F = {f}")]
    NotUnitSpeed { f: f64 },

    /// The curvature hypothesis of an inequality fails at a sampled direction.
    #[error("curvature hypothesis violated at sample {at}: {value}")]
    InapplicableCurvature { at: String, value: f64 },

    /// Trajectory left the declared model domain during integration.
    #[error("trajectory left the model domain at t = {t}")]
    LeftDomain { t: f64 },

    /// Adaptive integrator step size fell below the minimum.
    #[error("integrator step failure at t = {t} (step {step:.3e} below minimum)")]
    StepFailure { t: f64, step: f64 },

    /// Shooting/Newton systems became numerically singular.
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    /// Jacobi frame vectors became numerically dependent.
    #[error("frame singular at t = {t} (condition number {cond:.3e})")]
    FrameSingular { t: f64, cond: f64 },

    /// Line validation failed the straightness test.
    #[error("not a straight line: tau(eta({s}), eta({t})) defect {defect:.3e}")]
    NotStraight { s: f64, t: f64, defect: f64 },

    /// Busemann horizon extrapolation did not settle.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Asymptote velocities converged to a non-timelike limit.
    #[error("asymptote limit is not timelike at {x:?}")]
    NonTimelikeLimit { x: Vec<f64> },

    /// Busemann field grid is too coarse for the requested analysis.
    #[error("grid too coarse: step {step} exceeds {max_step}")]
    GridTooCoarse { step: f64, max_step: f64 },

    /// Model file could not be parsed.
    #[error("model file error at byte {offset}: {message}")]
    ModelFile { offset: usize, message: String },
}

fn format_bindings(bindings: &[(Var, f64)]) -> String {
    bindings
        .iter()
        .map(|(var, value)| format!("{var}={value}"))
        .collect::<Vec<_>>()
        .join(", ")
}
