use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("zero polynomial has no root set")]
    ZeroPolynomial,

    #[error("division by the zero rational function")]
    DivisionByZero,

    #[error("rational function has an identically zero denominator")]
    ZeroDenominator,

    #[error("evaluation at a pole: s = {s} coincides with pole {pole}")]
    EvaluationAtPole { s: Complex64, pole: Complex64 },

    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenNoConvergence(usize),

    #[error("invalid converter parameter {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("buck cannot step up: v_ref = {v_ref} V must be below v_in = {v_in} V")]
    CannotStepUp { v_ref: f64, v_in: f64 },

    #[error("{0}")]
    Undefined(String),

    #[error("degenerate controller: kp and ki are both zero")]
    DegenerateController,

    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),

    #[error("winding number undefined: {0}")]
    WindingUndefined(String),

    #[error("invalid cascade: {0}")]
    InvalidCascade(String),

    #[error("minor-loop argument inapplicable: {0}")]
    MinorLoopInapplicable(String),

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("trace too short: {0}")]
    TraceTooShort(String),
}
