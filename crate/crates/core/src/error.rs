use thiserror::Error;

/// Errors produced while loading, transforming, or analyzing a game.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("kernel row not stochastic: state {state}, actions ({a1}, {a2}), sum {sum}")]
    RowNotStochastic {
        state: String,
        a1: String,
        a2: String,
        sum: String,
    },

    #[error("absorbing state {0} has no self-loop under action pair ({1}, {2})")]
    AbsorbingNotSelfLoop(String, String, String),

    #[error("absorbing state {0} lacks a declared payoff pair")]
    MissingAbsorbingPayoff(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("objective not shift-invariant: {0}")]
    NotShiftInvariant(String),

    #[error("objective lacks the data required here: {0}")]
    ObjectiveData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("history contains a zero-probability transition at stage {0}")]
    ZeroProbabilityTransition(usize),

    #[error("empty matrix game")]
    EmptyMatrix,

    #[error("linear program infeasible or unbounded: {0}")]
    LinearProgram(String),

    #[error("set is not contained in the nonabsorbing states: {0}")]
    NotNonabsorbing(String),

    #[error("set fails the closure precondition: {0}")]
    NotClosed(String),

    #[error("set fails the communication precondition: {0}")]
    NotCommunicating(String),

    #[error("exit-selection dichotomy violated for set {set:?}: {detail}")]
    DichotomyViolated { set: Vec<String>, detail: String },

    #[error("value comparison check failed: {0}")]
    ValueCheck(String),

    #[error("strategy trimming removed the whole support at state {0}")]
    EmptyTrimmedSupport(String),

    #[error("value oracle unavailable: {0}")]
    ValueOracle(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
