use thiserror::Error;

/// Errors raised by the toolkit. The variants group into three families that
/// the CLI maps to exit codes: structural (bad input), numeric infeasibility,
/// and integration failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("field `{label}`: jet order {requested} requested but only {available} available")]
    Capability {
        label: String,
        requested: usize,
        available: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid bracket word `{word}`: {reason}")]
    InvalidWord { word: String, reason: String },

    #[error("bracket depth {depth} exceeds the cap {cap}; raise the cap explicitly")]
    DepthCap { depth: usize, cap: usize },

    #[error("parse error at offset {offset} in `{source_text}`: {message}")]
    Parse {
        source_text: String,
        offset: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("Hermite order {m} exceeds the cap {cap}")]
    HermiteCap { m: usize, cap: usize },

    #[error("trajectory left the guard box at t = {t:.6} (point {point:?})")]
    Domain { t: f64, point: Vec<f64> },

    #[error("non-finite state at t = {t:.6}; the step policy is too coarse for this field")]
    Stiffness { t: f64 },

    #[error("step budget exceeded: {required} steps needed for max frequency {frequency:.3e}, budget {budget}")]
    StepBudget { required: u64, budget: u64, frequency: f64 },

    #[error("at theta = {theta}: {source}")]
    AtNode {
        theta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("reduction with epsilon = {epsilon}: {source}")]
    AtEpsilon {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("points {i} and {j} collide (distance {distance:.3e} below margin {margin:.1e}); the tuple lies on the collision set Δ^N")]
    Degenerate {
        i: usize,
        j: usize,
        distance: f64,
        margin: f64,
    },

    #[error("generator approximation infeasible at {} node(s); first: node {} (t = {:.4}), residual {:.3e}",
        .nodes.len(), .nodes[0].index, .nodes[0].time, .nodes[0].residual)]
    Infeasible { nodes: Vec<InfeasibleNode> },

    #[error("reduction plan error: {0}")]
    Plan(String),

    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InfeasibleNode {
    pub index: usize,
    pub time: f64,
    pub residual: f64,
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Infeasible,
    Integration,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain { .. } | Error::Stiffness { .. } | Error::StepBudget { .. } => ErrorClass::Integration,
            Error::Degenerate { .. } | Error::Infeasible { .. } | Error::Plan(_) => ErrorClass::Infeasible,
            Error::AtNode { source, .. } | Error::AtEpsilon { source, .. } => source.class(),
            _ => ErrorClass::Input,
        }
    }

    pub(crate) fn at_node(self, theta: f64) -> Error {
        Error::AtNode {
            theta,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
