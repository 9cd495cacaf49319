//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("zero-norm embedding row for entity {id}")]
    ZeroRow { id: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("pseudo-label round {round}: {source}")]
    PseudoRound { round: usize, source: Box<Error> },

    #[error("{axis} {index} has no positive mass after clamping; cannot rescale")]
    EmptyMarginal { axis: &'static str, index: usize },

    #[error("need at least {needed} positive pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("training diverged at {at}: loss is not finite")]
    Diverged { at: String },

    #[error("holdout of {requested} triples infeasible; at most {max_feasible} satisfy the coverage constraint")]
    InfeasibleSplit { requested: usize, max_feasible: usize },

    #[error("no pseudo edges present but {requested} pseudo samples requested")]
    NoPseudoEdges { requested: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("degenerate metric input: {0}")]
    DegenerateMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
