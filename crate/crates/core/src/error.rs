use thiserror::Error;

/// Errors surfaced by the simulation and optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not match.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A coefficient or decision variable violated its constraint set.
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// An operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// The per-cluster QoS targets cannot be met with any power split.
    #[error("infeasible power allocation in cluster {cluster}: load {load:.6} > 1")]
    InfeasiblePower { cluster: usize, load: f64 },

    /// The conic solver could not produce a certified solution.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Invalid configuration file or parameter combination.
    #[error("invalid configuration: {0}")]
    Config(String),
}
