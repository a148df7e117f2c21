use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A harmonic structure or fractafold description violates an invariant.
    #[error("invalid structure: {0}")]
    Structure(String),

    /// Geometric preconditions not met (wrong cell, vertex not on boundary, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Input validation outside of structure/geometry (bad letters, level mismatch, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A linear system that should be solvable was singular or ill-conditioned.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Rank-deficient constraint system; carries diagnostics for retry decisions.
    #[error("rank-deficient constraint system: {detail} (rank {rank} of {need}, headroom {headroom})")]
    RankDeficient {
        detail: String,
        rank: usize,
        need: usize,
        headroom: usize,
    },

    /// A contract violation of a documented precondition (e.g. mean-zero source on a
    /// boundaryless fractafold).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Graph is disconnected where a path is required.
    #[error("no path: {0}")]
    NoPath(String),

    #[error("unsupported distribution class: {0}")]
    UnsupportedClass(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
