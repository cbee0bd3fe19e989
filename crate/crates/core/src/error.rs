//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CrpcaError>;

/// Everything that can go wrong across operators, denoisers, the iterative
/// engine, state evolution, and the convergence analysis.
///
/// The split matters to callers: configuration mistakes
/// (`DimensionMismatch`, `InvalidParameter`) are caller bugs, while the
/// numerical variants (`DegenerateExtrinsic`, `SvdFailure`,
/// `NonConvergence`, `NoUniqueFixedPoint`, `Numerical`) signal that a
/// well-formed computation could not be completed.
#[derive(Debug, thiserror::Error)]
pub enum CrpcaError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A denoiser's output was (numerically) a multiple of its input, so no
    /// extrinsic message can be formed: `‖post − a·in‖ ≈ 0` makes the
    /// rescaling coefficient undefined.
    #[error("degenerate extrinsic message: {0}")]
    DegenerateExtrinsic(String),

    #[error("SVD failed to converge on a {rows}x{cols} matrix")]
    SvdFailure { rows: usize, cols: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    /// A fixed-point equation has no unique attractive solution in the
    /// queried regime (sampling rate at or below the contraction threshold).
    #[error("no unique fixed point: {0}")]
    NoUniqueFixedPoint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CrpcaError {
    /// True for the variants that indicate a numerical failure at runtime
    /// rather than a malformed request. The CLI maps these to a distinct
    /// exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CrpcaError::DegenerateExtrinsic(_)
                | CrpcaError::SvdFailure { .. }
                | CrpcaError::NonConvergence { .. }
                | CrpcaError::NoUniqueFixedPoint(_)
                | CrpcaError::Numerical(_)
        )
    }
}
