use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A density-ratio argument was zero, negative, or non-finite.
    #[error("ratio argument must be positive and finite, got {0}")]
    NonPositiveRatio(f64),

    /// A pointwise weight function was asked for on a batch-level divergence.
    #[error("{0} has no pointwise weight function; its weights are rank-defined on a batch")]
    BatchOnlySpec(&'static str),

    /// The divergence parameters violate their domain.
    #[error("invalid divergence spec: {0}")]
    InvalidSpec(String),

    /// Rho-mode normalization is undefined for sign-indefinite weight families.
    #[error("rho-mode batch weights are unsupported for {0}: the weights are not nonnegative, so normalizing by their sum is ill-defined")]
    UnsupportedRhoMode(&'static str),

    /// An input batch was empty.
    #[error("input batch must be nonempty")]
    EmptyBatch,

    /// An input contained NaN or infinite entries where finite values are required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The Hill estimator's order-statistics count is out of range.
    #[error("order statistics count k={k} out of range (need 2 <= k < n={n})")]
    OrderStatisticsOutOfRange { k: usize, n: usize },

    /// The top-k block of the sample is constant, so the Hill denominator is zero.
    #[error("top-{0} order statistics are all equal; Hill estimator denominator is zero")]
    DegenerateTail(usize),

    /// The supplied second derivative is negative somewhere on the grid.
    #[error("f'' is negative at mu={mu} (value {value}); the generator is not convex")]
    NonConvexGenerator { mu: f64, value: f64 },

    /// A scale parameter must be positive.
    #[error("scale parameter must be positive, got {0}")]
    NonPositiveScale(f64),

    /// Experiment configuration failed validation.
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    /// A reparameterization update was requested on a batch without pathwise data.
    #[error("batch carries no reparameterization samples; draw it pathwise or use the score-function update")]
    MissingReparamData,

    /// A serialized mixture record did not parse or violated its invariants.
    #[error("cannot parse mixture record: {0}")]
    MalformedMixture(String),

    /// File I/O failed, with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
