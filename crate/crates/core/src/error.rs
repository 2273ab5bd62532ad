use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite {what} at t={t}, x={x:?}")]
    NonFinite { what: String, t: f64, x: Vec<f64> },

    #[error(
        "numerical conjugation did not converge after {iters} iterations \
         (achieved bracket width {width:.3e})"
    )]
    Conjugation { width: f64, iters: usize },

    #[error("{flagged} of {total} simulated paths flagged non-finite (limit {limit_pct}%)")]
    TooManyFlaggedPaths {
        flagged: usize,
        total: usize,
        limit_pct: f64,
    },

    #[error("field is not in L^g: modular integral {modular:.3e} still exceeds 1 at scale {cap:.3e}")]
    NotInLg { modular: f64, cap: f64 },

    #[error(
        "dual ascent did not converge: gradient norm {grad_norm:.3e} > tol {tol:.3e} \
         after {iters} iterations over {restarts} restarts"
    )]
    DualNonConvergence {
        grad_norm: f64,
        tol: f64,
        iters: usize,
        restarts: usize,
    },

    #[error("empty measure slice")]
    EmptySlice,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sigma is numerically singular at t={t}, x={x:?} (condition estimate {cond:.3e})")]
    SingularSigma { t: f64, x: Vec<f64>, cond: f64 },

    #[error("config error at `{key}`: {expected}")]
    Schema { key: String, expected: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn schema(key: impl Into<String>, expected: impl Into<String>) -> Self {
        Error::Schema {
            key: key.into(),
            expected: expected.into(),
        }
    }
}
