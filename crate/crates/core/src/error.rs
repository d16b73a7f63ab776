use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("resolution too coarse: h = {h} must be < delta/2 = {}", delta / 2.0)]
    Resolution { h: f64, delta: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("instance too large: {count} {what} exceeds the limit of {limit}")]
    Size { what: &'static str, count: usize, limit: usize },

    #[error("unsupported exponent p = {0} (this routine requires p = 2)")]
    Exponent(f64),

    #[error("k-monotonicity violated at t = {t}, seed = {seed}: {detail}")]
    Monotonicity { t: f64, seed: u64, detail: String },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
