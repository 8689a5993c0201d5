use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("command leaves the drive rail: extremum {extremum:.3} V with bias {bias:.1} V and margin {margin:.1} V")]
    RailViolation { extremum: f64, bias: f64, margin: f64 },

    #[error("sample rate {rate} Hz is below twice the flap frequency {frequency} Hz")]
    Aliasing { rate: f64, frequency: f64 },

    #[error("gimbal angle {theta:.4} rad left the model envelope at t = {t:.4} s")]
    Divergence { theta: f64, t: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("trace is not a monotone decay: {0}")]
    Underdamped(String),

    #[error(
        "trim search did not converge after {iterations} iterations \
         (best δA = {best_delta_a:.2} V, V_o = {best_offset:.2} V, \
         residual roll {residual_roll:.3} µNm, pitch {residual_pitch:.3} µNm)"
    )]
    TrimNotConverged {
        iterations: usize,
        best_delta_a: f64,
        best_offset: f64,
        residual_roll: f64,
        residual_pitch: f64,
    },

    #[error("malformed dataset: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
