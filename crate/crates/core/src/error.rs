use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coincident positions ({x}, {y}): path loss is singular")]
    CoincidentPositions { x: f64, y: f64 },

    #[error("{what} = {value:e} outside domain [{lo:e}, {hi:e})")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error(
        "quadrature did not converge on [{lo:e}, {hi:e}]: estimate {estimate:e}, \
         error {error:e}, {intervals} intervals"
    )]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("no interference mass over the integration region")]
    ZeroDenominator,

    #[error("protocol error: event {event} is illegal in phase {phase}")]
    Protocol { phase: String, event: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
