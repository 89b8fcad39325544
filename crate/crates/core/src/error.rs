use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at line {line}: key `{key}`: {msg}")]
    Config { line: usize, key: String, msg: String },

    #[error("invalid parameter `{name}`: {msg}")]
    Parameter { name: &'static str, msg: String },

    #[error("no operating point: {0}")]
    InfeasibleOperatingPoint(String),

    #[error("division by the zero rational")]
    DivisionByZero,

    #[error("evaluation at a pole, s = {0}")]
    Pole(Complex64),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("root finder did not converge for degree {0}")]
    RootsNotConverged(usize),

    #[error("unreliable winding: angle step {step:.3} rad at f = {f_hz} Hz")]
    UnreliableWinding { step: f64, f_hz: f64 },

    #[error("ambiguous boundary: verdict transitions at {0:?}")]
    AmbiguousBoundary(Vec<f64>),

    #[error("simulation diverged at t = {0} s")]
    Diverged(f64),

    #[error("spectral window quality: {0}")]
    WindowQuality(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parameter { .. } => 2,
            Error::Inconclusive(_) => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
