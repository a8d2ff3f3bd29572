//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: invalid argument: {message}")]
    Argument {
        module: &'static str,
        message: String,
    },

    #[error("{module}: domain error: {message}")]
    Domain {
        module: &'static str,
        message: String,
    },

    #[error("sphgrid: grid bandlimit {grid} is too coarse for requested bandlimit {requested}")]
    Resolution { grid: usize, requested: usize },

    #[error(
        "synthesis: radial moment g_(1,{ell}+1/2)(k={k}, b={b}) = {value:.3e} is below the \
         singular-denominator threshold; retry with b = {retry_lo:.6} or b = {retry_hi:.6}"
    )]
    SingularDenominator {
        ell: usize,
        k: f64,
        b: f64,
        value: f64,
        retry_lo: f64,
        retry_hi: f64,
    },

    #[error(
        "potential: denominator u0 - Vh falls below tau = {tau:.3e} at {count} node(s) \
         (min |u0 - Vh| = {min_abs:.3e}); perturb h before recovering q"
    )]
    SmallDenominator {
        tau: f64,
        min_abs: f64,
        count: usize,
    },

    #[error("potential: perturbation did not reach an admissible h after {retries} scalings (last eta = {eta:.3e})")]
    PerturbationFailed { retries: usize, eta: f64 },

    #[error(
        "potential: density is not realizable with soft particles on {fraction:.1}% of the volume \
         (negative or complex N); supply an impedance to realize complex densities"
    )]
    Unrealizable { fraction: f64 },

    #[error("{module}: iterative solver did not converge ({iterations} iterations, relative residual {residual:.3e})")]
    Convergence {
        module: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{module}: problem size {size} exceeds the dense-solve cap {cap}")]
    Resource {
        module: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("{module}: singular linear system ({message})")]
    Singular {
        module: &'static str,
        message: String,
    },

    #[error("capacitance: invalid mesh: {0}")]
    Mesh(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn argument(module: &'static str, message: impl Into<String>) -> Self {
        Error::Argument {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn domain(module: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            module,
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
