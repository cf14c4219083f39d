use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent sizes, strides or DFT lengths.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A value violates a type invariant (window tightness, finite inputs, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("instance error: {0}")]
    Instance(String),

    /// Overlap-add inversion is impossible because some samples are never covered by a window.
    #[error("inversion error: samples {uncovered:?} are not covered by any window position")]
    Inversion { uncovered: Vec<usize> },

    /// The circulant magnitude system is singular.
    #[error("ill-posed: DFT of |g|^2 vanishes at bin {bin} (|V| = {modulus:e})")]
    IllPosed { bin: usize, modulus: f64 },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    /// Some recovered magnitude is zero, so a phase difference cannot be isolated.
    #[error("signal vanishes at indices {indices:?}")]
    NonvanishingViolated { indices: Vec<usize> },

    /// gcd(N, W-1) != 1: the phase chain does not reach every sample.
    #[error("phase propagation incomplete: {} indices unreachable (gcd = {gcd})", unreached.len())]
    PropagationIncomplete { gcd: usize, unreached: Vec<usize> },

    #[error("invalid ambiguity construction: {0}")]
    ConstructionInvalid(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A solver stopped on its budget before meeting its threshold.
    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad user input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Geometry(_)
                | Error::Validation(_)
                | Error::Instance(_)
                | Error::UnsupportedGeometry(_)
                | Error::ConstructionInvalid(_)
                | Error::Config(_)
                | Error::Parse(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
