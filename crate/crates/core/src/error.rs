use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("unphysical state: {0}")]
    Unphysical(String),

    #[error("integration diverged at t = {t} us")]
    Diverged { t: f64 },

    #[error("normalization violated: {0}")]
    Normalization(String),

    #[error("degenerate parametrization: {0}")]
    Degenerate(String),

    #[error("optimizer diverged after {iterations} iterations (loss became non-finite)")]
    OptimizerDiverged {
        iterations: usize,
        /// Last iterate whose loss was finite.
        last_finite: Box<crate::fockspace::QuantumState<f64>>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml decode error: {0}")]
    TomlDecode(#[from] toml::de::Error),

    #[error("toml encode error: {0}")]
    TomlEncode(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by configuration or input files rather than by the numerics.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::Parameter(_)
                | Error::Config(_)
                | Error::Schedule(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::TomlDecode(_)
                | Error::TomlEncode(_)
        )
    }
}
