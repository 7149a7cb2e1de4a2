use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid weight family: {0}")]
    InvalidFamily(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("table covers (L, N) <= ({l_max}, {n_max}), requested ({l}, {n})")]
    TableTooSmall {
        l_max: usize,
        n_max: usize,
        l: usize,
        n: usize,
    },

    /// Z_{L,N} = 0: no configuration with positive weight carries this mass.
    #[error("no configuration of {n} particles on {l} sites has positive weight")]
    EmptyEnsemble { l: usize, n: usize },

    #[error("fugacity {phi} outside the convergence domain: {reason}")]
    OutOfDomain { phi: f64, reason: String },

    #[error("density {rho} is supercritical (sup of the density map is {sup})")]
    Supercritical { rho: f64, sup: f64 },

    #[error("degenerate variance; {0}")]
    Degenerate(String),

    #[error("state space has {size} configurations, above the exact-mode cap {cap}; use mc mode")]
    TooLarge { size: f64, cap: f64 },

    #[error("cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::InvalidFamily(_)
                | Error::IndexOutOfRange { .. }
                | Error::TableTooSmall { .. }
                | Error::TooLarge { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
