use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("no negative eigenvalue among the {computed} computed modes; increase the mode count")]
    AllModesUnstable { computed: usize },

    #[error("lambda = {lambda} is a critical length (k = {k}, l = {l}); boundary pair is not stabilizable")]
    CriticalLength { lambda: f64, k: u32, l: u32 },

    #[error("pair (A, B) is not controllable: uncontrollable eigenvalues {0:?}")]
    NotStabilizable(Vec<f64>),

    #[error("certificate construction failed: {0}")]
    CertificateFailure(String),

    #[error("spectral gap too small: first tail eigenvalue {0} is not negative")]
    GapTooSmall(f64),

    #[error("blow-up at t = {time}: H2 norm {norm:e} exceeds threshold {threshold:e}")]
    BlowUp {
        time: f64,
        norm: f64,
        threshold: f64,
    },

    #[error("monitor channel `{channel}` is not positive at t = {time}")]
    NonPositiveChannel { channel: String, time: f64 },

    #[error("Gronwall bound expired at t = {time}: w(t) = {w} <= 0")]
    BoundExpired { time: f64, w: f64 },

    #[error("verification failed: {}", .0.join(", "))]
    VerificationFailed(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for input errors, 3 for numerical failures and
    /// 4 for control-theoretic infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. }
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::AllModesUnstable { .. } => 2,
            Error::ConvergenceFailure(_)
            | Error::CertificateFailure(_)
            | Error::BlowUp { .. }
            | Error::NonPositiveChannel { .. }
            | Error::BoundExpired { .. }
            | Error::VerificationFailed(_) => 3,
            Error::CriticalLength { .. } | Error::NotStabilizable(_) | Error::GapTooSmall(_) => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
