//! Error taxonomy shared across the workspace.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid structural configuration (dimension mismatches, out-of-range
    /// layer indices, bad config values).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid argument to an operation (zero counts, non-positive
    /// temperatures, empty strings).
    #[error("argument error: {0}")]
    Argument(String),

    /// Malformed runtime input (images, latent files, payloads).
    #[error("input error: {0}")]
    Input(String),

    /// An operation was called before required state was prepared.
    #[error("state error: {0}")]
    State(String),

    /// Both embedding-displacement vectors collapsed below the usable norm
    /// floor; the caller is expected to skip the energy term for this step.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    /// Numerical failure with diagnostics (non-PSD covariances, failed
    /// matrix square roots).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Backend construction or adapter loading failed.
    #[error("backend error: {0}")]
    Backend(String),

    /// A serialized artifact has an unreadable or incompatible layout.
    #[error("format error: {0}")]
    Format(String),

    /// A serialized artifact was produced by an incompatible format version.
    #[error("version mismatch: found {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    /// An artifact's embedded fingerprint does not match the active
    /// configuration.
    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    /// The training objective became non-finite; carries the diagnostic dump.
    #[error(
        "non-finite loss at step {step} (seed {seed}): jac={l_jac} zprior={l_zprior} energy={l_energy}"
    )]
    NonFiniteLoss {
        step: u64,
        seed: u64,
        l_jac: f64,
        l_zprior: f64,
        l_energy: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn backend(msg: impl Into<String>) -> Self {
        Error::Backend(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
