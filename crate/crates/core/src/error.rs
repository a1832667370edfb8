use thiserror::Error;

/// Errors raised across the crate.
///
/// Every variant renders as a single line so the CLI can print it verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-variables: {0}")]
    InvalidVariables(String),
    #[error("invalid-action: {0}")]
    InvalidAction(String),
    #[error("episode-finished: step called after the episode ended")]
    EpisodeFinished,
    #[error("not-reset: step called before reset")]
    NotReset,
    #[error("invalid-geometry: {0}")]
    InvalidGeometry(String),
    #[error("incompatible-state: {0}")]
    IncompatibleState(String),
    #[error("unknown-variable: {0}")]
    UnknownVariable(String),
    #[error("invalid-intervention: {0}")]
    InvalidIntervention(String),
    #[error("unknown-protocol: {0}")]
    UnknownProtocol(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid-representation: {0}")]
    InvalidRepresentation(String),
    #[error("empty-batch: {0}")]
    EmptyBatch(String),
    #[error("not-ready: {0}")]
    NotReady(String),
    #[error("configuration: {0}")]
    Configuration(String),
    #[error("transfer: {0}")]
    Transfer(String),
    #[error("empty-episode: score requested for an episode without steps")]
    EmptyEpisode,
    #[error("archive: {0}")]
    Archive(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("plot: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;
