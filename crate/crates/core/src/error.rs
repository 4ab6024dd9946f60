use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The graph (or a vector handed to it) violates a structural invariant.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("exhaustive search refused: {n} subtasks exceeds guard of {guard}")]
    Intractable { n: usize, guard: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
