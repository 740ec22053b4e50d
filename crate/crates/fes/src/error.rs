use thiserror::Error;

#[derive(Debug, Error)]
pub enum FesError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl FesError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> FesError {
        FesError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            FesError::InvalidConfig(_) => 2,
            FesError::InvalidData(_) => 3,
            FesError::Numeric(_) => 4,
            _ => 1,
        }
    }
}
