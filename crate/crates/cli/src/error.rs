use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("cannot parse config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] elastolab_core::Error),
    #[error(transparent)]
    Model(#[from] elastolab_dimenet::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for invalid input, 3 for numerical failure,
    /// 1 for I/O and everything else.
    pub fn exit_code(&self) -> i32 {
        use elastolab_core::Error as C;
        use elastolab_dimenet::Error as M;
        match self {
            CliError::Validation(_) | CliError::Config { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(C::Validation(_) | C::Format(_) | C::Json(_) | C::Csv(_)) => 2,
            CliError::Model(M::NonFiniteGradient { .. } | M::Divergence { .. }) => 3,
            CliError::Model(M::Core(e)) if e.is_numerical() => 3,
            CliError::Model(M::Core(C::Io(_)) | M::Io(_)) => 1,
            CliError::Model(M::Shape(_) | M::Config(_) | M::EmptyDataset(_) | M::Checkpoint(_) | M::Core(_)) => 2,
            CliError::Json(_) => 2,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_failure_kind() {
        assert_eq!(CliError::validation("x").exit_code(), 2);
        assert_eq!(CliError::from(elastolab_core::Error::validation("x")).exit_code(), 2);
        assert_eq!(CliError::from(elastolab_core::Error::Singular { row: 3 }).exit_code(), 3);
        assert_eq!(CliError::from(elastolab_core::Error::Numerical("nan".into())).exit_code(), 3);
        assert_eq!(CliError::from(elastolab_dimenet::Error::NonFiniteGradient { name: "w".into() }).exit_code(), 3);
        assert_eq!(CliError::from(elastolab_dimenet::Error::EmptyDataset("e".into())).exit_code(), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::io("f", io).exit_code(), 1);
    }
}
