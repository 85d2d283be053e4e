use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed file; `property` names the offending field or header item.
    #[error("{}: format error at `{property}`: {reason}", path.display())]
    Format { path: PathBuf, property: String, reason: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] gsreg_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, property: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), property: property.into(), reason: reason.into() }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json { path: path.to_path_buf(), source }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        use gsreg_core::Error as C;
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Json { .. } => "json",
            Error::Image { .. } => "image",
            Error::Csv(_) => "csv",
            Error::Core(C::InsufficientOverlap { .. }) => "insufficient_overlap",
            Error::Core(C::NoOverlap) => "no_overlap",
            Error::Core(C::RegistrationFailure(_) | C::Degenerate(_) | C::EmptyCloud(_)) => "registration_failure",
            Error::Core(C::InvalidParameter { .. }) => "invalid_parameter",
            Error::Core(_) => "core",
        }
    }
}
