use alloc::string::String;

/// Failures raised by the registration and fusion algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty model")]
    EmptyModel,
    #[error("empty point cloud: {0}")]
    EmptyCloud(&'static str),
    #[error("direction is not unit length (norm {0})")]
    NonUnitDirection(f64),
    #[error("SH sample matrix for degree {degree} is rank deficient; choose a different sample set")]
    RankDeficient { degree: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("no overlap: descriptor matching produced no correspondences")]
    NoOverlap,
    #[error("registration failure: {0}")]
    RegistrationFailure(&'static str),
    #[error("insufficient overlap: best covisibility {best:.4}")]
    InsufficientOverlap { best: f64 },
    #[error("empty depth map")]
    EmptyDepthMap,
    #[error("degenerate cost volume: no source view overlaps the reference frustum")]
    DegenerateVolume,
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("not a rotation matrix")]
    NotARotation,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
