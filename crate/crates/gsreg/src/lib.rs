//! File formats and command implementations around `gsreg-core`.

pub mod batch;
pub mod cameras;
pub mod commands;
pub mod error;
pub mod images;
pub mod ply;
pub mod transform;

pub use error::{Error, Result};

use std::path::Path;

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
