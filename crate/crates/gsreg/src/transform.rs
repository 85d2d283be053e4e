//! Similarity transform files written by `register` and `synth`.

use std::fs;
use std::path::Path;

use gsreg_core::pipeline::Stage;
use gsreg_core::{Mat3, Sim3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub scale: f64,
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

impl TransformRecord {
    pub fn new(x: &Sim3) -> Self {
        Self {
            scale: x.scale,
            rotation: std::array::from_fn(|k| x.rotation[(k / 3, k % 3)]),
            translation: [x.translation.x, x.translation.y, x.translation.z],
            stage: None,
            diagnostics: None,
        }
    }

    pub fn to_sim3(&self) -> gsreg_core::Result<Sim3> {
        Sim3::new(self.scale, Mat3::from_row_slice(&self.rotation), Vec3::from(self.translation))
    }
}

pub fn load_transform(path: impl AsRef<Path>) -> Result<TransformRecord> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: TransformRecord = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    rec.to_sim3().map_err(|e| Error::format(path, "rotation", e.to_string()))?;
    Ok(rec)
}

pub fn save_transform(rec: &TransformRecord, path: impl AsRef<Path>) -> Result<()> {
    crate::write_json(path.as_ref(), rec)
}
