//! Camera list JSON: an array of pinhole cameras with world-from-camera
//! rotations.

use std::fs;
use std::path::Path;

use gsreg_core::{CameraPose, Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    /// Row-major world-from-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraPose> for CameraRecord {
    fn from(c: &CameraPose) -> Self {
        let r = &c.rotation;
        Self {
            rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            translation: [c.translation.x, c.translation.y, c.translation.z],
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraRecord {
    pub fn to_pose(&self) -> gsreg_core::Result<CameraPose> {
        let pose = CameraPose {
            rotation: Mat3::from_row_slice(&self.rotation),
            translation: Vec3::from(self.translation),
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        pose.validate()?;
        Ok(pose)
    }
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<CameraPose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_pose().map_err(|e| Error::format(path, format!("camera {i}"), e.to_string())))
        .collect()
}

pub fn save_cameras(cameras: &[CameraPose], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    crate::write_json(path.as_ref(), &records)
}
