//! Per-scene metric rows for batch evaluation.

use std::io::Write;

use gsreg_core::eval::MetricReport;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub scene: String,
    pub rre: f64,
    pub rte: f64,
    pub rse: f64,
    pub rde: Option<f64>,
    pub success: bool,
    pub seconds: Option<f64>,
}

impl BatchRow {
    pub fn new(scene: impl Into<String>, m: &MetricReport, seconds: Option<f64>) -> Self {
        Self { scene: scene.into(), rre: m.rre, rte: m.rte, rse: m.rse, rde: m.rde, success: m.success, seconds }
    }
}

pub fn write_csv<W: Write>(rows: &[BatchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["scene", "rre", "rte", "rse", "rde", "success", "seconds"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
