//! Coarse-to-fine registration of two scene models.

use crate::coarse::{coarse_register_report, CoarseReport};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fine::{fine_register, FineResult, FineStatus};
use crate::geometry::Sim3;
use crate::model::{extract_confident_points, GaussianModel};
use crate::overlap::{select_overlap_cameras, OverlapSelection};

/// Which stage produced the final transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Stage {
    Coarse,
    Fine,
    /// The fine stage was attempted but could not run; the coarse result stands.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Maps B's frame into A's frame.
    pub transform: Sim3,
    pub stage: Stage,
    pub coarse: CoarseReport,
    pub selection: Option<OverlapSelection>,
    pub fine: Option<FineResult>,
    pub fallback_reason: Option<Error>,
}

/// Registers `model_b` onto `model_a`. Coarse failures are errors; when the
/// fine stage cannot run the coarse transform is returned as a fallback.
pub fn register_models(
    model_a: &GaussianModel,
    model_b: &GaussianModel,
    cfg: &PipelineConfig,
    coarse_only: bool,
) -> Result<Registration> {
    cfg.validate()?;
    let ex = &cfg.extract;
    let cloud_a = extract_confident_points(model_a, ex.opacity_threshold, ex.max_points, cfg.seed)?;
    let cloud_b = extract_confident_points(model_b, ex.opacity_threshold, ex.max_points, cfg.seed.wrapping_add(1))?;
    let coarse = coarse_register_report(&cloud_a, &cloud_b, &cfg.coarse, cfg.seed)?;
    let mut out = Registration {
        transform: coarse.estimate.transform,
        stage: Stage::Coarse,
        coarse,
        selection: None,
        fine: None,
        fallback_reason: None,
    };
    if coarse_only {
        return Ok(out);
    }
    let selection = match select_overlap_cameras(model_a, model_b, &out.transform, &cfg.overlap) {
        Ok(s) => s,
        Err(e @ Error::InsufficientOverlap { .. }) => {
            out.stage = Stage::Fallback;
            out.fallback_reason = Some(e);
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let fine = fine_register(model_a, model_b, &selection.cameras_a, &selection.cameras_b, &out.transform, &cfg.fine, cfg.seed)?;
    out.selection = Some(selection);
    match fine.status {
        FineStatus::Refined => {
            out.transform = fine.estimate.transform;
            out.stage = Stage::Fine;
        }
        FineStatus::Fallback => {
            out.stage = Stage::Fallback;
            out.fallback_reason = fine.fallback_reason.clone();
        }
    }
    out.fine = Some(fine);
    Ok(out)
}
