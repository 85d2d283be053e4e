//! Moving Gaussians between frames and merging two registered models.

use alloc::vec::Vec;
use nalgebra::{Rotation3, UnitQuaternion};

use crate::error::{invalid, Result};
use crate::geometry::Sim3;
use crate::model::{model_center, Gaussian, GaussianModel};
use crate::sh::{apply_sh_rotation, build_sh_rotation, ShRotation};

/// Applies `x` to one Gaussian: position and orientation follow the
/// similarity, every axis scale is multiplied by `s`, opacity is untouched and
/// the SH coefficients are rotated by `sh_rot` (built from `x.rotation`).
pub fn transform_gaussian(g: &Gaussian, x: &Sim3, sh_rot: &ShRotation) -> Gaussian {
    let r = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(x.rotation));
    let q = r * UnitQuaternion::from_quaternion(g.rotation);
    let (sh_dc, sh_rest) = apply_sh_rotation(sh_rot, &g.sh_dc, &g.sh_rest);
    Gaussian {
        position: x.apply(&g.position),
        opacity_logit: g.opacity_logit,
        rotation: *q.quaternion(),
        log_scale: g.log_scale.add_scalar(x.scale.ln()),
        sh_dc,
        sh_rest,
    }
}

/// Transforms every Gaussian and camera of `model` by `x`.
pub fn transform_model(model: &GaussianModel, x: &Sim3) -> Result<GaussianModel> {
    let sh_rot = build_sh_rotation(&x.rotation)?;
    Ok(GaussianModel {
        gaussians: model.gaussians.iter().map(|g| transform_gaussian(g, x, &sh_rot)).collect(),
        cameras: model.cameras.iter().map(|c| c.transformed(x)).collect(),
        sh_degree: model.sh_degree,
    })
}

/// Which Gaussians of each input survive a merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePartition {
    pub kept_a: Vec<usize>,
    pub kept_b: Vec<usize>,
}

/// Keeps Gaussians of `a` at least as close to A's center as to B's, and
/// Gaussians of `b_in_a` strictly closer to B's center. Points on the
/// bisector go to A.
pub fn merge_partition(a: &GaussianModel, b_in_a: &GaussianModel) -> Result<MergePartition> {
    let ca = model_center(a)?;
    let cb = model_center(b_in_a)?;
    let kept_a = a
        .gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| (g.position - ca).norm_squared() <= (g.position - cb).norm_squared())
        .map(|(i, _)| i)
        .collect();
    let kept_b = b_in_a
        .gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| (g.position - cb).norm_squared() < (g.position - ca).norm_squared())
        .map(|(i, _)| i)
        .collect();
    Ok(MergePartition { kept_a, kept_b })
}

/// Center-based merge of two models already in the same frame. An empty
/// input yields the other model unchanged.
pub fn merge_models(a: &GaussianModel, b_in_a: &GaussianModel) -> Result<GaussianModel> {
    if a.is_empty() {
        return Ok(b_in_a.clone());
    }
    if b_in_a.is_empty() {
        return Ok(a.clone());
    }
    if a.sh_degree != b_in_a.sh_degree {
        return Err(invalid("sh_degree", "models disagree on SH degree"));
    }
    let part = merge_partition(a, b_in_a)?;
    let mut gaussians = Vec::with_capacity(part.kept_a.len() + part.kept_b.len());
    gaussians.extend(part.kept_a.iter().map(|&i| a.gaussians[i].clone()));
    gaussians.extend(part.kept_b.iter().map(|&i| b_in_a.gaussians[i].clone()));
    let mut cameras = a.cameras.clone();
    cameras.extend_from_slice(&b_in_a.cameras);
    Ok(GaussianModel { gaussians, cameras, sh_degree: a.sh_degree })
}
