//! Pipeline parameters. Every section has defaults and a `validate`.

use crate::error::{invalid, Result};
use crate::model::{DEFAULT_MAX_POINTS, DEFAULT_OPACITY_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ExtractConfig {
    pub opacity_threshold: f64,
    pub max_points: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { opacity_threshold: DEFAULT_OPACITY_THRESHOLD, max_points: DEFAULT_MAX_POINTS }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.opacity_threshold > 0.0 && self.opacity_threshold < 1.0) {
            return Err(invalid("extract.opacity_threshold", "must lie in (0, 1)"));
        }
        if self.max_points == 0 {
            return Err(invalid("extract.max_points", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CoarseConfig {
    /// Fine voxel size as a fraction of the bounding-box diagonal.
    pub voxel_fraction: f64,
    /// Coarse voxel size in fine voxels.
    pub coarse_factor: f64,
    pub normal_neighbors: usize,
    /// Radius of the local descriptor, in voxels.
    pub descriptor_radius: f64,
    /// Radius of the wide-context descriptor, in voxels.
    pub context_radius: f64,
    pub color_weight: f64,
    pub ratio: f64,
    pub ransac_iterations: usize,
    /// RANSAC inlier distance in fine voxels.
    pub inlier_factor: f64,
    /// RANSAC hypotheses refined by ICP before picking the best.
    pub candidates: usize,
    pub icp_iterations: usize,
    pub icp_tolerance: f64,
    /// Color difference equivalent to one voxel of distance is `1 / icp_color_scale`.
    pub icp_color_scale: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            voxel_fraction: 1.0 / 64.0,
            coarse_factor: 5.0,
            normal_neighbors: 16,
            descriptor_radius: 5.0,
            context_radius: 10.0,
            color_weight: 1.0,
            ratio: 0.9,
            ransac_iterations: 5000,
            inlier_factor: 3.0,
            candidates: 10,
            icp_iterations: 50,
            icp_tolerance: 1e-6,
            icp_color_scale: 5.0,
            min_scale: 0.2,
            max_scale: 5.0,
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_fraction > 0.0 && self.voxel_fraction < 1.0) {
            return Err(invalid("coarse.voxel_fraction", "must lie in (0, 1)"));
        }
        if !(self.coarse_factor >= 1.0) {
            return Err(invalid("coarse.coarse_factor", "must be at least 1"));
        }
        if self.normal_neighbors < 3 {
            return Err(invalid("coarse.normal_neighbors", "must be at least 3"));
        }
        if !(self.descriptor_radius > 0.0 && self.context_radius > 0.0) {
            return Err(invalid("coarse.descriptor_radius", "must be positive"));
        }
        if !(self.color_weight >= 0.0) {
            return Err(invalid("coarse.color_weight", "must be non-negative"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(invalid("coarse.ratio", "must lie in (0, 1]"));
        }
        if self.ransac_iterations == 0 || self.icp_iterations == 0 || self.candidates == 0 {
            return Err(invalid("coarse.iterations", "must be positive"));
        }
        if !(self.icp_color_scale >= 0.0) {
            return Err(invalid("coarse.icp_color_scale", "must be non-negative"));
        }
        if !(self.inlier_factor > 0.0) || !(self.icp_tolerance >= 0.0) {
            return Err(invalid("coarse.tolerances", "must be positive"));
        }
        if !(self.min_scale > 0.0 && self.min_scale < self.max_scale) {
            return Err(invalid("coarse.scale_range", "need 0 < min < max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OverlapConfig {
    pub subset_size: usize,
    pub top_k: usize,
    pub neighborhood: usize,
    pub render_size: u32,
    pub depth_tolerance: f64,
    pub min_covisibility: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            subset_size: 30,
            top_k: 10,
            neighborhood: 5,
            render_size: 64,
            depth_tolerance: 0.05,
            min_covisibility: 0.05,
        }
    }
}

impl OverlapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size == 0 || self.top_k == 0 || self.neighborhood == 0 {
            return Err(invalid("overlap", "counts must be positive"));
        }
        if self.render_size < 2 {
            return Err(invalid("overlap.render_size", "must be at least 2"));
        }
        if !(self.depth_tolerance > 0.0) {
            return Err(invalid("overlap.depth_tolerance", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_covisibility) {
            return Err(invalid("overlap.min_covisibility", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FineConfig {
    pub depth_hypotheses: usize,
    pub temperature: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Fine-stage voxel size as a fraction of the filtered cloud diagonal.
    pub voxel_fraction: f64,
    pub ransac_iterations: usize,
    /// RANSAC hypotheses per descriptor level refined next to the coarse alignment.
    pub candidates: usize,
    pub icp_iterations: usize,
    pub icp_tolerance: f64,
}

impl Default for FineConfig {
    fn default() -> Self {
        Self {
            depth_hypotheses: 64,
            temperature: 0.05,
            image_width: 320,
            image_height: 240,
            voxel_fraction: 1.0 / 100.0,
            ransac_iterations: 2000,
            candidates: 3,
            icp_iterations: 50,
            icp_tolerance: 1e-7,
        }
    }
}

impl FineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth_hypotheses < 2 {
            return Err(invalid("fine.depth_hypotheses", "need at least 2"));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid("fine.temperature", "must be positive"));
        }
        if self.image_width < 8 || self.image_height < 8 {
            return Err(invalid("fine.image_size", "must be at least 8 pixels"));
        }
        if !(self.voxel_fraction > 0.0 && self.voxel_fraction < 1.0) {
            return Err(invalid("fine.voxel_fraction", "must lie in (0, 1)"));
        }
        if self.ransac_iterations == 0 || self.icp_iterations == 0 || self.candidates == 0 {
            return Err(invalid("fine.iterations", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub seed: u64,
    pub extract: ExtractConfig,
    pub coarse: CoarseConfig,
    pub overlap: OverlapConfig,
    pub fine: FineConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.extract.validate()?;
        self.coarse.validate()?;
        self.overlap.validate()?;
        self.fine.validate()
    }
}
