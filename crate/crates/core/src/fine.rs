//! Image-guided refinement: plane-sweep depth from rendered views, confident
//! back-projected points, and a second registration on those points.

use alloc::vec;
use alloc::vec::Vec;

use crate::coarse::{match_normalized, normalizing_transform};
use crate::config::{CoarseConfig, FineConfig};
use crate::error::{invalid, Error, Result};
use crate::estimate::RegistrationEstimate;
use crate::features::voxel_downsample;
use crate::geometry::{CameraPose, Sim3, Vec3};
use crate::model::{ColoredPointCloud, GaussianModel};
use crate::render::{render, render_depth, ColorImage, DepthMap};

/// Largest displacement (as a fraction of the reconstructed extent) that a
/// feature-based hypothesis may apply to the coarse alignment.
pub const MAX_CORRECTION: f64 = 0.35;
/// Half width of the square matching window.
pub const PATCH_RADIUS: usize = 2;
/// Reference patches with a smaller gray-level variance carry no texture.
const MIN_PATCH_VARIANCE: f64 = 1e-6;

/// Matching cost per depth hypothesis and reference pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    /// `D × H × W`, index `(l · H + y) · W + x`; lower is better.
    pub values: Vec<f64>,
    /// Strictly increasing depths.
    pub hypotheses: Vec<f64>,
    pub reference: CameraPose,
    pub width: u32,
    pub height: u32,
    /// Per-source NCC score for every bin and pixel, index `(l · S + s) · HW + p`.
    pub source_scores: Vec<f32>,
    pub sources: usize,
    /// Mean and variance of the reference patch around each pixel.
    pub reference_stats: Vec<[f64; 2]>,
    /// Pixels whose reference patch lies inside the image and is textured.
    pub informative: Vec<bool>,
}

impl CostVolume {
    #[inline]
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn depth_count(&self) -> usize {
        self.hypotheses.len()
    }

    /// Length of the per-bin feature: one score per source plus patch mean and variance.
    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.sources + 2
    }

    /// Feature of bin `l` at pixel `p`.
    pub fn bin_feature(&self, l: usize, p: usize, out: &mut [f64]) {
        let hw = self.pixels();
        for s in 0..self.sources {
            out[s] = self.source_scores[(l * self.sources + s) * hw + p] as f64;
        }
        out[self.sources] = self.reference_stats[p][0];
        out[self.sources + 1] = self.reference_stats[p][1];
    }
}

/// Per-pixel distribution over depth hypotheses, same layout as [`CostVolume::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub values: Vec<f64>,
    pub depth_count: usize,
    pub width: u32,
    pub height: u32,
}

impl ProbabilityVolume {
    /// Distribution of pixel `p`.
    pub fn pixel(&self, p: usize) -> Vec<f64> {
        let hw = self.width as usize * self.height as usize;
        (0..self.depth_count).map(|l| self.values[l * hw + p]).collect()
    }
}

/// Interpolated depth, blended feature and confidence per pixel. Invalid
/// pixels have depth and confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthConfidence {
    pub depth: Vec<f64>,
    pub confidence: Vec<f64>,
    /// `H × W × feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub width: u32,
    pub height: u32,
}

/// Robust near and far bounds of a depth map: the 2nd and 98th percentiles of
/// the non-empty pixels, widened by 5%.
pub fn depth_range(depth: &DepthMap) -> Result<(f64, f64)> {
    let mut d: Vec<f64> = depth.data.iter().copied().filter(|v| *v > 0.0).collect();
    if d.is_empty() {
        return Err(Error::EmptyDepthMap);
    }
    d.sort_by(f64::total_cmp);
    let at = |q: f64| d[(q * (d.len() - 1) as f64).round() as usize];
    Ok((at(0.02) * 0.95, at(0.98) * 1.05))
}

/// [`depth_range`] of `model` rendered from `cam` at `width`×`height`.
pub fn depth_range_from_render(model: &GaussianModel, cam: &CameraPose, width: u32, height: u32) -> Result<(f64, f64)> {
    depth_range(&render_depth(model, cam, width, height))
}

/// `count` depths uniformly spaced in inverse depth from `near` to `far`.
pub fn inverse_depth_hypotheses(near: f64, far: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(invalid("depth_hypotheses", "need at least 2"));
    }
    if !(near > 0.0 && far > near) {
        return Err(invalid("depth_range", "need 0 < near < far"));
    }
    let (a, b) = (1.0 / near, 1.0 / far);
    Ok((0..count)
        .map(|l| {
            if l == 0 {
                near
            } else if l == count - 1 {
                far
            } else {
                1.0 / (a + (b - a) * l as f64 / (count - 1) as f64)
            }
        })
        .collect())
}

/// Summed-area table with a zero first row and column.
fn integral(values: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let stride = w + 1;
    out[..stride].fill(0.0);
    for y in 0..h {
        let mut row = 0.0;
        out[(y + 1) * stride] = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            out[(y + 1) * stride + x + 1] = out[y * stride + x + 1] + row;
        }
    }
}

/// Sum over the window of radius `r` centered at `(x, y)`; the window must fit.
#[inline]
fn window_sum(table: &[f64], w: usize, x: usize, y: usize, r: usize) -> f64 {
    let stride = w + 1;
    let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
    table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0] + table[y0 * stride + x0]
}

fn bilinear(img: &[f64], w: usize, h: usize, u: f64, v: f64) -> Option<f64> {
    const SLACK: f64 = 1e-6;
    let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
    if !(u >= -SLACK && v >= -SLACK && u <= wm + SLACK && v <= hm + SLACK) {
        return None;
    }
    let (u, v) = (u.clamp(0.0, wm), v.clamp(0.0, hm));
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
    let bottom = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Plane-sweep cost volume. For every fronto-parallel plane of the reference
/// camera, each source image is warped onto the reference grid and compared
/// by normalized cross-correlation of gray windows; the cost is the mean of
/// `1 - NCC` over sources. Windows touching an out-of-view warp, and
/// textureless windows, cost 1.
pub fn build_cost_volume(
    ref_image: &ColorImage,
    src_images: &[ColorImage],
    ref_cam: &CameraPose,
    src_cams: &[CameraPose],
    range: (f64, f64),
    depth_count: usize,
) -> Result<CostVolume> {
    if src_images.is_empty() || src_images.len() != src_cams.len() {
        return Err(invalid("sources", "need at least one source image with a camera each"));
    }
    let hypotheses = inverse_depth_hypotheses(range.0, range.1, depth_count)?;
    let (w, h) = (ref_image.width as usize, ref_image.height as usize);
    let r = PATCH_RADIUS;
    if w <= 2 * r || h <= 2 * r {
        return Err(invalid("image", "smaller than the matching window"));
    }
    let hw = w * h;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let reference = ref_cam.with_resolution(ref_image.width, ref_image.height);
    let gray_ref = ref_image.to_gray();

    let table_len = (w + 1) * (h + 1);
    let mut t_a = vec![0.0; table_len];
    let mut t_aa = vec![0.0; table_len];
    integral(&gray_ref, w, h, &mut t_a);
    integral(&gray_ref.iter().map(|a| a * a).collect::<Vec<_>>(), w, h, &mut t_aa);
    let mut reference_stats = vec![[0.0; 2]; hw];
    let mut informative = vec![false; hw];
    for y in r..h - r {
        for x in r..w - r {
            let (sa, saa) = (window_sum(&t_a, w, x, y, r), window_sum(&t_aa, w, x, y, r));
            let mean = sa / n;
            let var = (saa / n - mean * mean).max(0.0);
            reference_stats[y * w + x] = [mean, var];
            informative[y * w + x] = var > MIN_PATCH_VARIANCE;
        }
    }

    // rays of the reference pixels at unit depth, in world coordinates
    let rays: Vec<Vec3> = (0..hw)
        .map(|p| reference.rotation * reference.pixel_ray((p % w) as f64, (p / w) as f64))
        .collect();
    let origin = reference.center();

    let sources = src_images.len();
    let mut values = vec![0.0; depth_count * hw];
    let mut source_scores = vec![0.0f32; depth_count * sources * hw];
    let mut warped = vec![0.0; hw];
    let mut missing = vec![0.0; hw];
    let mut prod = vec![0.0; hw];
    let mut sq = vec![0.0; hw];
    let (mut t_b, mut t_bb, mut t_ab, mut t_m) =
        (vec![0.0; table_len], vec![0.0; table_len], vec![0.0; table_len], vec![0.0; table_len]);
    let mut any_valid = false;

    for (s, (img, cam)) in src_images.iter().zip(src_cams).enumerate() {
        let (sw, sh) = (img.width as usize, img.height as usize);
        let cam = cam.with_resolution(img.width, img.height);
        let gray = img.to_gray();
        for (l, &d) in hypotheses.iter().enumerate() {
            for p in 0..hw {
                let world = origin + rays[p] * d;
                let sample = cam.project(&world).and_then(|(px, _)| bilinear(&gray, sw, sh, px.x, px.y));
                match sample {
                    Some(g) => {
                        warped[p] = g;
                        missing[p] = 0.0;
                        any_valid = true;
                    }
                    None => {
                        warped[p] = 0.0;
                        missing[p] = 1.0;
                    }
                }
                prod[p] = warped[p] * gray_ref[p];
                sq[p] = warped[p] * warped[p];
            }
            integral(&warped, w, h, &mut t_b);
            integral(&sq, w, h, &mut t_bb);
            integral(&prod, w, h, &mut t_ab);
            integral(&missing, w, h, &mut t_m);
            let scores = &mut source_scores[(l * sources + s) * hw..(l * sources + s + 1) * hw];
            for y in r..h - r {
                for x in r..w - r {
                    let p = y * w + x;
                    if !informative[p] || window_sum(&t_m, w, x, y, r) > 0.5 {
                        continue;
                    }
                    let (sa, saa) = (window_sum(&t_a, w, x, y, r), window_sum(&t_aa, w, x, y, r));
                    let (sb, sbb, sab) =
                        (window_sum(&t_b, w, x, y, r), window_sum(&t_bb, w, x, y, r), window_sum(&t_ab, w, x, y, r));
                    let va = saa - sa * sa / n;
                    let vb = sbb - sb * sb / n;
                    if vb <= n * MIN_PATCH_VARIANCE {
                        continue;
                    }
                    let ncc = ((sab - sa * sb / n) / (va * vb).sqrt()).clamp(-1.0, 1.0);
                    scores[p] = ncc as f32;
                }
            }
        }
    }
    if !any_valid {
        return Err(Error::DegenerateVolume);
    }
    for l in 0..depth_count {
        for p in 0..hw {
            let total: f64 =
                (0..sources).map(|s| 1.0 - source_scores[(l * sources + s) * hw + p] as f64).sum();
            values[l * hw + p] = total / sources as f64;
        }
    }
    Ok(CostVolume {
        values,
        hypotheses,
        reference,
        width: ref_image.width,
        height: ref_image.height,
        source_scores,
        sources,
        reference_stats,
        informative,
    })
}

/// Soft-min over depth of `cost / temperature`, per pixel.
pub fn cost_to_probability(cost: &CostVolume, temperature: f64) -> Result<ProbabilityVolume> {
    if !(temperature > 0.0) {
        return Err(invalid("temperature", "must be positive"));
    }
    let (d, hw) = (cost.depth_count(), cost.pixels());
    let mut values = vec![0.0; d * hw];
    for p in 0..hw {
        let lowest = (0..d).map(|l| cost.values[l * hw + p]).fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for l in 0..d {
            let e = (-(cost.values[l * hw + p] - lowest) / temperature).exp();
            values[l * hw + p] = e;
            total += e;
        }
        for l in 0..d {
            values[l * hw + p] /= total;
        }
    }
    Ok(ProbabilityVolume { values, depth_count: d, width: cost.width, height: cost.height })
}

/// Start of the adjacent pair of bins with the largest combined probability;
/// ties go to the smallest index.
pub fn consecutive_argmax(p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_mass = f64::NEG_INFINITY;
    for l in 0..p.len().saturating_sub(1) {
        let m = p[l] + p[l + 1];
        if m > best_mass {
            best_mass = m;
            best = l;
        }
    }
    best
}

/// Depth, feature and confidence of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelEstimate {
    pub bin: usize,
    pub depth: f64,
    pub feature: Vec<f64>,
    pub confidence: f64,
}

/// Blend weights of bins `l0` and `l0 + 1` and their combined mass.
#[inline]
fn pair_weights(p: &[f64], l0: usize) -> Option<(f64, f64, f64)> {
    let mass = p[l0] + p[l0 + 1];
    (mass > 0.0).then(|| (p[l0] / mass, p[l0 + 1] / mass, mass))
}

/// Interpolates between the two most probable adjacent bins. `features`
/// holds one `dim`-vector per bin. `None` when the pair carries no mass.
pub fn depth_feature_confidence(p: &[f64], hypotheses: &[f64], features: &[f64], dim: usize) -> Option<PixelEstimate> {
    if p.len() < 2 || hypotheses.len() != p.len() || features.len() != p.len() * dim {
        return None;
    }
    let l0 = consecutive_argmax(p);
    let (w0, w1, mass) = pair_weights(p, l0)?;
    let f0 = &features[l0 * dim..(l0 + 1) * dim];
    let f1 = &features[(l0 + 1) * dim..(l0 + 2) * dim];
    Some(PixelEstimate {
        bin: l0,
        depth: w0 * hypotheses[l0] + w1 * hypotheses[l0 + 1],
        feature: f0.iter().zip(f1).map(|(a, b)| w0 * a + w1 * b).collect(),
        confidence: mass,
    })
}

/// Applies [`depth_feature_confidence`] to every informative pixel.
pub fn estimate_depth(cost: &CostVolume, prob: &ProbabilityVolume) -> DepthConfidence {
    let (d, hw, dim) = (cost.depth_count(), cost.pixels(), cost.feature_dim());
    let mut out = DepthConfidence {
        depth: vec![0.0; hw],
        confidence: vec![0.0; hw],
        features: vec![0.0; hw * dim],
        feature_dim: dim,
        width: cost.width,
        height: cost.height,
    };
    let mut dist = vec![0.0; d];
    let (mut f0, mut f1) = (vec![0.0; dim], vec![0.0; dim]);
    for p in 0..hw {
        if !cost.informative[p] {
            continue;
        }
        for (l, v) in dist.iter_mut().enumerate() {
            *v = prob.values[l * hw + p];
        }
        let l0 = consecutive_argmax(&dist);
        let Some((w0, w1, mass)) = pair_weights(&dist, l0) else { continue };
        cost.bin_feature(l0, p, &mut f0);
        cost.bin_feature(l0 + 1, p, &mut f1);
        out.depth[p] = w0 * cost.hypotheses[l0] + w1 * cost.hypotheses[l0 + 1];
        out.confidence[p] = mass;
        for k in 0..dim {
            out.features[p * dim + k] = w0 * f0[k] + w1 * f1[k];
        }
    }
    out
}

/// Back-projected pixels that passed the confidence gate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPoints {
    pub points: Vec<Vec3>,
    pub features: Vec<f64>,
    pub feature_dim: usize,
    /// Row-major index of the source pixel of each point.
    pub pixels: Vec<usize>,
}

/// Keeps pixels whose confidence exceeds the mean over valid pixels (all
/// valid pixels when the confidence is constant) and back-projects them
/// through `cam`.
pub fn confidence_filter(dc: &DepthConfidence, cam: &CameraPose) -> Result<FilteredPoints> {
    let valid: Vec<usize> = (0..dc.confidence.len()).filter(|&p| dc.confidence[p] > 0.0).collect();
    if valid.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mean = valid.iter().map(|&p| dc.confidence[p]).sum::<f64>() / valid.len() as f64;
    let (lo, hi) = valid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(dc.confidence[p]), hi.max(dc.confidence[p])));
    let cam = cam.with_resolution(dc.width, dc.height);
    let w = dc.width as usize;
    let dim = dc.feature_dim;
    let mut out = FilteredPoints { points: Vec::new(), features: Vec::new(), feature_dim: dim, pixels: Vec::new() };
    for p in valid {
        if lo == hi || dc.confidence[p] > mean {
            out.points.push(cam.backproject((p % w) as f64, (p / w) as f64, dc.depth[p]));
            out.features.extend_from_slice(&dc.features[p * dim..(p + 1) * dim]);
            out.pixels.push(p);
        }
    }
    Ok(out)
}

/// Confident colored points reconstructed from rendered views of one model.
/// The first camera is the reference, the others are sources.
pub fn reconstruct_side(model: &GaussianModel, cams: &[CameraPose], cfg: &FineConfig) -> Result<(ColoredPointCloud, FilteredPoints)> {
    if cams.len() < 2 {
        return Err(invalid("cameras", "need a reference and at least one source camera"));
    }
    let (w, h) = (cfg.image_width, cfg.image_height);
    let views: Vec<_> = cams.iter().map(|c| render(model, c, w, h)).collect();
    let range = depth_range(&views[0].depth)?;
    let sources: Vec<ColorImage> = views[1..].iter().map(|v| v.color.clone()).collect();
    let cost = build_cost_volume(&views[0].color, &sources, &cams[0], &cams[1..], range, cfg.depth_hypotheses)?;
    let prob = cost_to_probability(&cost, cfg.temperature)?;
    let dc = estimate_depth(&cost, &prob);
    let kept = confidence_filter(&dc, &cams[0])?;
    let mut cloud = ColoredPointCloud::default();
    for (pt, &p) in kept.points.iter().zip(&kept.pixels) {
        cloud.push(*pt, views[0].color.data[p], 1.0);
    }
    Ok((cloud, kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FineStatus {
    Refined,
    /// The image stage could not run; the estimate is the coarse input.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineResult {
    /// Maps B's frame into A's frame.
    pub estimate: RegistrationEstimate,
    pub status: FineStatus,
    pub points_a: usize,
    pub points_b: usize,
    /// Why the stage fell back, if it did.
    pub fallback_reason: Option<Error>,
}

impl FineResult {
    pub fn fallback(coarse: &Sim3, reason: Error) -> Self {
        Self {
            estimate: RegistrationEstimate { transform: *coarse, inlier_count: 0, rmse: f64::NAN },
            status: FineStatus::Fallback,
            points_a: 0,
            points_b: 0,
            fallback_reason: Some(reason),
        }
    }
}

/// Settings of the point registration run on the reconstructed points.
fn point_stage_config(cfg: &FineConfig) -> CoarseConfig {
    CoarseConfig {
        voxel_fraction: cfg.voxel_fraction,
        ransac_iterations: cfg.ransac_iterations,
        candidates: cfg.candidates,
        icp_iterations: cfg.icp_iterations,
        icp_tolerance: cfg.icp_tolerance,
        ..CoarseConfig::default()
    }
}

fn is_data_failure(e: &Error) -> bool {
    !matches!(e, Error::InvalidParameter { .. } | Error::NotARotation)
}

/// Refines `coarse` (B's frame into A's) using points reconstructed from the
/// selected cameras of each model (`cams_b` in B's own frame). Failures caused
/// by the data yield the coarse estimate tagged [`FineStatus::Fallback`].
pub fn fine_register(
    model_a: &GaussianModel,
    model_b: &GaussianModel,
    cams_a: &[CameraPose],
    cams_b: &[CameraPose],
    coarse: &Sim3,
    cfg: &FineConfig,
    seed: u64,
) -> Result<FineResult> {
    cfg.validate()?;
    match refine(model_a, model_b, cams_a, cams_b, coarse, cfg, seed) {
        Ok(r) => Ok(r),
        Err(e) if is_data_failure(&e) => Ok(FineResult::fallback(coarse, e)),
        Err(e) => Err(e),
    }
}

fn refine(
    model_a: &GaussianModel,
    model_b: &GaussianModel,
    cams_a: &[CameraPose],
    cams_b: &[CameraPose],
    coarse: &Sim3,
    cfg: &FineConfig,
    seed: u64,
) -> Result<FineResult> {
    let (cloud_a, _) = reconstruct_side(model_a, cams_a, cfg)?;
    let (cloud_b, _) = reconstruct_side(model_b, cams_b, cfg)?;
    let cloud_b = cloud_b.transformed(coarse);
    // one normalization for both so the coarse alignment stays the identity
    let norm = normalizing_transform(&cloud_a)?;
    let point_cfg = point_stage_config(cfg);
    // dense reconstructions are thinned to half the matching voxel
    let thin = 0.5 * point_cfg.voxel_fraction;
    let a = voxel_downsample(&cloud_a.transformed(&norm), thin)?;
    let b = voxel_downsample(&cloud_b.transformed(&norm), thin)?;
    let report = match_normalized(&a, &b, &point_cfg, seed, &[Sim3::identity()], Some(MAX_CORRECTION))?;
    let aligned = report.estimate;
    let delta = norm.inverse().compose(&aligned.transform).compose(&norm);
    Ok(FineResult {
        estimate: RegistrationEstimate {
            transform: delta.compose(coarse),
            inlier_count: aligned.inlier_count,
            rmse: aligned.rmse / norm.scale,
        },
        status: FineStatus::Refined,
        points_a: cloud_a.len(),
        points_b: cloud_b.len(),
        fallback_reason: None,
    })
}
