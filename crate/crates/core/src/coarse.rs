//! Point-cloud registration from scratch: descriptors, matching, RANSAC and
//! scaled ICP on clouds extracted from the two scene models.

use alloc::vec::Vec;

use crate::config::CoarseConfig;
use crate::error::{Error, Result};
use crate::estimate::{
    median_spacing, ransac_sim3_candidates, scaled_icp_colored, IcpColors, IcpStatus, RansacParams,
    RegistrationEstimate,
};
use crate::features::{
    compute_descriptors_weighted, estimate_normals, match_descriptors_with_ratio, voxel_downsample, DescriptorSet,
    ScaleLevel,
};
use crate::geometry::{Sim3, Vec3};
use crate::kdtree::KdTree;
use crate::model::ColoredPointCloud;

/// Similarity taking a cloud to unit bounding-box diagonal centered at the
/// origin.
pub fn normalizing_transform(cloud: &ColoredPointCloud) -> Result<Sim3> {
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud("normalization"))?;
    let diag = (hi - lo).norm();
    if !(diag > 0.0) {
        return Err(Error::Degenerate("cloud has zero extent"));
    }
    let center = (lo + hi) * 0.5;
    Ok(Sim3 {
        scale: 1.0 / diag,
        rotation: crate::geometry::Mat3::identity(),
        translation: -center / diag,
    })
}

/// Everything the coarse stage learned along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseReport {
    pub estimate: RegistrationEstimate,
    pub correspondences: usize,
    pub ransac_inliers: usize,
    pub icp_status: IcpStatus,
}

/// Multi-scale feature set of one normalized cloud.
struct Prepared {
    fine: ColoredPointCloud,
    /// Wide-context descriptors first, then local ones.
    levels: [DescriptorSet; 2],
}

fn prepare(cloud: &ColoredPointCloud, cfg: &CoarseConfig, voxel: f64) -> Result<Prepared> {
    let fine = voxel_downsample(cloud, voxel)?;
    if fine.len() <= cfg.normal_neighbors {
        return Err(Error::Degenerate("too few points after downsampling"));
    }
    let normals = estimate_normals(&fine, cfg.normal_neighbors)?;
    let small = compute_descriptors_weighted(&fine, &normals.normals, cfg.descriptor_radius * voxel, cfg.color_weight)?;
    let large = compute_descriptors_weighted(&fine, &normals.normals, cfg.context_radius * voxel, cfg.color_weight)?;
    // join both scales on the fine point they describe
    let mut slot = alloc::vec![usize::MAX; fine.len()];
    for (k, &i) in large.source_indices.iter().enumerate() {
        slot[i] = k;
    }
    let mut joined = DescriptorSet {
        keypoints: Vec::new(),
        source_indices: Vec::new(),
        descriptors: Vec::new(),
        dim: small.dim + large.dim,
        scale_level: ScaleLevel::Coarse,
    };
    for (k, &i) in small.source_indices.iter().enumerate() {
        if slot[i] == usize::MAX {
            continue;
        }
        joined.keypoints.push(small.keypoints[k]);
        joined.source_indices.push(i);
        joined.descriptors.extend_from_slice(small.descriptor(k));
        joined.descriptors.extend_from_slice(large.descriptor(slot[i]));
    }
    Ok(Prepared { levels: [joined, small], fine })
}

/// Overlap and photometric agreement of `src` mapped by `x` onto `tree`:
/// the number of points with a neighbor within `radius`, and the mean L1
/// color difference to that nearest neighbor.
fn alignment_quality(
    src: &[Vec3],
    src_colors: &[[f64; 3]],
    tree: &KdTree<'_>,
    dst_colors: &[[f64; 3]],
    x: &Sim3,
    radius: f64,
) -> (usize, f64) {
    let r2 = radius * radius;
    let mut count = 0;
    let mut diff = 0.0;
    for (p, c) in src.iter().zip(src_colors) {
        if let Some((j, d2)) = tree.nearest(&x.apply(p)) {
            if d2 <= r2 {
                count += 1;
                diff += (0..3).map(|k| (dst_colors[j][k] - c[k]).abs()).sum::<f64>();
            }
        }
    }
    (count, if count > 0 { diff / count as f64 } else { f64::INFINITY })
}

/// Registers `cloud_b` onto `cloud_a`; the estimate maps B's frame into A's.
pub fn coarse_register(
    cloud_a: &ColoredPointCloud,
    cloud_b: &ColoredPointCloud,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<RegistrationEstimate> {
    coarse_register_report(cloud_a, cloud_b, cfg, seed).map(|r| r.estimate)
}

/// [`coarse_register`] with diagnostics.
pub fn coarse_register_report(
    cloud_a: &ColoredPointCloud,
    cloud_b: &ColoredPointCloud,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<CoarseReport> {
    cfg.validate()?;
    if cloud_a.is_empty() {
        return Err(Error::EmptyCloud("cloud A"));
    }
    if cloud_b.is_empty() {
        return Err(Error::EmptyCloud("cloud B"));
    }
    let norm_a = normalizing_transform(cloud_a)?;
    let norm_b = normalizing_transform(cloud_b)?;
    let report = match_normalized(&cloud_a.transformed(&norm_a), &cloud_b.transformed(&norm_b), cfg, seed, &[], None)?;
    Ok(denormalize(report, &norm_a, &norm_b))
}

fn within(e: &RegistrationEstimate, b: &ColoredPointCloud, max_correction: Option<f64>) -> bool {
    let (Some(limit), Some((lo, hi))) = (max_correction, b.bounds()) else { return true };
    (0..8).all(|k| {
        let c = Vec3::new(
            if k & 1 == 0 { lo.x } else { hi.x },
            if k & 2 == 0 { lo.y } else { hi.y },
            if k & 4 == 0 { lo.z } else { hi.z },
        );
        (e.transform.apply(&c) - c).norm() <= limit
    })
}

/// Maps a report computed between normalized clouds back to the original frames.
pub(crate) fn denormalize(mut report: CoarseReport, norm_a: &Sim3, norm_b: &Sim3) -> CoarseReport {
    report.estimate.transform = norm_a.inverse().compose(&report.estimate.transform).compose(norm_b);
    report.estimate.rmse /= norm_a.scale;
    report
}

/// Registers `b` onto `a`, both scaled to roughly unit extent. Transforms in
/// `starts` are refined next to the RANSAC hypotheses; with starts present a
/// failed feature match is not an error. With `max_correction` set, RANSAC
/// hypotheses moving a corner of B's bounding box farther than that are
/// dropped.
pub(crate) fn match_normalized(
    a: &ColoredPointCloud,
    b: &ColoredPointCloud,
    cfg: &CoarseConfig,
    seed: u64,
    starts: &[Sim3],
    max_correction: Option<f64>,
) -> Result<CoarseReport> {
    let voxel = cfg.voxel_fraction;
    let pa = prepare(a, cfg, voxel)?;
    let pb = prepare(b, cfg, voxel)?;
    let params = RansacParams {
        scale_range: (cfg.min_scale, cfg.max_scale),
        ..RansacParams::new(cfg.ransac_iterations, cfg.inlier_factor * voxel, seed)
    };
    let mut candidates: Vec<RegistrationEstimate> =
        starts.iter().map(|x| RegistrationEstimate { transform: *x, inlier_count: 0, rmse: 0.0 }).collect();
    let mut correspondences = 0;
    let mut last_err = Error::NoOverlap;
    for (da, db) in pa.levels.iter().zip(&pb.levels) {
        let found = match_descriptors_with_ratio(da, db, cfg.ratio).and_then(|corr| {
            correspondences += corr.len();
            ransac_sim3_candidates(&corr, &da.keypoints, &db.keypoints, &params, cfg.candidates)
        });
        match found {
            Ok(c) => candidates.extend(c.into_iter().filter(|e| within(e, b, max_correction))),
            Err(e) => last_err = e,
        }
    }
    if candidates.is_empty() {
        return Err(last_err);
    }

    // refine every candidate with colored ICP on the fine clouds
    let tree_fine = KdTree::new(&pa.fine.points);
    let fine_colors = IcpColors { src: &pb.fine.colors, dst: &pa.fine.colors, weight: (cfg.icp_color_scale * voxel).powi(2) };
    let mut refined = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        let r = scaled_icp_colored(
            &pb.fine.points,
            &tree_fine,
            &fine_colors,
            &cand.transform,
            cfg.icp_iterations,
            cfg.icp_tolerance,
            cfg.inlier_factor * voxel,
        )?;
        let (overlap, color) =
            alignment_quality(&pb.fine.points, &pb.fine.colors, &tree_fine, &pa.fine.colors, &r.estimate.transform, voxel);
        refined.push((overlap, color, r, cand.inlier_count));
    }
    // sliding along repetitive structure inflates overlap but not color
    // agreement: among candidates with a quarter of the best overlap, take
    // the most photometrically consistent
    let max_overlap = refined.iter().map(|r| r.0).max().unwrap_or(0);
    let (_, _, icp, ransac_inliers) = refined
        .into_iter()
        .filter(|r| 4 * r.0 >= max_overlap)
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .ok_or(Error::RegistrationFailure("no candidate survived refinement"))?;

    let tree_full = KdTree::new(&a.points);
    let full_gate = 3.0 * median_spacing(&tree_full);
    let full_colors = IcpColors { src: &b.colors, dst: &a.colors, weight: (cfg.icp_color_scale * voxel).powi(2) };
    let polish = scaled_icp_colored(
        &b.points,
        &tree_full,
        &full_colors,
        &icp.estimate.transform,
        cfg.icp_iterations,
        cfg.icp_tolerance,
        full_gate.max(f64::MIN_POSITIVE),
    )?;
    let best = if polish.status == IcpStatus::Starved { icp } else { polish };
    Ok(CoarseReport { estimate: best.estimate, correspondences, ransac_inliers, icp_status: best.status })
}
