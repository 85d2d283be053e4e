//! Similarity estimation: closed-form least squares, RANSAC over
//! correspondences and ICP with scale.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::CorrespondenceSet;
use crate::geometry::{Mat3, Sim3, Vec3};
use crate::kdtree::KdTree;
use crate::model::ColoredPointCloud;

/// Output of every registration stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationEstimate {
    /// Maps the source (B) frame into the target (A) frame.
    pub transform: Sim3,
    pub inlier_count: usize,
    /// Residual over inliers, in target units.
    pub rmse: f64,
}

/// Least-squares similarity minimizing `Σ |dst - (s R src + T)|²`
/// (Umeyama). With `with_scale == false` the scale is exactly 1.
pub fn umeyama_sim3(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Sim3> {
    if src.len() != dst.len() {
        return Err(crate::error::invalid("correspondences", "src and dst lengths differ"));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate("at least 3 correspondences required"));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        cov += (d - mu_d) * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if !(sv[idx[0]] > 0.0) || sv[idx[1]] <= 1e-12 * sv[idx[0]] {
        return Err(Error::Degenerate("correspondences are colinear or coincident"));
    }
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut d = Mat3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // flip the axis of the smallest singular value
        d[(idx[2], idx[2])] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| sv[i] * d[(i, i)]).sum();
        trace / var_s
    } else {
        1.0
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate("non-positive scale estimate"));
    }
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

/// Inliers a hypothesis needs beyond its own minimal sample.
pub const MIN_SUPPORT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tolerance: f64,
    pub seed: u64,
    /// Hypotheses with scale outside this range are discarded.
    pub scale_range: (f64, f64),
    /// Allowed spread of the three edge-length ratios of a sample.
    pub edge_ratio_tolerance: f64,
}

impl RansacParams {
    pub fn new(iterations: usize, inlier_tolerance: f64, seed: u64) -> Self {
        Self {
            iterations,
            inlier_tolerance,
            seed,
            scale_range: (0.1, 10.0),
            edge_ratio_tolerance: 0.15,
        }
    }
}

fn score(x: &Sim3, corr: &CorrespondenceSet, a: &[Vec3], b: &[Vec3], tol2: f64) -> (usize, f64) {
    let mut count = 0;
    let mut sum = 0.0;
    for c in &corr.pairs {
        let r = (x.apply(&b[c.index_b]) - a[c.index_a]).norm_squared();
        if r <= tol2 {
            count += 1;
            sum += r;
        }
    }
    (count, sum)
}

fn inlier_pairs(x: &Sim3, corr: &CorrespondenceSet, a: &[Vec3], b: &[Vec3], tol2: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    corr.pairs
        .iter()
        .filter(|c| (x.apply(&b[c.index_b]) - a[c.index_a]).norm_squared() <= tol2)
        .map(|c| (b[c.index_b], a[c.index_a]))
        .unzip()
}

/// Robust similarity from correspondences `a[index_a] ≈ X · b[index_b]`.
/// Minimal 3-point samples are pre-screened for consistent edge-length
/// ratios, scored by inlier count, and the winner is refit on its inliers.
pub fn ransac_sim3(
    corr: &CorrespondenceSet,
    a: &[Vec3],
    b: &[Vec3],
    params: &RansacParams,
) -> Result<RegistrationEstimate> {
    ransac_sim3_candidates(corr, a, b, params, 1).map(|mut v| v.swap_remove(0))
}

/// Like [`ransac_sim3`] but returns up to `max_candidates` mutually distinct
/// hypotheses, best first, each refit on its inliers.
pub fn ransac_sim3_candidates(
    corr: &CorrespondenceSet,
    a: &[Vec3],
    b: &[Vec3],
    params: &RansacParams,
    max_candidates: usize,
) -> Result<Vec<RegistrationEstimate>> {
    if corr.len() < 3 {
        return Err(Error::RegistrationFailure("fewer than 3 correspondences"));
    }
    if corr.pairs.iter().any(|c| c.index_a >= a.len() || c.index_b >= b.len()) {
        return Err(crate::error::invalid("correspondences", "index out of range"));
    }
    let tol2 = params.inlier_tolerance * params.inlier_tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = corr.len();
    let mut hypotheses: Vec<(usize, f64, Sim3)> = Vec::new();
    for _ in 0..params.iterations {
        let i0 = rng.random_range(0..n);
        let mut i1 = rng.random_range(0..n - 1);
        if i1 >= i0 {
            i1 += 1;
        }
        let mut i2 = rng.random_range(0..n - 2);
        for taken in [i0.min(i1), i0.max(i1)] {
            if i2 >= taken {
                i2 += 1;
            }
        }
        let sample = [corr.pairs[i0], corr.pairs[i1], corr.pairs[i2]];
        let mut ratios = [0.0; 3];
        let mut ok = true;
        for (k, (p, q)) in [(0, 1), (1, 2), (0, 2)].into_iter().enumerate() {
            let da = (a[sample[p].index_a] - a[sample[q].index_a]).norm();
            let db = (b[sample[p].index_b] - b[sample[q].index_b]).norm();
            if da <= params.inlier_tolerance || db <= 0.0 {
                ok = false;
                break;
            }
            ratios[k] = da / db;
        }
        if !ok {
            continue;
        }
        let rmin = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let rmax = ratios.iter().cloned().fold(0.0, f64::max);
        if rmax > rmin * (1.0 + params.edge_ratio_tolerance) {
            continue;
        }
        let src: Vec<Vec3> = sample.iter().map(|c| b[c.index_b]).collect();
        let dst: Vec<Vec3> = sample.iter().map(|c| a[c.index_a]).collect();
        let Ok(x) = umeyama_sim3(&src, &dst, true) else { continue };
        if x.scale < params.scale_range.0 || x.scale > params.scale_range.1 {
            continue;
        }
        let (count, sum) = score(&x, corr, a, b, tol2);
        // the three sample pairs always fit their own hypothesis, so only
        // support from other pairs counts as evidence
        if count >= 3 + MIN_SUPPORT {
            hypotheses.push((count, sum, x));
        }
    }
    if hypotheses.is_empty() {
        return Err(Error::RegistrationFailure("no hypothesis has 3 supporting inliers"));
    }
    hypotheses.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.total_cmp(&y.1)));

    let probe = corr.pairs.iter().map(|c| b[c.index_b]).sum::<Vec3>() / n as f64;
    let mut picked: Vec<RegistrationEstimate> = Vec::new();
    for (count, _, x) in hypotheses {
        if picked.len() >= max_candidates.max(1) {
            break;
        }
        let refined = refit(x, count, corr, a, b, tol2);
        let duplicate = picked.iter().any(|p| {
            let t = &p.transform;
            (t.apply(&probe) - refined.transform.apply(&probe)).norm() < 3.0 * params.inlier_tolerance
                && (t.rotation.transpose() * refined.transform.rotation).trace() > 1.0 + 2.0 * 5f64.to_radians().cos()
        });
        if !duplicate {
            picked.push(refined);
        }
    }
    Ok(picked)
}

/// Refits on inliers while the consensus does not shrink.
fn refit(mut x: Sim3, mut count: usize, corr: &CorrespondenceSet, a: &[Vec3], b: &[Vec3], tol2: f64) -> RegistrationEstimate {
    for _ in 0..3 {
        let (src, dst) = inlier_pairs(&x, corr, a, b, tol2);
        let Ok(next) = umeyama_sim3(&src, &dst, true) else { break };
        let (c2, _) = score(&next, corr, a, b, tol2);
        if c2 < count {
            break;
        }
        x = next;
        count = c2;
    }
    let (count, sum) = score(&x, corr, a, b, tol2);
    RegistrationEstimate {
        transform: x,
        inlier_count: count,
        rmse: (sum / count.max(1) as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpStatus {
    Converged,
    MaxIterations,
    /// Fewer than [`MIN_ICP_PAIRS`] pairs within the gate; transform left at init.
    Starved,
}

pub const MIN_ICP_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub estimate: RegistrationEstimate,
    pub status: IcpStatus,
    /// RMSE of each accepted iterate, non-increasing.
    pub rmse_history: Vec<f64>,
    pub iterations: usize,
}

/// Median distance from each point to its nearest distinct neighbor.
pub fn median_spacing(tree: &KdTree<'_>) -> f64 {
    let pts = tree.points();
    let mut d: Vec<f64> = pts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| tree.nearest_excluding(p, i).map(|(_, d2)| d2.sqrt()))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp);
    d[mid]
}

/// Color channels of the source and target clouds, parallel to their points.
#[derive(Debug, Clone, Copy)]
pub struct IcpColors<'a> {
    pub src: &'a [[f64; 3]],
    pub dst: &'a [[f64; 3]],
    /// Squared-distance penalty per unit of squared color difference.
    pub weight: f64,
}

const COLOR_CANDIDATES: usize = 8;

#[inline]
fn color_d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum()
}

/// Pairs each transformed source point with a target within the gate.
/// Without colors this is the nearest neighbor; with colors the best of the
/// few nearest under `d² + weight · |Δcolor|²`. Returns the pairs and the
/// RMS of that cost.
fn associate(
    x: &Sim3,
    src: &[Vec3],
    tree: &KdTree<'_>,
    gate2: f64,
    colors: Option<&IcpColors<'_>>,
) -> (Vec<Vec3>, Vec<Vec3>, f64) {
    let dst = tree.points();
    let mut s = Vec::new();
    let mut d = Vec::new();
    let mut sum = 0.0;
    for (i, p) in src.iter().enumerate() {
        let q = x.apply(p);
        let hit = match colors {
            None => tree.nearest(&q).filter(|&(_, d2)| d2 <= gate2),
            Some(c) => tree
                .knn(&q, COLOR_CANDIDATES)
                .into_iter()
                .filter(|&(_, d2)| d2 <= gate2)
                .map(|(j, d2)| (j, d2 + c.weight * color_d2(&c.src[i], &c.dst[j])))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
        };
        if let Some((j, cost)) = hit {
            s.push(*p);
            d.push(dst[j]);
            sum += cost;
        }
    }
    let rmse = if s.is_empty() { f64::INFINITY } else { (sum / s.len() as f64).sqrt() };
    (s, d, rmse)
}

/// Point-to-point ICP estimating scale, rotation and translation each
/// iteration. Correspondences are nearest neighbors within three times the
/// median point spacing of `dst`. Stops when the RMSE improves by less than
/// `tol`; an iterate that would raise the RMSE is rejected.
pub fn scaled_icp(
    src: &ColoredPointCloud,
    dst: &ColoredPointCloud,
    init: &Sim3,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyCloud("scaled_icp input"));
    }
    let tree = KdTree::new(&dst.points);
    let gate = 3.0 * median_spacing(&tree);
    scaled_icp_gated(&src.points, &tree, init, max_iters, tol, gate)
}

/// [`scaled_icp`] against a prebuilt tree with an explicit distance gate.
pub fn scaled_icp_gated(
    src: &[Vec3],
    tree: &KdTree<'_>,
    init: &Sim3,
    max_iters: usize,
    tol: f64,
    gate: f64,
) -> Result<IcpResult> {
    icp_core(src, tree, init, max_iters, tol, gate, None)
}

/// ICP whose correspondences also prefer similar colors, which keeps
/// textured but geometrically flat regions from sliding.
pub fn scaled_icp_colored(
    src: &[Vec3],
    tree: &KdTree<'_>,
    colors: &IcpColors<'_>,
    init: &Sim3,
    max_iters: usize,
    tol: f64,
    gate: f64,
) -> Result<IcpResult> {
    if colors.src.len() != src.len() || colors.dst.len() != tree.len() {
        return Err(crate::error::invalid("colors", "one color per point required"));
    }
    icp_core(src, tree, init, max_iters, tol, gate, Some(colors))
}

fn icp_core(
    src: &[Vec3],
    tree: &KdTree<'_>,
    init: &Sim3,
    max_iters: usize,
    tol: f64,
    gate: f64,
    colors: Option<&IcpColors<'_>>,
) -> Result<IcpResult> {
    let gate2 = gate * gate;
    let (mut s, mut d, mut rmse) = associate(init, src, tree, gate2, colors);
    if s.len() < MIN_ICP_PAIRS {
        return Ok(IcpResult {
            estimate: RegistrationEstimate {
                transform: *init,
                inlier_count: s.len(),
                rmse,
            },
            status: IcpStatus::Starved,
            rmse_history: Vec::new(),
            iterations: 0,
        });
    }
    let mut current = *init;
    let mut inliers = s.len();
    let mut history = alloc::vec![rmse];
    let mut status = IcpStatus::MaxIterations;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let Ok(next) = umeyama_sim3(&s, &d, true) else {
            status = IcpStatus::Converged;
            break;
        };
        let (s2, d2, rmse2) = associate(&next, src, tree, gate2, colors);
        if s2.len() < MIN_ICP_PAIRS || rmse2 > rmse {
            status = IcpStatus::Converged;
            break;
        }
        let improvement = rmse - rmse2;
        current = next;
        rmse = rmse2;
        inliers = s2.len();
        history.push(rmse);
        s = s2;
        d = d2;
        if improvement < tol {
            status = IcpStatus::Converged;
            break;
        }
    }
    Ok(IcpResult {
        estimate: RegistrationEstimate {
            transform: current,
            inlier_count: inliers,
            rmse,
        },
        status,
        rmse_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Correspondence;
    use crate::geometry::{axis_angle, random_rotation};

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn rre_deg(a: &Mat3, b: &Mat3) -> f64 {
        (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn umeyama_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_points(20, &mut rng);
        let x = umeyama_sim3(&p, &p, true).unwrap();
        assert!(x.max_abs_diff(&Sim3::identity()) < 1e-12);
    }

    #[test]
    fn umeyama_recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(30, &mut rng);
        let gt = Sim3 {
            scale: 2.0,
            rotation: axis_angle(Vec3::z(), core::f64::consts::FRAC_PI_2),
            translation: Vec3::new(1.0, 2.0, 3.0),
        };
        let dst: Vec<Vec3> = src.iter().map(|p| gt.apply(p)).collect();
        let x = umeyama_sim3(&src, &dst, true).unwrap();
        assert!(x.max_abs_diff(&gt) < 1e-9);
        let rigid = umeyama_sim3(&src, &dst, false).unwrap();
        assert_eq!(rigid.scale, 1.0);
        assert!(rre_deg(&rigid.rotation, &gt.rotation) < 1e-6);
    }

    #[test]
    fn umeyama_handles_reflection_case() {
        // planar points: the covariance has a zero singular value and the
        // unconstrained solution may be a reflection
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<Vec3> = (0..10).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0)).collect();
        let gt = Sim3 { scale: 0.5, rotation: random_rotation(&mut rng), translation: Vec3::new(0.1, 0.2, 0.3) };
        let dst: Vec<Vec3> = src.iter().map(|p| gt.apply(p)).collect();
        let x = umeyama_sim3(&src, &dst, true).unwrap();
        assert!((x.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(x.max_abs_diff(&gt) < 1e-9);
    }

    #[test]
    fn umeyama_rejects_colinear() {
        let src: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(umeyama_sim3(&src, &src, true), Err(Error::Degenerate(_))));
        assert!(umeyama_sim3(&src[..2], &src[..2], true).is_err());
    }

    fn make_corr(n: usize, outlier_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<Vec3>, CorrespondenceSet, Sim3) {
        let b = random_points(n, rng);
        let gt = Sim3 { scale: rng.random_range(0.7..1.4), rotation: random_rotation(rng), translation: Vec3::new(0.5, -1.0, 2.0) };
        let mut a: Vec<Vec3> = b.iter().map(|p| gt.apply(p)).collect();
        let n_out = (n as f64 * outlier_fraction) as usize;
        for p in a.iter_mut().take(n_out) {
            *p = gt.apply(&random_points(1, rng)[0]);
        }
        let corr = CorrespondenceSet {
            pairs: (0..n).map(|i| Correspondence { index_a: i, index_b: i, score: 1.0 }).collect(),
        };
        (a, b, corr, gt)
    }

    #[test]
    fn ransac_all_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, corr, gt) = make_corr(100, 0.0, &mut rng);
        let est = ransac_sim3(&corr, &a, &b, &RansacParams::new(200, 0.01, 1)).unwrap();
        assert_eq!(est.inlier_count, 100);
        assert!(est.transform.max_abs_diff(&gt) < 1e-9);
    }

    #[test]
    fn ransac_half_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b, corr, gt) = make_corr(200, 0.5, &mut rng);
        let est = ransac_sim3(&corr, &a, &b, &RansacParams::new(1000, 0.02, 2)).unwrap();
        assert!(rre_deg(&est.transform.rotation, &gt.rotation) < 1.0);
        assert!(est.inlier_count >= 100);
    }

    #[test]
    fn ransac_rejects_pure_noise() {
        let mut failures = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = random_points(100, &mut rng);
            let b = random_points(100, &mut rng);
            let corr = CorrespondenceSet {
                pairs: (0..100).map(|i| Correspondence { index_a: i, index_b: i, score: 1.0 }).collect(),
            };
            if ransac_sim3(&corr, &a, &b, &RansacParams::new(1000, 0.01, seed)).is_err() {
                failures += 1;
            }
        }
        assert_eq!(failures, 20);
    }

    #[test]
    fn icp_identity_on_identical_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = ColoredPointCloud::from_points(random_points(500, &mut rng));
        let r = scaled_icp(&c, &c, &Sim3::identity(), 20, 1e-9).unwrap();
        assert!(r.estimate.transform.max_abs_diff(&Sim3::identity()) < 1e-9);
        assert!(r.estimate.rmse < 1e-9);
    }

    #[test]
    fn icp_converges_from_nearby_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // a lumpy surface: ICP needs geometry that pins down all 7 dof
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                let (x, y) = (i as f64 / 30.0 - 1.0, j as f64 / 30.0 - 1.0);
                pts.push(Vec3::new(x, y, 0.3 * (2.0 * x).sin() * (3.0 * y).cos() + 0.2 * x * x));
            }
        }
        let src = ColoredPointCloud::from_points(pts);
        let gt = Sim3 { scale: 1.2, rotation: axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.4), translation: Vec3::new(0.3, 0.1, -0.2) };
        let dst = src.transformed(&gt);
        let init = Sim3 {
            scale: gt.scale * 1.08,
            rotation: axis_angle(Vec3::new(0.3, -1.0, 0.2), 8f64.to_radians()) * gt.rotation,
            translation: gt.translation + Vec3::new(0.03, -0.02, 0.02),
        };
        let r = scaled_icp(&src, &dst, &init, 200, 1e-12).unwrap();
        assert!(rre_deg(&r.estimate.transform.rotation, &gt.rotation) < 0.1);
        assert!((r.estimate.transform.scale - gt.scale).abs() / gt.scale < 0.01);
        assert!(r.rmse_history.windows(2).all(|w| w[1] <= w[0]));
        let _ = rng.random::<u8>();
    }

    #[test]
    fn icp_starves_without_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = ColoredPointCloud::from_points(random_points(200, &mut rng));
        let b = a.transformed(&Sim3::from_translation(Vec3::new(100.0, 0.0, 0.0)));
        let r = scaled_icp(&b, &a, &Sim3::identity(), 10, 1e-6).unwrap();
        assert_eq!(r.status, IcpStatus::Starved);
        assert_eq!(r.estimate.transform, Sim3::identity());
    }
}
