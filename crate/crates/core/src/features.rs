//! Point-cloud features for correspondence search: voxel-grid subsampling,
//! PCA normals, rotation-invariant pair-feature histograms and
//! mutual-nearest matching with a ratio test.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::kdtree::KdTree;
use crate::model::ColoredPointCloud;

/// Bins per angular pair feature.
pub const HISTOGRAM_BINS: usize = 11;
const PAIR_FEATURES: usize = 3;
/// Mean and standard deviation of neighborhood RGB.
const COLOR_FEATURES: usize = 6;
pub const DESCRIPTOR_DIM: usize = HISTOGRAM_BINS * PAIR_FEATURES + COLOR_FEATURES;
/// Descriptors need at least this many neighbors inside the support radius.
pub const MIN_NEIGHBORS: usize = 5;

/// One point per occupied voxel: the centroid of its members, with averaged
/// color and opacity. Output is ordered by voxel key.
pub fn voxel_downsample(cloud: &ColoredPointCloud, voxel: f64) -> Result<ColoredPointCloud> {
    if !(voxel > 0.0) {
        return Err(crate::error::invalid("voxel", "must be positive"));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud("voxel_downsample input"));
    }
    let mut cells: BTreeMap<[i64; 3], (Vec3, [f64; 3], f64, usize)> = BTreeMap::new();
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let e = cells.entry(key).or_insert((Vec3::zeros(), [0.0; 3], 0.0, 0));
        e.0 += p;
        for c in 0..3 {
            e.1[c] += cloud.colors[i][c];
        }
        e.2 += cloud.opacities[i];
        e.3 += 1;
    }
    let mut out = ColoredPointCloud::default();
    for (_, (sum, col, op, n)) in cells {
        let inv = 1.0 / n as f64;
        out.push(sum * inv, col.map(|c| c * inv), op * inv);
    }
    Ok(out)
}

/// Per-point unit normals. `low_confidence` marks neighborhoods whose
/// covariance has rank below two (e.g. colinear points), where the normal is
/// only constrained to be orthogonal to the dominant direction.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec<Vec3>,
    pub low_confidence: Vec<bool>,
}

/// PCA normals from the `k` nearest neighbors (the point included), oriented
/// to point away from the cloud centroid.
pub fn estimate_normals(cloud: &ColoredPointCloud, k: usize) -> Result<NormalField> {
    if k < 3 {
        return Err(crate::error::invalid("k", "need at least 3 neighbors"));
    }
    if cloud.len() <= k {
        return Err(crate::error::invalid("k", "cloud must have more than k points"));
    }
    let tree = KdTree::new(&cloud.points);
    let centroid = cloud.centroid().unwrap();
    let mut normals = Vec::with_capacity(cloud.len());
    let mut low = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let nn = tree.knn(p, k);
        let mean = nn.iter().map(|(i, _)| cloud.points[*i]).sum::<Vec3>() / nn.len() as f64;
        let mut cov = Mat3::zeros();
        for (i, _) in &nn {
            let d = cloud.points[*i] - mean;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut n: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
        let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        low.push(!(mid > 1e-9 * max.max(f64::MIN_POSITIVE)));
        if n.dot(&(p - centroid)) < 0.0 {
            n = -n;
        }
        normals.push(n.normalize());
    }
    Ok(NormalField {
        normals,
        low_confidence: low,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleLevel {
    Coarse,
    Fine,
}

/// Keypoints with fixed-length descriptors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub keypoints: Vec<Vec3>,
    /// Index of each keypoint in the cloud it was computed from.
    pub source_indices: Vec<usize>,
    pub descriptors: Vec<f64>,
    pub dim: usize,
    pub scale_level: ScaleLevel,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    /// Keeps the listed entries (indices into this set).
    pub fn subset(&self, keep: &[usize], level: ScaleLevel) -> DescriptorSet {
        let mut descriptors = Vec::with_capacity(keep.len() * self.dim);
        for &i in keep {
            descriptors.extend_from_slice(self.descriptor(i));
        }
        DescriptorSet {
            keypoints: keep.iter().map(|&i| self.keypoints[i]).collect(),
            source_indices: keep.iter().map(|&i| self.source_indices[i]).collect(),
            descriptors,
            dim: self.dim,
            scale_level: level,
        }
    }
}

/// Adds `value` in [0, 1] to a histogram with linear interpolation between
/// bin centers, so the result varies continuously with the input.
#[inline]
fn soft_bin(hist: &mut [f64], value: f64, weight: f64) {
    let bins = hist.len();
    let x = value.clamp(0.0, 1.0) * bins as f64 - 0.5;
    if x <= 0.0 {
        hist[0] += weight;
    } else if x >= (bins - 1) as f64 {
        hist[bins - 1] += weight;
    } else {
        let i = x.floor() as usize;
        let t = x - i as f64;
        hist[i] += weight * (1.0 - t);
        hist[i + 1] += weight * t;
    }
}

/// Normal-sign-invariant pair features between oriented points `i` and `j`.
#[inline]
fn pair_features(pi: &Vec3, ni: &Vec3, pj: &Vec3, nj: &Vec3) -> Option<[f64; 3]> {
    let d = pj - pi;
    let len = d.norm();
    if len <= 0.0 {
        return None;
    }
    let d = d / len;
    Some([ni.dot(nj).abs(), ni.dot(&d).abs(), nj.dot(&d).abs()])
}

/// Rotation-invariant descriptors for every point of `cloud` with at least
/// [`MIN_NEIGHBORS`] neighbors within `radius`: a fast point-feature-histogram
/// style aggregation of angular pair features (L1-normalized), followed by the
/// mean and standard deviation of neighborhood color scaled by `color_weight`.
pub fn compute_descriptors_weighted(
    cloud: &ColoredPointCloud,
    normals: &[Vec3],
    radius: f64,
    color_weight: f64,
) -> Result<DescriptorSet> {
    if !(radius > 0.0) {
        return Err(crate::error::invalid("radius", "must be positive"));
    }
    if normals.len() != cloud.len() {
        return Err(crate::error::invalid("normals", "one normal per point required"));
    }
    let tree = KdTree::new(&cloud.points);
    let neighborhoods: Vec<Vec<usize>> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| tree.within_radius(p, radius).into_iter().filter(|&j| j != i).collect())
        .collect();

    let hist_len = HISTOGRAM_BINS * PAIR_FEATURES;
    let mut spfh = alloc::vec![0.0; cloud.len() * hist_len];
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        let h = &mut spfh[i * hist_len..(i + 1) * hist_len];
        let mut count = 0usize;
        for &j in nbrs {
            if let Some(f) = pair_features(&cloud.points[i], &normals[i], &cloud.points[j], &normals[j]) {
                for (k, v) in f.iter().enumerate() {
                    soft_bin(&mut h[k * HISTOGRAM_BINS..(k + 1) * HISTOGRAM_BINS], *v, 1.0);
                }
                count += 1;
            }
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            h.iter_mut().for_each(|v| *v *= inv);
        }
    }

    let mut set = DescriptorSet {
        keypoints: Vec::new(),
        source_indices: Vec::new(),
        descriptors: Vec::new(),
        dim: DESCRIPTOR_DIM,
        scale_level: ScaleLevel::Fine,
    };
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        if nbrs.len() < MIN_NEIGHBORS {
            continue;
        }
        let mut h: Vec<f64> = spfh[i * hist_len..(i + 1) * hist_len].to_vec();
        let mut wsum = 0.0;
        let mut agg = alloc::vec![0.0; hist_len];
        for &j in nbrs {
            let dist = (cloud.points[j] - cloud.points[i]).norm();
            if dist <= 0.0 {
                continue;
            }
            let w = 1.0 / dist;
            wsum += w;
            for (a, s) in agg.iter_mut().zip(&spfh[j * hist_len..(j + 1) * hist_len]) {
                *a += w * s;
            }
        }
        if wsum > 0.0 {
            for (v, a) in h.iter_mut().zip(&agg) {
                *v += a / wsum;
            }
        }
        let total: f64 = h.iter().sum();
        if total > 0.0 {
            h.iter_mut().for_each(|v| *v /= total);
        }

        let members = || core::iter::once(i).chain(nbrs.iter().copied());
        let n = (nbrs.len() + 1) as f64;
        let mut mean = [0.0; 3];
        for j in members() {
            for c in 0..3 {
                mean[c] += cloud.colors[j][c] / n;
            }
        }
        let mut var = [0.0; 3];
        for j in members() {
            for c in 0..3 {
                let d = cloud.colors[j][c] - mean[c];
                var[c] += d * d / n;
            }
        }
        set.keypoints.push(cloud.points[i]);
        set.source_indices.push(i);
        set.descriptors.extend_from_slice(&h);
        set.descriptors.extend(mean.iter().map(|m| m * color_weight));
        set.descriptors.extend(var.iter().map(|v| v.sqrt() * color_weight));
    }
    if set.is_empty() {
        return Err(Error::Degenerate("no point has enough neighbors for a descriptor"));
    }
    Ok(set)
}

/// Default descriptor recipe with unit color weight.
pub fn compute_descriptors(cloud: &ColoredPointCloud, normals: &[Vec3], radius: f64) -> Result<DescriptorSet> {
    compute_descriptors_weighted(cloud, normals, radius, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub index_a: usize,
    pub index_b: usize,
    /// `1 - ratio`, in [0, 1].
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutual nearest neighbors in descriptor space that also pass the ratio
/// test `d1 / d2 < ratio` on the `a` side.
pub fn match_descriptors_with_ratio(a: &DescriptorSet, b: &DescriptorSet, ratio: f64) -> Result<CorrespondenceSet> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud("descriptor set"));
    }
    if a.dim != b.dim {
        return Err(crate::error::invalid("descriptors", "dimension mismatch"));
    }
    let mut best_a = alloc::vec![(usize::MAX, f64::INFINITY, f64::INFINITY); a.len()];
    let mut best_b = alloc::vec![(usize::MAX, f64::INFINITY); b.len()];
    for i in 0..a.len() {
        let da = a.descriptor(i);
        let entry = &mut best_a[i];
        for j in 0..b.len() {
            let d = sq_dist(da, b.descriptor(j));
            if d < entry.1 {
                entry.2 = entry.1;
                entry.0 = j;
                entry.1 = d;
            } else if d < entry.2 {
                entry.2 = d;
            }
            if d < best_b[j].1 {
                best_b[j] = (i, d);
            }
        }
    }
    let mut pairs = Vec::new();
    for (i, &(j, d1, d2)) in best_a.iter().enumerate() {
        if j == usize::MAX || best_b[j].0 != i {
            continue;
        }
        let r = if d2.is_infinite() {
            0.0
        } else if d2 > 0.0 {
            (d1 / d2).sqrt()
        } else {
            1.0
        };
        if r < ratio {
            pairs.push(Correspondence {
                index_a: i,
                index_b: j,
                score: 1.0 - r,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(CorrespondenceSet { pairs })
}

/// [`match_descriptors_with_ratio`] with the default ratio of 0.9.
pub fn match_descriptors(a: &DescriptorSet, b: &DescriptorSet) -> Result<CorrespondenceSet> {
    match_descriptors_with_ratio(a, b, 0.9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, Sim3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, spacing: f64) -> ColoredPointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    pts.push(Vec3::new(i as f64, j as f64, k as f64) * spacing + Vec3::repeat(spacing * 0.5));
                }
            }
        }
        ColoredPointCloud::from_points(pts)
    }

    fn sphere(n: usize, seed: u64) -> ColoredPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = ColoredPointCloud::default();
        while c.len() < n {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.2 && v.norm() < 1.0 {
                let p = v.normalize();
                c.push(p, [0.5 + 0.4 * p.x, 0.5 + 0.4 * p.y, 0.5], 1.0);
            }
        }
        c
    }

    #[test]
    fn voxel_single_and_pair() {
        let one = ColoredPointCloud::from_points(alloc::vec![Vec3::new(0.3, 0.2, 0.1)]);
        assert_eq!(voxel_downsample(&one, 1.0).unwrap(), one);
        let mut two = ColoredPointCloud::default();
        two.push(Vec3::new(0.1, 0.1, 0.1), [0.0; 3], 0.2);
        two.push(Vec3::new(0.3, 0.5, 0.9), [1.0; 3], 0.8);
        let out = voxel_downsample(&two, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Vec3::new(0.2, 0.3, 0.5)).norm() < 1e-12);
        assert_eq!(out.colors[0], [0.5; 3]);
        assert!((out.opacities[0] - 0.5).abs() < 1e-12);
        assert!(voxel_downsample(&ColoredPointCloud::default(), 1.0).is_err());
        assert!(voxel_downsample(&one, 0.0).is_err());
    }

    #[test]
    fn voxel_grid_reduction_matches_hash_oracle() {
        let cloud = grid(16, 0.1);
        let out = voxel_downsample(&cloud, 0.2).unwrap();
        let mut keys = std::collections::HashSet::new();
        for p in &cloud.points {
            keys.insert(((p.x / 0.2).floor() as i64, (p.y / 0.2).floor() as i64, (p.z / 0.2).floor() as i64));
        }
        assert_eq!(out.len(), keys.len());
        assert_eq!(cloud.len() / out.len(), 8);
    }

    #[test]
    fn plane_normals_are_vertical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..400).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0)).collect();
        let field = estimate_normals(&ColoredPointCloud::from_points(pts), 10).unwrap();
        for n in &field.normals {
            assert!((n.z.abs() - 1.0).abs() < 1e-9);
        }
        assert!(field.low_confidence.iter().all(|l| !l));
    }

    #[test]
    fn sphere_normals_are_radial() {
        let c = sphere(2000, 2);
        let field = estimate_normals(&c, 16).unwrap();
        for (p, n) in c.points.iter().zip(&field.normals) {
            assert!(p.dot(n) > 0.99);
        }
    }

    #[test]
    fn colinear_normals_are_orthogonal_and_flagged() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(1.0, 2.0, 3.0) * i as f64).collect();
        let field = estimate_normals(&ColoredPointCloud::from_points(pts), 5).unwrap();
        let dir = Vec3::new(1.0, 2.0, 3.0).normalize();
        for (n, low) in field.normals.iter().zip(&field.low_confidence) {
            assert!(n.dot(&dir).abs() < 1e-6 && (n.norm() - 1.0).abs() < 1e-12);
            assert!(low);
        }
        assert!(estimate_normals(&ColoredPointCloud::from_points(alloc::vec![Vec3::zeros(); 5]), 5).is_err());
    }

    #[test]
    fn descriptors_are_deterministic_and_rotation_invariant() {
        let c = sphere(1500, 3);
        let n = estimate_normals(&c, 16).unwrap().normals;
        let d1 = compute_descriptors(&c, &n, 0.3).unwrap();
        let d2 = compute_descriptors(&c, &n, 0.3).unwrap();
        assert_eq!(d1, d2);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Sim3::from_rotation(random_rotation(&mut rng));
        let rc = c.transformed(&x);
        let rn = estimate_normals(&rc, 16).unwrap().normals;
        let d3 = compute_descriptors(&rc, &rn, 0.3).unwrap();
        assert_eq!(d1.source_indices, d3.source_indices);
        let max = d1.descriptors.iter().zip(&d3.descriptors).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-6, "max diff {max}");
        let hist_sum: f64 = d1.descriptor(0)[..HISTOGRAM_BINS * 3].iter().sum();
        assert!((hist_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plane_and_sphere_descriptors_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plane_pts: Vec<Vec3> = (0..1500)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let plane = ColoredPointCloud::from_points(plane_pts);
        let sph = ColoredPointCloud::from_points(sphere(1500, 6).points);
        let dp = compute_descriptors(&plane, &estimate_normals(&plane, 16).unwrap().normals, 0.4).unwrap();
        let ds = compute_descriptors(&sph, &estimate_normals(&sph, 16).unwrap().normals, 0.4).unwrap();
        let l1: f64 = dp.descriptor(0)[..33].iter().zip(&ds.descriptor(0)[..33]).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 > 0.1, "l1 {l1}");
    }

    #[test]
    fn sparse_points_get_no_descriptor() {
        let c = ColoredPointCloud::from_points((0..10).map(|i| Vec3::new(i as f64 * 10.0, 0.0, 0.0)).collect());
        let n = alloc::vec![Vec3::z(); 10];
        assert!(matches!(compute_descriptors(&c, &n, 1.0), Err(Error::Degenerate(_))));
    }

    fn set_from(rows: &[[f64; 2]]) -> DescriptorSet {
        DescriptorSet {
            keypoints: alloc::vec![Vec3::zeros(); rows.len()],
            source_indices: (0..rows.len()).collect(),
            descriptors: rows.iter().flatten().copied().collect(),
            dim: 2,
            scale_level: ScaleLevel::Fine,
        }
    }

    #[test]
    fn self_matching_is_identity() {
        let s = set_from(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0]]);
        let m = match_descriptors(&s, &s).unwrap();
        assert_eq!(m.len(), 4);
        for p in &m.pairs {
            assert_eq!(p.index_a, p.index_b);
            assert_eq!(p.score, 1.0);
        }
    }

    #[test]
    fn disjoint_distributions_do_not_match() {
        let a = set_from(&[[0.0, 0.0], [0.01, 0.0]]);
        let b = set_from(&[[100.0, 0.0], [100.0, 0.001]]);
        assert_eq!(match_descriptors(&a, &b), Err(Error::NoOverlap));
    }
}
