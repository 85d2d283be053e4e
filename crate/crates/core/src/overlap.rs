//! Picking the cameras of two scenes that see the most common geometry.

use alloc::vec::Vec;

use crate::config::OverlapConfig;
use crate::error::{Error, Result};
use crate::fusion::transform_model;
use crate::geometry::{CameraPose, Sim3};
use crate::model::GaussianModel;
use crate::render::{render_depth, DepthMap};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraPairScore {
    pub index_a: usize,
    pub index_b: usize,
    /// Cosine between the two optical axes.
    pub orientation_cos: f64,
    /// Filled in only for pairs that pass the orientation filter.
    pub covisibility: Option<f64>,
}

/// `n` evenly spaced indices into `len` items (all of them when `len <= n`).
pub fn subsample_indices(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n).collect()
}

pub fn subsample_cameras(cams: &[CameraPose], n: usize) -> Vec<CameraPose> {
    subsample_indices(cams.len(), n).into_iter().map(|i| cams[i]).collect()
}

/// Center `c -> s R c + T`, orientation `R · R_cam`, intrinsics unchanged.
#[inline]
pub fn apply_sim3_to_camera(cam: &CameraPose, x: &Sim3) -> CameraPose {
    cam.transformed(x)
}

/// Scores every pair by the cosine of the optical axes and keeps the `k`
/// best; ties (within 1e-9) go to the smaller `(index_a, index_b)`.
pub fn orientation_topk(a: &[CameraPose], b_aligned: &[CameraPose], k: usize) -> Vec<CameraPairScore> {
    let mut all: Vec<CameraPairScore> = a
        .iter()
        .enumerate()
        .flat_map(|(i, ca)| {
            b_aligned.iter().enumerate().map(move |(j, cb)| CameraPairScore {
                index_a: i,
                index_b: j,
                orientation_cos: ca.forward().dot(&cb.forward()).clamp(-1.0, 1.0),
                covisibility: None,
            })
        })
        .collect();
    all.sort_by(|x, y| {
        quantized(y.orientation_cos)
            .cmp(&quantized(x.orientation_cos))
            .then(x.index_a.cmp(&y.index_a))
            .then(x.index_b.cmp(&y.index_b))
    });
    all.truncate(k);
    all
}

/// Rounds to 1e-9 so ranking ignores floating-point noise.
fn quantized(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

/// Fraction of the valid pixels of `from` that `to_cam` sees at a consistent
/// depth in `to`.
fn visible_fraction(from: &DepthMap, from_cam: &CameraPose, to: &DepthMap, to_cam: &CameraPose, tolerance: f64) -> Option<f64> {
    let (mut valid, mut seen) = (0usize, 0usize);
    for y in 0..from.height {
        for x in 0..from.width {
            let d = from.get(x, y);
            if d <= 0.0 {
                continue;
            }
            valid += 1;
            let p = from_cam.backproject(x as f64, y as f64, d);
            let Some((px, z)) = to_cam.project(&p) else { continue };
            let (u, v) = (px.x.round(), px.y.round());
            if u < 0.0 || v < 0.0 || u >= to.width as f64 || v >= to.height as f64 {
                continue;
            }
            let dt = to.get(u as u32, v as u32);
            if dt > 0.0 && (z - dt).abs() <= tolerance * dt {
                seen += 1;
            }
        }
    }
    (valid > 0).then(|| seen as f64 / valid as f64)
}

/// Averaged two-way visibility between `cam_a` over `model_a` and `cam_b`
/// over `model_b_aligned`, both already in A's frame.
pub fn covisibility(
    cam_a: &CameraPose,
    cam_b: &CameraPose,
    model_a: &GaussianModel,
    model_b_aligned: &GaussianModel,
    width: u32,
    height: u32,
    depth_tolerance: f64,
) -> f64 {
    let (ca, cb) = (cam_a.with_resolution(width, height), cam_b.with_resolution(width, height));
    let da = render_depth(model_a, &ca, width, height);
    let db = render_depth(model_b_aligned, &cb, width, height);
    covisibility_of_maps(&da, &ca, &db, &cb, depth_tolerance)
}

/// [`covisibility`] from already rendered depth maps. Cameras must match the
/// map resolution.
pub fn covisibility_of_maps(da: &DepthMap, ca: &CameraPose, db: &DepthMap, cb: &CameraPose, depth_tolerance: f64) -> f64 {
    let ab = visible_fraction(da, ca, db, cb, depth_tolerance).unwrap_or(0.0);
    let ba = visible_fraction(db, cb, da, ca, depth_tolerance).unwrap_or(0.0);
    0.5 * (ab + ba)
}

/// Cameras chosen for the fine stage.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSelection {
    /// Indices into A's cameras, best camera first.
    pub indices_a: Vec<usize>,
    /// Indices into B's cameras, best camera first.
    pub indices_b: Vec<usize>,
    pub cameras_a: Vec<CameraPose>,
    /// B's cameras in B's own frame.
    pub cameras_b: Vec<CameraPose>,
    /// Orientation-filtered pairs with their covisibility, indices referring
    /// to the full camera lists.
    pub scores: Vec<CameraPairScore>,
    pub best: CameraPairScore,
}

/// Indices of the `n` cameras closest to `cams[center]`, itself first; ties by index.
fn neighborhood(cams: &[CameraPose], center: usize, n: usize) -> Vec<usize> {
    let c = cams[center].center();
    let mut idx: Vec<usize> = (0..cams.len()).collect();
    idx.sort_by(|&i, &j| {
        let (di, dj) = ((cams[i].center() - c).norm_squared(), (cams[j].center() - c).norm_squared());
        (i != center).cmp(&(j != center)).then(di.total_cmp(&dj)).then(i.cmp(&j))
    });
    idx.truncate(n);
    idx
}

/// Subsamples both camera sets, keeps the best-aligned pairs under `coarse`,
/// scores them by covisibility and returns the neighborhoods of the winner.
pub fn select_overlap_cameras(
    model_a: &GaussianModel,
    model_b: &GaussianModel,
    coarse: &Sim3,
    cfg: &OverlapConfig,
) -> Result<OverlapSelection> {
    cfg.validate()?;
    if model_a.cameras.is_empty() || model_b.cameras.is_empty() {
        return Err(crate::error::invalid("cameras", "both models need cameras"));
    }
    let sub_a = subsample_indices(model_a.cameras.len(), cfg.subset_size);
    let sub_b = subsample_indices(model_b.cameras.len(), cfg.subset_size);
    let cams_a: Vec<CameraPose> = sub_a.iter().map(|&i| model_a.cameras[i]).collect();
    let cams_b: Vec<CameraPose> = sub_b.iter().map(|&i| apply_sim3_to_camera(&model_b.cameras[i], coarse)).collect();
    let b_aligned = transform_model(model_b, coarse)?;

    let (w, h) = (cfg.render_size, cfg.render_size);
    let mut scores = orientation_topk(&cams_a, &cams_b, cfg.top_k);
    for s in &mut scores {
        let v = covisibility(&cams_a[s.index_a], &cams_b[s.index_b], model_a, &b_aligned, w, h, cfg.depth_tolerance);
        s.covisibility = Some(v);
        s.index_a = sub_a[s.index_a];
        s.index_b = sub_b[s.index_b];
    }
    let best = scores
        .iter()
        .fold(None::<&CameraPairScore>, |acc, s| match acc {
            Some(b) if quantized(b.covisibility.unwrap_or(0.0)) >= quantized(s.covisibility.unwrap_or(0.0)) => Some(b),
            _ => Some(s),
        })
        .cloned()
        .ok_or(Error::InsufficientOverlap { best: 0.0 })?;
    let best_cov = best.covisibility.unwrap_or(0.0);
    if best_cov < cfg.min_covisibility {
        return Err(Error::InsufficientOverlap { best: best_cov });
    }
    let indices_a = neighborhood(&model_a.cameras, best.index_a, cfg.neighborhood);
    let indices_b = neighborhood(&model_b.cameras, best.index_b, cfg.neighborhood);
    Ok(OverlapSelection {
        cameras_a: indices_a.iter().map(|&i| model_a.cameras[i]).collect(),
        cameras_b: indices_b.iter().map(|&i| model_b.cameras[i]).collect(),
        indices_a,
        indices_b,
        scores,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, Vec3};
    use crate::synth::{make_synthetic_scene_pair, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(overlap: f64) -> SynthConfig {
        SynthConfig { gaussian_count: 15_000, overlap, ..SynthConfig::default() }
    }

    #[test]
    fn subsampling_cases() {
        assert_eq!(subsample_indices(90, 30), (0..30).map(|i| 3 * i).collect::<Vec<_>>());
        assert_eq!(subsample_indices(10, 30), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_indices(7, 1), alloc::vec![0]);
    }

    #[test]
    fn camera_transform_preserves_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cam = CameraPose::look_along(Vec3::new(0.5, -1.0, 1.0), Vec3::new(1.0, 0.2, -0.1), Vec3::z(), 200.0, 320, 240);
        assert_eq!(apply_sim3_to_camera(&cam, &Sim3::identity()), cam);
        let shifted = apply_sim3_to_camera(&cam, &Sim3::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(shifted.rotation, cam.rotation);
        assert!((shifted.center() - cam.center() - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        for _ in 0..50 {
            let x = Sim3 {
                scale: rng.random_range(0.3..3.0),
                rotation: random_rotation(&mut rng),
                translation: Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.3),
            };
            let p = cam.backproject(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0), rng.random_range(0.5..9.0));
            let (u1, z1) = cam.project(&p).unwrap();
            let (u2, z2) = apply_sim3_to_camera(&cam, &x).project(&x.apply(&p)).unwrap();
            assert!((u1 - u2).norm() < 1e-9 && (z2 - z1 * x.scale).abs() < 1e-9);
        }
    }

    #[test]
    fn orientation_ranking() {
        let cams: Vec<CameraPose> = (0..6)
            .map(|i| {
                let yaw = i as f64;
                CameraPose::look_along(Vec3::zeros(), Vec3::new(yaw.cos(), yaw.sin(), 0.0), Vec3::z(), 100.0, 64, 64)
            })
            .collect();
        let top = orientation_topk(&cams, &cams, 1);
        assert_eq!((top[0].index_a, top[0].index_b), (0, 0));
        assert!((top[0].orientation_cos - 1.0).abs() < 1e-12);
        let all = orientation_topk(&cams, &cams, 100);
        assert_eq!(all.len(), 36);
        assert!(all.windows(2).all(|w| w[0].orientation_cos >= w[1].orientation_cos - 1e-9));

        let back = [CameraPose::look_along(Vec3::zeros(), -Vec3::x(), Vec3::z(), 100.0, 64, 64)];
        let top = orientation_topk(&cams[..1], &back, 10);
        assert!((top[0].orientation_cos + 1.0).abs() < 1e-12);
    }

    #[test]
    fn covisibility_extremes() {
        let pair = make_synthetic_scene_pair(3, &small_cfg(1.0)).unwrap();
        let m = &pair.model_a;
        let cam = m.cameras[0];
        assert!((covisibility(&cam, &cam, m, m, 64, 64, 0.05) - 1.0).abs() < 1e-12);
        let far = CameraPose { translation: cam.translation + Vec3::new(1000.0, 0.0, 0.0), ..cam };
        assert_eq!(covisibility(&cam, &far, m, m, 64, 64, 0.05), 0.0);
    }

    #[test]
    fn covisibility_is_symmetric_and_matches_brute_force() {
        let pair = make_synthetic_scene_pair(4, &small_cfg(1.0)).unwrap();
        let m = &pair.model_a;
        let (w, h) = (48, 48);
        let ca = m.cameras[2].with_resolution(w, h);
        // camera shifted sideways and turned so half the view is shared
        let turn = crate::geometry::axis_angle(Vec3::z(), 30f64.to_radians());
        let cb = CameraPose { rotation: turn * ca.rotation, translation: ca.translation + Vec3::new(0.0, 0.3, 0.0), ..ca };
        let v = covisibility(&ca, &cb, m, m, w, h, 0.05);
        assert!((v - covisibility(&cb, &ca, m, m, w, h, 0.05)).abs() < 1e-12);
        assert!(v > 0.2 && v < 0.8, "{v}");

        let da = render_depth(m, &ca, w, h);
        let db = render_depth(m, &cb, w, h);
        let brute = |from: &DepthMap, fc: &CameraPose, to: &DepthMap, tc: &CameraPose| {
            let mut pts = Vec::new();
            for (k, d) in from.data.iter().enumerate() {
                if *d > 0.0 {
                    let (x, y) = (k as u32 % w, k as u32 / w);
                    pts.push(fc.backproject(x as f64, y as f64, *d));
                }
            }
            let seen = pts
                .iter()
                .filter(|p| {
                    let c = tc.world_to_camera(p);
                    if c.z <= 0.0 {
                        return false;
                    }
                    let u = (tc.fx * c.x / c.z + tc.cx).round();
                    let v = (tc.fy * c.y / c.z + tc.cy).round();
                    if !(0.0..w as f64).contains(&u) || !(0.0..h as f64).contains(&v) {
                        return false;
                    }
                    let dt = to.data[(v as u32 * w + u as u32) as usize];
                    dt > 0.0 && (c.z - dt).abs() <= 0.05 * dt
                })
                .count();
            seen as f64 / pts.len() as f64
        };
        let oracle = 0.5 * (brute(&da, &ca, &db, &cb) + brute(&db, &cb, &da, &ca));
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn identical_models_pick_the_same_camera() {
        let pair = make_synthetic_scene_pair(5, &small_cfg(1.0)).unwrap();
        let m = &pair.model_a;
        let sel = select_overlap_cameras(m, m, &Sim3::identity(), &OverlapConfig::default()).unwrap();
        assert_eq!(sel.best.index_a, sel.best.index_b);
        assert!((sel.best.covisibility.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sel.cameras_a.len(), 5);
        assert_eq!(sel.indices_a[0], sel.best.index_a);
        assert!(sel.scores.len() <= 10);
    }

    #[test]
    fn selection_is_invariant_to_reframing_b() {
        let pair = make_synthetic_scene_pair(6, &small_cfg(0.5)).unwrap();
        let cfg = OverlapConfig::default();
        let base = select_overlap_cameras(&pair.model_a, &pair.model_b, &pair.ground_truth, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = Sim3 { scale: 1.3, rotation: random_rotation(&mut rng), translation: Vec3::new(4.0, -2.0, 1.0) };
        let moved_b = transform_model(&pair.model_b, &y).unwrap();
        let coarse = pair.ground_truth.compose(&y.inverse());
        let again = select_overlap_cameras(&pair.model_a, &moved_b, &coarse, &cfg).unwrap();
        assert_eq!(base.indices_a, again.indices_a);
        assert_eq!(base.indices_b, again.indices_b);
    }

    #[test]
    fn disjoint_scenes_report_insufficient_overlap() {
        let pair = make_synthetic_scene_pair(7, &small_cfg(0.5)).unwrap();
        let away = Sim3::from_translation(Vec3::new(500.0, 0.0, 0.0)).compose(&pair.ground_truth);
        let err = select_overlap_cameras(&pair.model_a, &pair.model_b, &away, &OverlapConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientOverlap { .. }));
    }

    #[test]
    fn selected_pair_beats_most_candidates() {
        let cfg = OverlapConfig::default();
        for seed in 0..3 {
            let pair = make_synthetic_scene_pair(20 + seed, &small_cfg(0.4)).unwrap();
            let sel = select_overlap_cameras(&pair.model_a, &pair.model_b, &pair.ground_truth, &cfg).unwrap();
            let b_aligned = transform_model(&pair.model_b, &pair.ground_truth).unwrap();
            let sub_a = subsample_cameras(&pair.model_a.cameras, cfg.subset_size);
            let sub_b = subsample_cameras(&b_aligned.cameras, cfg.subset_size);
            let mut all: Vec<f64> = sub_a
                .iter()
                .flat_map(|ca| sub_b.iter().map(move |cb| (ca, cb)))
                .map(|(ca, cb)| covisibility(ca, cb, &pair.model_a, &b_aligned, 64, 64, 0.05))
                .collect();
            all.sort_by(f64::total_cmp);
            let p90 = all[(0.9 * (all.len() - 1) as f64).round() as usize];
            assert!(sel.best.covisibility.unwrap() > p90);
        }
    }
}
