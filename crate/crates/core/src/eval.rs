//! Registration and depth error metrics.

use crate::error::{invalid, Error, Result};
use crate::geometry::{is_rotation, Mat3, Sim3, Vec3};
use crate::render::DepthMap;

/// Below this ground-truth translation norm, translation error is reported
/// as an absolute distance.
pub const TRANSLATION_EPSILON: f64 = 1e-9;
/// Rotation error (degrees) under which a registration counts as successful.
pub const DEFAULT_SUCCESS_DEGREES: f64 = 15.0;

/// Geodesic angle between two rotations, in degrees.
///
/// Equal to `acos((tr(R_est^T R_gt) - 1) / 2)`, but taken through `atan2` of
/// the sine and cosine so small angles keep full precision.
pub fn rre(r_est: &Mat3, r_gt: &Mat3) -> Result<f64> {
    if !is_rotation(r_est, 1e-6) || !is_rotation(r_gt, 1e-6) {
        return Err(Error::NotARotation);
    }
    let m = r_est.transpose() * r_gt;
    let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let s = 0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    Ok(s.atan2(c).to_degrees())
}

/// Translation error relative to the ground-truth norm, or the absolute
/// distance (flagged `true`) when that norm is essentially zero.
pub fn rte(t_est: &Vec3, t_gt: &Vec3) -> (f64, bool) {
    let err = (t_est - t_gt).norm();
    let n = t_gt.norm();
    if n > TRANSLATION_EPSILON {
        (err / n, false)
    } else {
        (err, true)
    }
}

pub fn rse(s_est: f64, s_gt: f64) -> Result<f64> {
    if !(s_gt > 0.0) {
        return Err(invalid("s_gt", "ground-truth scale must be positive"));
    }
    Ok((s_est - s_gt).abs() / s_gt)
}

/// Mean relative depth error over pixels valid in both maps.
pub fn rde(est: &DepthMap, gt: &DepthMap) -> Result<f64> {
    if est.width != gt.width || est.height != gt.height {
        return Err(invalid("depth", "resolutions differ"));
    }
    let (sum, n) = est
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(e, g)| **e > 0.0 && **g > 0.0)
        .fold((0.0, 0usize), |(s, n), (e, g)| (s + (e - g).abs() / g, n + 1));
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub rre: f64,
    pub rte: f64,
    /// `rte` is an absolute distance because the ground-truth translation is zero.
    pub rte_absolute: bool,
    pub rse: f64,
    pub rde: Option<f64>,
    pub success: bool,
}

/// Compares an estimated similarity with the ground truth.
pub fn evaluate(est: &Sim3, gt: &Sim3, success_degrees: f64) -> Result<MetricReport> {
    let rot = rre(&est.rotation, &gt.rotation)?;
    let (t, absolute) = rte(&est.translation, &gt.translation);
    Ok(MetricReport {
        rre: rot,
        rte: t,
        rte_absolute: absolute,
        rse: rse(est.scale, gt.scale)?,
        rde: None,
        success: rot < success_degrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, random_rotation};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rotation_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_rotation(&mut rng);
        assert!(rre(&r, &r).unwrap() < 1e-6);
        for axis in [Vec3::x(), Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)] {
            let d = axis_angle(axis, 30f64.to_radians());
            assert!((rre(&(r * d), &r).unwrap() - 30.0).abs() < 1e-6);
        }
        let flip = Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0));
        assert!((rre(&(r * flip), &r).unwrap() - 180.0).abs() < 1e-6);
        assert!(rre(&Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0)), &r).is_err());
        let tiny = axis_angle(Vec3::new(0.2, -1.0, 0.4), 1e-9);
        assert!((rre(&(r * tiny), &r).unwrap() - 1e-9f64.to_degrees()).abs() < 1e-15);
    }

    #[test]
    fn translation_and_scale_cases() {
        assert_eq!(rte(&Vec3::x(), &Vec3::x()), (0.0, false));
        let (e, abs) = rte(&Vec3::new(1.1, 0.0, 0.0), &Vec3::x());
        assert!((e - 0.1).abs() < 1e-12 && !abs);
        assert!(rte(&Vec3::x(), &Vec3::zeros()).1);
        assert_eq!(rse(1.0, 1.0).unwrap(), 0.0);
        assert!((rse(1.05, 1.0).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(rse(2.0, 4.0).unwrap(), 0.5);
        assert!(rse(1.0, 0.0).is_err());
    }

    #[test]
    fn depth_error_cases() {
        let gt = DepthMap { data: vec![1.0, 2.0, 0.0, 4.0], width: 2, height: 2 };
        assert_eq!(rde(&gt, &gt).unwrap(), 0.0);
        let est = DepthMap { data: gt.data.iter().map(|d| d * 1.1).collect(), ..gt.clone() };
        assert!((rde(&est, &gt).unwrap() - 0.1).abs() < 1e-12);
        let disjoint = DepthMap { data: vec![0.0, 0.0, 3.0, 0.0], width: 2, height: 2 };
        assert!(matches!(rde(&disjoint, &gt), Err(Error::NoValidPixels)));
    }

    #[test]
    fn success_flag_uses_threshold() {
        let gt = Sim3::identity();
        let est = Sim3::from_rotation(axis_angle(Vec3::z(), 10f64.to_radians()));
        assert!(evaluate(&est, &gt, 15.0).unwrap().success);
        assert!(!evaluate(&est, &gt, 5.0).unwrap().success);
    }

    fn rot_strategy() -> impl Strategy<Value = Mat3> {
        any::<u64>().prop_map(|s| random_rotation(&mut ChaCha8Rng::seed_from_u64(s)))
    }

    proptest! {
        #[test]
        fn rre_is_symmetric(a in rot_strategy(), b in rot_strategy()) {
            prop_assert!((rre(&a, &b).unwrap() - rre(&b, &a).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn rre_is_right_invariant(a in rot_strategy(), b in rot_strategy(), q in rot_strategy()) {
            let base = rre(&a, &b).unwrap();
            prop_assert!((rre(&(a * q), &(b * q)).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn rre_agrees_with_trace_formula(a in rot_strategy(), b in rot_strategy()) {
            let c = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            prop_assert!((rre(&a, &b).unwrap() - c.acos().to_degrees()).abs() < 1e-6);
        }

        #[test]
        fn metrics_are_non_negative(a in rot_strategy(), s in 0.1f64..10.0, t in -5.0f64..5.0) {
            let r = evaluate(&Sim3 { scale: s, rotation: a, translation: Vec3::repeat(t) }, &Sim3::identity(), 15.0).unwrap();
            prop_assert!(r.rre >= 0.0 && r.rre <= 180.0 && r.rte >= 0.0 && r.rse >= 0.0);
        }
    }
}
