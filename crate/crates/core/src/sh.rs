//! Real spherical harmonics up to degree 3 and their rotation.
//!
//! Coefficient rotation is built by sampling: for each degree `l`, evaluate the
//! basis at `2l + 1` fixed directions `u_k` (matrix `Q`, one column per
//! direction), evaluate it again at the rotated directions `R u_k`, and solve
//! `block · Q = [SH(R u_k)]` with a pseudo-inverse of `Q`.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Degree-0 basis constant `Y_00 = 1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Highest supported degree.
pub const MAX_DEGREE: usize = 3;
/// Non-DC coefficients per color channel at degree 3.
pub const REST_PER_CHANNEL: usize = 15;

const UNIT_TOLERANCE: f64 = 1e-9;
const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Offset of degree `l` inside a channel's non-DC coefficients.
#[inline]
pub const fn rest_offset(degree: usize) -> usize {
    degree * degree - 1
}

/// All 16 basis values at a unit direction, degree-major, `m = -l..=l` within
/// each degree. Assumes `d` is already normalized.
#[inline]
pub fn basis_all(d: &Vec3) -> [f64; 16] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Basis values of a single degree at `direction`, ordered `m = -degree..=degree`.
pub fn eval_sh_basis(degree: usize, direction: &Vec3) -> Result<Vec<f64>> {
    if degree > MAX_DEGREE {
        return Err(crate::error::invalid("degree", "must be in 0..=3"));
    }
    let n = direction.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitDirection(n));
    }
    let all = basis_all(direction);
    let start = degree * degree;
    Ok(all[start..start + 2 * degree + 1].to_vec())
}

/// Evaluates an RGB SH expansion (plus the 0.5 offset used by splat
/// renderers) in `direction`; negative values are clamped to zero.
pub fn eval_color(sh_dc: &[f64; 3], sh_rest: &[f64], direction: &Vec3) -> [f64; 3] {
    let basis = basis_all(direction);
    let per_channel = sh_rest.len() / 3;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut v = SH_C0 * sh_dc[c];
        let rest = &sh_rest[c * per_channel..(c + 1) * per_channel];
        for (coef, b) in rest.iter().zip(&basis[1..]) {
            v += coef * b;
        }
        *o = (v + 0.5).max(0.0);
    }
    out
}

/// `2l + 1` deterministic directions: the first `2l + 1` points of a
/// `2l + 2` point Fibonacci lattice. A lattice with an odd point count is
/// symmetric in z, which makes the degree-1 sample matrix exactly singular.
pub fn sample_directions(degree: usize) -> Vec<Vec3> {
    let n = 2 * degree + 1;
    let lattice = (n + 1) as f64;
    let golden = core::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / lattice;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Moore-Penrose pseudo-inverse via SVD with a relative singular-value cutoff.
/// Returns the inverse and the number of retained singular values.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * PINV_RELATIVE_CUTOFF;
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let mut inv = DMatrix::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            inv += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    (inv, rank)
}

/// Per-degree coefficient transforms for one rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct ShRotation {
    /// `blocks[l]` is `(2l+1)×(2l+1)`.
    pub blocks: Vec<DMatrix<f64>>,
}

impl ShRotation {
    pub fn identity() -> Self {
        Self {
            blocks: (0..=MAX_DEGREE)
                .map(|l| DMatrix::identity(2 * l + 1, 2 * l + 1))
                .collect(),
        }
    }

    /// Blockwise product `self · other`.
    pub fn compose(&self, other: &ShRotation) -> ShRotation {
        ShRotation {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

/// Builds the coefficient rotation for a 3×3 rotation `r`. Only the rotation
/// acts on the sample directions; scale and translation cannot change a
/// unit viewing direction.
pub fn build_sh_rotation(r: &Mat3) -> Result<ShRotation> {
    let mut blocks = Vec::with_capacity(MAX_DEGREE + 1);
    for degree in 0..=MAX_DEGREE {
        let n = 2 * degree + 1;
        let dirs = sample_directions(degree);
        let mut q = DMatrix::zeros(n, n);
        let mut q_rot = DMatrix::zeros(n, n);
        for (k, u) in dirs.iter().enumerate() {
            let rotated = (r * u).normalize();
            let start = degree * degree;
            let b = basis_all(u);
            let br = basis_all(&rotated);
            for m in 0..n {
                q[(m, k)] = b[start + m];
                q_rot[(m, k)] = br[start + m];
            }
        }
        let (q_inv, rank) = pseudo_inverse(&q);
        if rank < n {
            return Err(Error::RankDeficient { degree });
        }
        blocks.push(q_rot * q_inv);
    }
    Ok(ShRotation { blocks })
}

/// Rotates one Gaussian's coefficients. `sh_rest` holds 15 coefficients per
/// channel (channel-major) for degree-3 data, or is empty.
pub fn apply_sh_rotation(rot: &ShRotation, sh_dc: &[f64; 3], sh_rest: &[f64]) -> ([f64; 3], Vec<f64>) {
    let mut out = sh_rest.to_vec();
    let per_channel = sh_rest.len() / 3;
    for c in 0..3 {
        let chan = &sh_rest[c * per_channel..(c + 1) * per_channel];
        for degree in 1..=MAX_DEGREE {
            let off = rest_offset(degree);
            let n = 2 * degree + 1;
            if off + n > per_channel {
                break;
            }
            let block = &rot.blocks[degree];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += block[(i, j)] * chan[off + j];
                }
                out[c * per_channel + off + i] = acc;
            }
        }
    }
    (*sh_dc, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent real-SH oracle: associated Legendre recurrence with the
    // Condon-Shortley phase and explicit normalization.
    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    fn legendre(l: i32, m: i32, x: f64) -> f64 {
        let mut pmm = 1.0;
        if m > 0 {
            let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
            let mut fact = 1.0;
            for _ in 0..m {
                pmm *= -fact * somx2;
                fact += 2.0;
            }
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    fn oracle(l: i32, m: i32, d: &Vec3) -> f64 {
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x);
        let am = m.abs();
        let k = ((2 * l + 1) as f64 / (4.0 * core::f64::consts::PI) * factorial((l - am) as u32)
            / factorial((l + am) as u32))
        .sqrt();
        let p = legendre(l, am, theta.cos());
        if m == 0 {
            k * p
        } else if m > 0 {
            2.0_f64.sqrt() * k * (m as f64 * phi).cos() * p
        } else {
            2.0_f64.sqrt() * k * (am as f64 * phi).sin() * p
        }
    }

    fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn expansion(coeffs: &[f64; 16], d: &Vec3) -> f64 {
        basis_all(d).iter().zip(coeffs).map(|(b, c)| b * c).sum()
    }

    #[test]
    fn degree_zero_is_constant() {
        let v = eval_sh_basis(0, &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] - 0.28209479177).abs() < 1e-11);
    }

    #[test]
    fn degree_one_on_z_axis_is_axial() {
        let v = eval_sh_basis(1, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 0.0);
        assert!((v[1] - 0.4886025119).abs() < 1e-10);
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(matches!(
            eval_sh_basis(1, &Vec3::new(0.0, 0.0, 2.0)),
            Err(Error::NonUnitDirection(_))
        ));
    }

    #[test]
    fn basis_matches_legendre_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = random_dir(&mut rng);
            for l in 0..=3 {
                let vals = eval_sh_basis(l, &d).unwrap();
                for (i, v) in vals.iter().enumerate() {
                    let m = i as i32 - l as i32;
                    assert!((v - oracle(l as i32, m, &d)).abs() < 1e-12, "l={l} m={m}");
                }
            }
        }
    }

    #[test]
    fn sample_matrices_are_full_rank() {
        for degree in 0..=MAX_DEGREE {
            let n = 2 * degree + 1;
            let dirs = sample_directions(degree);
            let mut q = DMatrix::zeros(n, n);
            for (k, u) in dirs.iter().enumerate() {
                let b = eval_sh_basis(degree, u).unwrap();
                for m in 0..n {
                    q[(m, k)] = b[m];
                }
            }
            let (_, rank) = pseudo_inverse(&q);
            assert_eq!(rank, n, "degree {degree}");
        }
    }

    #[test]
    fn identity_rotation_gives_identity_blocks() {
        let rot = build_sh_rotation(&Mat3::identity()).unwrap();
        for (l, b) in rot.blocks.iter().enumerate() {
            assert!((b - DMatrix::<f64>::identity(2 * l + 1, 2 * l + 1)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn degree_zero_block_is_one_and_blocks_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let rot = build_sh_rotation(&random_rotation(&mut rng)).unwrap();
            assert!((rot.blocks[0][(0, 0)] - 1.0).abs() < 1e-12);
            for b in &rot.blocks {
                let n = b.nrows();
                assert!((b.transpose() * b - DMatrix::<f64>::identity(n, n)).abs().max() < 1e-5);
            }
        }
    }

    #[test]
    fn quarter_turn_about_z_rotates_degree_one() {
        let r = axis_angle(Vec3::z(), core::f64::consts::FRAC_PI_2);
        let rot = build_sh_rotation(&r).unwrap();
        let b = &rot.blocks[1];
        // Degree-1 components are (-y, z, -x); a quarter turn about z sends
        // x -> y and y -> -x, so the m=-1 and m=1 components trade places.
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        assert!((b - expected).abs().max() < 1e-9, "{b}");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut coeffs = [0.0; 16];
        for c in coeffs.iter_mut().take(4).skip(1) {
            *c = rng.random_range(-1.0..1.0);
        }
        let rotated = rotate_flat(&rot, &coeffs);
        for _ in 0..50 {
            let d = random_dir(&mut rng);
            assert!((expansion(&rotated, &(r * d)) - expansion(&coeffs, &d)).abs() < 1e-9);
        }
    }

    fn rotate_flat(rot: &ShRotation, coeffs: &[f64; 16]) -> [f64; 16] {
        // Single-channel helper: pack into the 3-channel layout and back.
        let mut rest = alloc::vec![0.0; 45];
        rest[..15].copy_from_slice(&coeffs[1..]);
        let (_, out) = apply_sh_rotation(rot, &[coeffs[0]; 3], &rest);
        let mut res = [0.0; 16];
        res[0] = coeffs[0];
        res[1..].copy_from_slice(&out[..15]);
        res
    }

    #[test]
    fn rotated_expansion_matches_original_on_rotated_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let rot = build_sh_rotation(&r).unwrap();
            let mut coeffs = [0.0; 16];
            for c in coeffs.iter_mut() {
                *c = rng.random_range(-1.0..1.0);
            }
            let rotated = rotate_flat(&rot, &coeffs);
            for _ in 0..100 {
                let d = random_dir(&mut rng);
                let err = (expansion(&rotated, &(r * d)) - expansion(&coeffs, &d)).abs();
                assert!(err < 1e-5, "err {err}");
            }
        }
    }

    #[test]
    fn composition_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let (r1, r2) = (random_rotation(&mut rng), random_rotation(&mut rng));
            let lhs = build_sh_rotation(&(r1 * r2)).unwrap();
            let rhs = build_sh_rotation(&r1).unwrap().compose(&build_sh_rotation(&r2).unwrap());
            for (a, b) in lhs.blocks.iter().zip(&rhs.blocks) {
                assert!((a - b).abs().max() < 1e-5);
            }
        }
    }

    #[test]
    fn apply_identity_and_zero_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let dc = [0.1, -0.2, 0.3];
        let rest: Vec<f64> = (0..45).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (dc2, rest2) = apply_sh_rotation(&ShRotation::identity(), &dc, &rest);
        assert_eq!(dc2, dc);
        assert_eq!(rest2, rest);

        let rot = build_sh_rotation(&random_rotation(&mut rng)).unwrap();
        let (dc3, rest3) = apply_sh_rotation(&rot, &dc, &[0.0; 45]);
        assert_eq!(dc3, dc);
        assert!(rest3.iter().all(|v| *v == 0.0));
        let (_, empty) = apply_sh_rotation(&rot, &dc, &[]);
        assert!(empty.is_empty());
    }

    #[test]
    fn dc_only_color_is_view_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dc = [0.4, -0.9, 1.3];
        let rest = [0.0; 45];
        let c0 = eval_color(&dc, &rest, &random_dir(&mut rng));
        for _ in 0..20 {
            assert_eq!(eval_color(&dc, &rest, &random_dir(&mut rng)), c0);
        }
    }
}
