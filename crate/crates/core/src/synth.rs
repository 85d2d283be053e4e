//! Synthetic box-room scenes split into two overlapping, independently
//! transformed Gaussian models with known ground truth.

use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::geometry::{axis_angle, random_rotation, CameraPose, Mat3, Sim3, Vec3};
use crate::fusion::transform_model;
use crate::model::{logit, Gaussian, GaussianModel};
use crate::sh::{REST_PER_CHANNEL, SH_C0};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    /// Room extent along x, y, z (z up).
    pub room_size: [f64; 3],
    pub gaussian_count: usize,
    /// Shared fraction of each sub-volume's x extent, in (0, 1].
    pub overlap: f64,
    pub cameras_per_side: usize,
    pub furniture: usize,
    /// Fraction of Gaussians placed as low-opacity floaters.
    pub floater_fraction: f64,
    /// Apply a random similarity to model B; identity when false.
    pub perturb: bool,
    pub scale_range: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            room_size: [8.0, 6.0, 3.0],
            gaussian_count: 40_000,
            overlap: 0.5,
            cameras_per_side: 40,
            furniture: 6,
            floater_fraction: 0.03,
            perturb: true,
            scale_range: [0.7, 1.4],
            image_width: 320,
            image_height: 240,
            focal: 240.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(invalid("overlap", "must lie in (0, 1]"));
        }
        if self.room_size.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("room_size", "extents must be positive"));
        }
        if self.gaussian_count == 0 {
            return Err(invalid("gaussian_count", "must be positive"));
        }
        if self.cameras_per_side == 0 {
            return Err(invalid("cameras_per_side", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.floater_fraction) {
            return Err(invalid("floater_fraction", "must lie in [0, 1)"));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid("scale_range", "need 0 < min <= max"));
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.focal > 0.0) {
            return Err(invalid("camera", "resolution and focal must be positive"));
        }
        Ok(())
    }

    /// Width of each sub-volume along x.
    pub fn sub_width(&self) -> f64 {
        self.room_size[0] / (2.0 - self.overlap)
    }

    /// x ranges of the A and B sub-volumes.
    pub fn sub_ranges(&self) -> ([f64; 2], [f64; 2]) {
        let half = self.room_size[0] / 2.0;
        let w = self.sub_width();
        ([-half, -half + w], [half - w, half])
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub model_a: GaussianModel,
    pub model_b: GaussianModel,
    /// Maps B's frame into A's frame.
    pub ground_truth: Sim3,
    /// Positions of B's Gaussians before the perturbation, in A's frame.
    pub source_positions_b: Vec<Vec3>,
}

struct Surface {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    base: [f64; 3],
    /// (frequency u, frequency v, phase) per wave.
    waves: [(f64, f64, f64); 3],
}

impl Surface {
    fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }

    fn normal(&self) -> Vec3 {
        self.u.cross(&self.v).normalize()
    }

    fn pattern(&self, a: f64, b: f64) -> f64 {
        let (la, lb) = (a * self.u.norm(), b * self.v.norm());
        let s: f64 = self.waves.iter().map(|(fu, fv, ph)| (fu * la + fv * lb + ph).sin()).sum();
        // threshold a smooth field into soft blotches
        0.5 + 0.5 * (1.5 * s).tanh()
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.15..0.9), rng.random_range(0.15..0.9), rng.random_range(0.15..0.9)]
}

fn random_waves(rng: &mut ChaCha8Rng) -> [(f64, f64, f64); 3] {
    core::array::from_fn(|_| {
        let wavelength = rng.random_range(0.25..1.2);
        let dir = rng.random_range(0.0..PI);
        let k = 2.0 * PI / wavelength;
        (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..2.0 * PI))
    })
}

fn room_surfaces(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Surface> {
    let [lx, ly, lz] = cfg.room_size;
    let (hx, hy) = (lx / 2.0, ly / 2.0);
    let mut out = Vec::new();
    let mut add = |origin: Vec3, u: Vec3, v: Vec3, rng: &mut ChaCha8Rng| {
        out.push(Surface { origin, u, v, base: random_color(rng), waves: random_waves(rng) });
    };
    // walls, floor and ceiling with normals facing inward
    add(Vec3::new(-hx, -hy, 0.0), Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, ly, 0.0), rng);
    add(Vec3::new(-hx, -hy, lz), Vec3::new(0.0, ly, 0.0), Vec3::new(lx, 0.0, 0.0), rng);
    add(Vec3::new(-hx, -hy, 0.0), Vec3::new(0.0, 0.0, lz), Vec3::new(lx, 0.0, 0.0), rng);
    add(Vec3::new(-hx, hy, 0.0), Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, 0.0, lz), rng);
    add(Vec3::new(-hx, -hy, 0.0), Vec3::new(0.0, ly, 0.0), Vec3::new(0.0, 0.0, lz), rng);
    add(Vec3::new(hx, -hy, 0.0), Vec3::new(0.0, 0.0, lz), Vec3::new(0.0, ly, 0.0), rng);
    for _ in 0..cfg.furniture {
        let size = Vec3::new(rng.random_range(0.4..1.6), rng.random_range(0.4..1.6), rng.random_range(0.3..1.4_f64).min(0.6 * lz));
        let cx = rng.random_range(-hx + 0.3..hx - 0.3 - size.x);
        let cy = rng.random_range(-hy + 0.3..hy - 0.3 - size.y);
        let o = Vec3::new(cx, cy, 0.0);
        let (ex, ey, ez) = (Vec3::new(size.x, 0.0, 0.0), Vec3::new(0.0, size.y, 0.0), Vec3::new(0.0, 0.0, size.z));
        // top and four sides, normals facing outward
        add(o + ez, ex, ey, rng);
        add(o, ex, ez, rng);
        add(o + ey, ez, ex, rng);
        add(o, ez, ey, rng);
        add(o + ex, ey, ez, rng);
    }
    out
}

fn surface_frame(s: &Surface, spin: f64) -> UnitQuaternion<f64> {
    let n = s.normal();
    let t = s.u.normalize();
    let b = n.cross(&t);
    let frame = Mat3::from_columns(&[t, b, n]) * axis_angle(Vec3::z(), spin);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(frame))
}

fn small_rest(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..3 * REST_PER_CHANNEL).map(|_| rng.random_range(-0.02..0.02)).collect()
}

fn build_room(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Gaussian> {
    let surfaces = room_surfaces(cfg, rng);
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total: f64 = areas.iter().sum();
    let floaters = (cfg.gaussian_count as f64 * cfg.floater_fraction).round() as usize;
    let solid = cfg.gaussian_count - floaters;
    let spacing = (total / solid as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.gaussian_count);

    // deterministic per-surface quotas by largest remainder
    let mut quotas: Vec<usize> = areas.iter().map(|a| (a / total * solid as f64) as usize).collect();
    let mut rem: Vec<(f64, usize)> = areas
        .iter()
        .enumerate()
        .map(|(i, a)| (a / total * solid as f64 - quotas[i] as f64, i))
        .collect();
    rem.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let missing = solid - quotas.iter().sum::<usize>();
    for (_, i) in rem.into_iter().take(missing) {
        quotas[i] += 1;
    }

    for (s, &count) in surfaces.iter().zip(&quotas) {
        let n = s.normal();
        for _ in 0..count {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let pos = s.origin + s.u * a + s.v * b + n * 1e-3;
            let shade = 0.45 + 0.55 * s.pattern(a, b);
            let color: [f64; 3] = core::array::from_fn(|c| (s.base[c] * shade + rng.random_range(-0.04..0.04)).clamp(0.02, 0.98));
            let q = surface_frame(s, rng.random_range(0.0..PI));
            out.push(Gaussian {
                position: pos,
                opacity_logit: logit(rng.random_range(0.85..0.99)),
                rotation: *q.quaternion(),
                log_scale: Vec3::new(
                    (spacing * rng.random_range(0.5..0.9)).ln(),
                    (spacing * rng.random_range(0.5..0.9)).ln(),
                    (spacing * 0.05).ln(),
                ),
                sh_dc: color.map(|c| (c - 0.5) / SH_C0),
                sh_rest: small_rest(rng),
            });
        }
    }

    let [lx, ly, lz] = cfg.room_size;
    for _ in 0..floaters {
        let pos = Vec3::new(
            rng.random_range(-lx / 2.0..lx / 2.0),
            rng.random_range(-ly / 2.0..ly / 2.0),
            rng.random_range(0.0..lz),
        );
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(random_rotation(rng)));
        let color = random_color(rng);
        out.push(Gaussian {
            position: pos,
            opacity_logit: logit(rng.random_range(0.05..0.4)),
            rotation: *q.quaternion(),
            log_scale: Vec3::repeat((spacing * 0.5).ln()),
            sh_dc: color.map(|c| (c - 0.5) / SH_C0),
            sh_rest: small_rest(rng),
        });
    }
    out
}

/// Cameras walking the x-range `[x0, x1]` and back at mid height with a
/// slight downward pitch: the first half faces the +y wall, the second half
/// the -y wall. Heading also turns with x, so cameras of two overlapping
/// ranges share orientations only where their positions meet.
pub fn camera_trajectory(cfg: &SynthConfig, x0: f64, x1: f64) -> Vec<CameraPose> {
    let [lx, ly, lz] = cfg.room_size;
    let n = cfg.cameras_per_side;
    let half = n.div_ceil(2);
    (0..n)
        .map(|k| {
            let outbound = k < half;
            let (i, m) = if outbound { (k, half) } else { (n - 1 - k, n - half) };
            let t = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.5 };
            let x = x0 + (x1 - x0) * (0.2 + 0.6 * t);
            let side = if outbound { 1.0 } else { -1.0 };
            let y = -side * 0.15 * ly + 0.05 * ly * (3.0 * PI * t).sin();
            let z = 0.5 * lz;
            let yaw = side * PI / 2.0 + 0.6 * PI * x / lx;
            let pitch = -10f64.to_radians();
            let forward = Vec3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
            CameraPose::look_along(Vec3::new(x, y, z), forward, Vec3::z(), cfg.focal, cfg.image_width, cfg.image_height)
        })
        .collect()
}

/// Random similarity used to move model B: scale in `scale_range`, uniform
/// rotation, translation of length between half and twice the room diagonal.
pub fn random_perturbation(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Sim3 {
    let diag = Vec3::from(cfg.room_size).norm();
    let dir = loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let [lo, hi] = cfg.scale_range;
    Sim3 {
        scale: if lo < hi { rng.random_range(lo..hi) } else { lo },
        rotation: random_rotation(rng),
        translation: dir * rng.random_range(0.5 * diag..2.0 * diag),
    }
}

/// Builds a pair of overlapping scene models. Model B (Gaussians and
/// cameras) is moved by a random similarity; the returned ground truth is its
/// inverse, mapping B back into A's frame.
pub fn make_synthetic_scene_pair(seed: u64, cfg: &SynthConfig) -> Result<SyntheticPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = build_room(cfg, &mut rng);
    let ([a0, a1], [b0, b1]) = cfg.sub_ranges();
    let pick = |lo: f64, hi: f64| -> Vec<Gaussian> {
        room.iter().filter(|g| g.position.x >= lo && g.position.x <= hi).cloned().collect()
    };
    let ga = pick(a0, a1);
    let gb = pick(b0, b1);
    let cams_a = camera_trajectory(cfg, a0, a1);
    let cams_b = camera_trajectory(cfg, b0, b1);
    let perturbation = if cfg.perturb { random_perturbation(cfg, &mut rng) } else { Sim3::identity() };
    let source_positions_b: Vec<Vec3> = gb.iter().map(|g| g.position).collect();
    let model_b = GaussianModel::new(gb, cams_b)?;
    let model_b = if cfg.perturb { transform_model(&model_b, &perturbation)? } else { model_b };
    Ok(SyntheticPair {
        model_a: GaussianModel::new(ga, cams_a)?,
        model_b,
        ground_truth: perturbation.inverse(),
        source_positions_b,
    })
}
