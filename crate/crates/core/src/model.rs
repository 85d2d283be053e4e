//! Gaussian primitives, scene models and confident-point extraction.

use alloc::vec::Vec;
use nalgebra::{Quaternion, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Mat3, Vec3};
use crate::sh::{SH_C0, REST_PER_CHANNEL};

/// Opacity threshold for confident Gaussians.
pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.7;
/// Point budget per cloud handed to registration.
pub const DEFAULT_MAX_POINTS: usize = 30_000;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic 3D Gaussian as stored by splat trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vec3,
    /// Pre-sigmoid opacity.
    pub opacity_logit: f64,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Quaternion<f64>,
    /// Natural log of per-axis standard deviation.
    pub log_scale: Vec3,
    pub sh_dc: [f64; 3],
    /// Degree 1-3 coefficients, 15 per channel, channel-major; empty at degree 0.
    pub sh_rest: Vec<f64>,
}

impl Gaussian {
    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    #[inline]
    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        UnitQuaternion::from_quaternion(self.rotation)
            .to_rotation_matrix()
            .into_inner()
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s = Mat3::from_diagonal(&self.log_scale.map(|v| (2.0 * v).exp()));
        r * s * r.transpose()
    }

    pub fn sh_degree(&self) -> usize {
        if self.sh_rest.is_empty() {
            0
        } else {
            3
        }
    }
}

/// Normalizes a quaternion unless it is already unit length to 1e-6, so that
/// reloading stored data leaves its values untouched.
pub fn normalize_quaternion(q: Quaternion<f64>) -> Quaternion<f64> {
    let n = q.norm();
    if n == 0.0 || !n.is_finite() {
        return Quaternion::identity();
    }
    if (n - 1.0).abs() <= 1e-6 {
        q
    } else {
        q / n
    }
}

/// A splat scene plus the poses of the images it was trained from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianModel {
    pub gaussians: Vec<Gaussian>,
    pub cameras: Vec<CameraPose>,
    pub sh_degree: usize,
}

impl GaussianModel {
    pub fn new(gaussians: Vec<Gaussian>, cameras: Vec<CameraPose>) -> Result<Self> {
        let sh_degree = gaussians.first().map(Gaussian::sh_degree).unwrap_or(0);
        if gaussians.iter().any(|g| g.sh_degree() != sh_degree) {
            return Err(crate::error::invalid("sh_degree", "gaussians disagree on SH degree"));
        }
        if gaussians
            .iter()
            .any(|g| !g.sh_rest.is_empty() && g.sh_rest.len() != 3 * REST_PER_CHANNEL)
        {
            return Err(crate::error::invalid("sh_rest", "expected 45 or 0 coefficients"));
        }
        Ok(Self {
            gaussians,
            cameras,
            sh_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Iterator over Gaussians whose activated opacity exceeds `threshold`.
    pub fn confident(&self, threshold: f64) -> impl Iterator<Item = &Gaussian> {
        self.gaussians.iter().filter(move |g| g.opacity() > threshold)
    }
}

/// Point cloud with per-point color and opacity (parallel arrays).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredPointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

impl ColoredPointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let n = points.len();
        Self {
            points,
            colors: alloc::vec![[0.5; 3]; n],
            opacities: alloc::vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, color: [f64; 3], opacity: f64) {
        self.points.push(p);
        self.colors.push(color);
        self.opacities.push(opacity);
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            opacities: indices.iter().map(|&i| self.opacities[i]).collect(),
        }
    }

    pub fn transformed(&self, x: &crate::geometry::Sim3) -> Self {
        Self {
            points: self.points.iter().map(|p| x.apply(p)).collect(),
            ..self.clone()
        }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vec3>() / self.len() as f64)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }
}

/// View-independent color of a Gaussian: `clamp(0.5 + C0 · dc, 0, 1)`.
#[inline]
pub fn sh_dc_to_color(sh_dc: &[f64; 3]) -> [f64; 3] {
    sh_dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
}

/// Collects Gaussians with `sigmoid(opacity) > opacity_threshold` as colored
/// points. When more than `max_points` survive, a seeded uniform subset of
/// exactly `max_points` is kept (in original order).
pub fn extract_confident_points(
    model: &GaussianModel,
    opacity_threshold: f64,
    max_points: usize,
    seed: u64,
) -> Result<ColoredPointCloud> {
    if !(opacity_threshold > 0.0 && opacity_threshold < 1.0) {
        return Err(crate::error::invalid("opacity_threshold", "must lie in (0, 1)"));
    }
    let survivors: Vec<&Gaussian> = model.confident(opacity_threshold).collect();
    if survivors.is_empty() {
        return Err(Error::EmptyCloud("no Gaussian passes the opacity threshold"));
    }
    let chosen: Vec<&Gaussian> = if survivors.len() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, survivors.len(), max_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| survivors[i]).collect()
    } else {
        survivors
    };
    let mut cloud = ColoredPointCloud::default();
    for g in chosen {
        cloud.push(g.position, sh_dc_to_color(&g.sh_dc), g.opacity());
    }
    Ok(cloud)
}

/// Mean position of the confident Gaussians (opacity above 0.7).
pub fn model_center(model: &GaussianModel) -> Result<Vec3> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let (sum, n) = model
        .confident(DEFAULT_OPACITY_THRESHOLD)
        .fold((Vec3::zeros(), 0usize), |(s, n), g| (s + g.position, n + 1));
    if n == 0 {
        return Err(Error::EmptyCloud("model has no confident Gaussians"));
    }
    Ok(sum / n as f64)
}
