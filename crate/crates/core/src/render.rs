//! Hard z-buffer splatting of Gaussians into low-resolution depth and color
//! images.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Vector2;

use crate::geometry::{CameraPose, Vec3};
use crate::model::{GaussianModel, DEFAULT_OPACITY_THRESHOLD};
use crate::sh::eval_color;

/// Camera-frame depth per pixel, row-major; `0` marks an empty pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub data: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

impl DepthMap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { data: vec![0.0; width as usize * height as usize], width, height }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }
}

/// RGB image in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub data: Vec<[f64; 3]>,
    pub width: u32,
    pub height: u32,
}

impl ColorImage {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[(y * self.width + x) as usize]
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data.iter().map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).collect()
    }
}

/// Pixel and depth of `p` seen by `cam`, or `None` when it lies behind the camera.
#[inline]
pub fn project_point(p: &Vec3, cam: &CameraPose) -> Option<(Vector2<f64>, f64)> {
    cam.project(p)
}

/// Depth and color from one splatting pass. `winner` holds the index of the
/// Gaussian owning each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub depth: DepthMap,
    pub color: ColorImage,
    pub winner: Vec<Option<usize>>,
}

/// Splats every confident Gaussian as a flat disc of radius
/// `max(1, max_scale · fx / z)` pixels at its center depth. The nearest disc
/// wins each pixel; on exact ties the earlier Gaussian is kept.
pub fn render(model: &GaussianModel, cam: &CameraPose, width: u32, height: u32) -> Rendering {
    let cam = cam.with_resolution(width, height);
    let n = width as usize * height as usize;
    let mut depth = vec![f64::INFINITY; n];
    let mut winner: Vec<Option<usize>> = vec![None; n];
    let center = cam.center();
    for (gi, g) in model.gaussians.iter().enumerate() {
        if g.opacity() <= DEFAULT_OPACITY_THRESHOLD {
            continue;
        }
        let Some((px, z)) = cam.project(&g.position) else { continue };
        let r = (g.max_scale() * cam.fx / z).max(1.0);
        let (x0, x1) = ((px.x - r).ceil().max(0.0), (px.x + r).floor().min(width as f64 - 1.0));
        let (y0, y1) = ((px.y - r).ceil().max(0.0), (px.y + r).floor().min(height as f64 - 1.0));
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let r2 = r * r;
        for y in y0 as u32..=y1 as u32 {
            let dy = y as f64 - px.y;
            for x in x0 as u32..=x1 as u32 {
                let dx = x as f64 - px.x;
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let k = (y * width + x) as usize;
                if z < depth[k] {
                    depth[k] = z;
                    winner[k] = Some(gi);
                }
            }
        }
    }
    let color = winner
        .iter()
        .map(|w| match w {
            Some(gi) => {
                let g = &model.gaussians[*gi];
                let dir = (g.position - center).normalize();
                eval_color(&g.sh_dc, &g.sh_rest, &dir).map(|c| c.clamp(0.0, 1.0))
            }
            None => [0.0; 3],
        })
        .collect();
    for d in &mut depth {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    Rendering {
        depth: DepthMap { data: depth, width, height },
        color: ColorImage { data: color, width, height },
        winner,
    }
}

pub fn render_depth(model: &GaussianModel, cam: &CameraPose, width: u32, height: u32) -> DepthMap {
    render(model, cam, width, height).depth
}

/// Pixel color is the winning Gaussian's SH expansion evaluated along the
/// viewing direction; background is black.
pub fn render_color(model: &GaussianModel, cam: &CameraPose, width: u32, height: u32) -> ColorImage {
    render(model, cam, width, height).color
}
