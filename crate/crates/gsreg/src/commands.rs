//! The work behind each subcommand, callable without a process boundary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gsreg_core::config::PipelineConfig;
use gsreg_core::eval::{evaluate, MetricReport, DEFAULT_SUCCESS_DEGREES};
use gsreg_core::fusion::{merge_models, transform_model};
use gsreg_core::pipeline::{register_models, Registration, Stage};
use gsreg_core::render::render;
use gsreg_core::synth::{make_synthetic_scene_pair, SynthConfig};
use gsreg_core::{Error as CoreError, GaussianModel};
use serde_json::json;

use crate::batch::BatchRow;
use crate::cameras::{load_cameras, save_cameras};
use crate::error::{Error, Result};
use crate::images::{save_color_png, save_depth_png};
use crate::ply::{load_ply, save_ply};
use crate::transform::{load_transform, save_transform, TransformRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_REGISTRATION: i32 = 2;
pub const EXIT_INSUFFICIENT_OVERLAP: i32 = 3;

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Core(CoreError::InsufficientOverlap { .. }) => EXIT_INSUFFICIENT_OVERLAP,
        Error::Core(CoreError::InvalidParameter { .. } | CoreError::NotARotation | CoreError::EmptyModel) => EXIT_USAGE,
        Error::Core(_) => EXIT_REGISTRATION,
        _ => EXIT_USAGE,
    }
}

/// Loads a model and attaches its cameras when a camera file is given.
pub fn load_scene(ply: &Path, cameras: Option<&Path>) -> Result<GaussianModel> {
    let mut model = load_ply(ply)?;
    if let Some(c) = cameras {
        model.cameras = load_cameras(c)?;
    }
    Ok(model)
}

/// Reads a pipeline configuration (unknown keys rejected) and applies the seed
/// override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn diagnostics(r: &Registration, cfg: &PipelineConfig) -> serde_json::Value {
    let c = &r.coarse;
    json!({
        "seed": cfg.seed,
        "coarse": {
            "scale": c.estimate.transform.scale,
            "correspondences": c.correspondences,
            "ransac_inliers": c.ransac_inliers,
            "icp_inliers": c.estimate.inlier_count,
            "rmse": c.estimate.rmse,
            "icp_status": format!("{:?}", c.icp_status).to_lowercase(),
        },
        "selection": r.selection.as_ref().map(|s| json!({
            "camera_a": s.best.index_a,
            "camera_b": s.best.index_b,
            "covisibility": s.best.covisibility,
            "orientation_cos": s.best.orientation_cos,
            "cameras_a": s.indices_a,
            "cameras_b": s.indices_b,
        })),
        "fine": r.fine.as_ref().map(|f| json!({
            "status": f.status,
            "points_a": f.points_a,
            "points_b": f.points_b,
            "inliers": f.estimate.inlier_count,
            "rmse": f.estimate.rmse,
        })),
        "fallback_reason": r.fallback_reason.as_ref().map(|e| e.to_string()),
    })
}

pub struct RegisterOutput {
    pub record: TransformRecord,
    pub exit_code: i32,
}

/// Registers B onto A and writes the transform file. A fine-stage fallback
/// caused by missing overlap is still written but reported with its own exit
/// code.
pub fn register(
    scene_a: &GaussianModel,
    scene_b: &GaussianModel,
    cfg: &PipelineConfig,
    coarse_only: bool,
    record_time: bool,
    out: &Path,
) -> Result<RegisterOutput> {
    let start = Instant::now();
    let r = register_models(scene_a, scene_b, cfg, coarse_only)?;
    let mut diag = diagnostics(&r, cfg);
    if record_time {
        diag["seconds"] = json!(start.elapsed().as_secs_f64());
    }
    log::info!("registration finished at stage {:?} in {:.1}s", r.stage, start.elapsed().as_secs_f64());
    let mut record = TransformRecord::new(&r.transform);
    record.stage = Some(r.stage);
    record.diagnostics = Some(diag);
    save_transform(&record, out)?;
    let exit_code = match (&r.stage, &r.fallback_reason) {
        (Stage::Fallback, Some(CoreError::InsufficientOverlap { .. })) => EXIT_INSUFFICIENT_OVERLAP,
        _ => EXIT_OK,
    };
    Ok(RegisterOutput { record, exit_code })
}

/// Moves B into A's frame, merges, and writes the fused model. Returns the
/// merged model.
pub fn fuse(
    scene_a: &GaussianModel,
    scene_b: &GaussianModel,
    transform: &TransformRecord,
    out: &Path,
    cameras_out: Option<&Path>,
) -> Result<GaussianModel> {
    if scene_a.sh_degree != scene_b.sh_degree {
        return Err(Error::Core(CoreError::InvalidParameter {
            name: "sh_degree",
            reason: format!("models have SH degree {} and {}", scene_a.sh_degree, scene_b.sh_degree),
        }));
    }
    let x = transform.to_sim3()?;
    let b_in_a = transform_model(scene_b, &x)?;
    let merged = merge_models(scene_a, &b_in_a)?;
    log::info!("merged {} + {} gaussians into {}", scene_a.len(), scene_b.len(), merged.len());
    save_ply(&merged, out)?;
    if let Some(c) = cameras_out {
        save_cameras(&merged.cameras, c)?;
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderKind {
    Depth,
    Color,
}

/// Writes one PNG per camera into `outdir`; returns the written paths.
pub fn render_views(
    model: &GaussianModel,
    kind: RenderKind,
    width: u32,
    height: u32,
    outdir: &Path,
) -> Result<Vec<PathBuf>> {
    if model.cameras.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut written = Vec::with_capacity(model.cameras.len());
    for (i, cam) in model.cameras.iter().enumerate() {
        let r = render(model, cam, width, height);
        let path = match kind {
            RenderKind::Depth => outdir.join(format!("depth_{i:04}.png")),
            RenderKind::Color => outdir.join(format!("color_{i:04}.png")),
        };
        match kind {
            RenderKind::Depth => save_depth_png(&r.depth, &path)?,
            RenderKind::Color => save_color_png(&r.color, &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

pub fn eval_pair(estimate: &Path, ground_truth: &Path) -> Result<MetricReport> {
    let est = load_transform(estimate)?.to_sim3()?;
    let gt = load_transform(ground_truth)?.to_sim3()?;
    Ok(evaluate(&est, &gt, DEFAULT_SUCCESS_DEGREES)?)
}

pub const ESTIMATE_FILE: &str = "transform.json";
pub const GROUND_TRUTH_FILE: &str = "gt.json";

/// One row per subdirectory of `dir` holding both a transform and a ground
/// truth file, in name order. Timing comes from the transform's diagnostics
/// when it was recorded.
pub fn eval_batch(dir: &Path) -> Result<Vec<BatchRow>> {
    let mut scenes: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(ESTIMATE_FILE).is_file() && p.join(GROUND_TRUTH_FILE).is_file())
        .collect();
    scenes.sort();
    scenes
        .iter()
        .map(|s| {
            let est = load_transform(s.join(ESTIMATE_FILE))?;
            let m = eval_pair(&s.join(ESTIMATE_FILE), &s.join(GROUND_TRUTH_FILE))?;
            let seconds = est.diagnostics.as_ref().and_then(|d| d.get("seconds")).and_then(|v| v.as_f64());
            let name = s.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(BatchRow::new(name, &m, seconds))
        })
        .collect()
}

pub fn load_synth_config(path: Option<&Path>) -> Result<SynthConfig> {
    let cfg: SynthConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
        }
        None => SynthConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// File names written by [`synth`].
pub const SYNTH_FILES: [&str; 5] = ["a.ply", "b.ply", "cams_a.json", "cams_b.json", GROUND_TRUTH_FILE];

/// Writes a synthetic pair: both models, their cameras and the ground truth
/// mapping B into A.
pub fn synth(seed: u64, cfg: &SynthConfig, outdir: &Path) -> Result<()> {
    let pair = make_synthetic_scene_pair(seed, cfg)?;
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    save_ply(&pair.model_a, outdir.join(SYNTH_FILES[0]))?;
    save_ply(&pair.model_b, outdir.join(SYNTH_FILES[1]))?;
    save_cameras(&pair.model_a.cameras, outdir.join(SYNTH_FILES[2]))?;
    save_cameras(&pair.model_b.cameras, outdir.join(SYNTH_FILES[3]))?;
    save_transform(&TransformRecord::new(&pair.ground_truth), outdir.join(SYNTH_FILES[4]))
}
