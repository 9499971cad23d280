//! End-to-end reconstruction: registration, back-projection, face crop,
//! k-means refinement and RBF densification.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::detect::{
    detect_faces, face_region, parse_cascade, to_grayscale, Cascade, DetectConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{
    back_project_registered, crop_by_rect, register_depth_to_color, ColorFrame, DepthFrame,
    PixelRect, PointCloud,
};
use crate::io::{
    read_color_ppm, read_depth_pgm, read_intrinsics, write_color_ppm, write_depth_pgm, write_ply,
    IntrinsicsDoc,
};
use crate::metrics::{
    error_report, format_table, stage_counts, ErrorReport, StageCounts, DEFAULT_BIN_WIDTH_MM,
};
use crate::neighbors::{DEFAULT_MAX_CHECKS, DEFAULT_TOP_R, DEFAULT_TREES};
use crate::rbf::{densify_with, ColorSearch, Densified, RbfConfig, SolveStats};
use crate::segment::{kmeans, select_face_cluster, KMeansConfig};
use crate::synth::{ground_truth, render_scene, GroundTruth, SceneSpec};

/// Margin added on each side of the ground-truth face box when `eval` has
/// neither a box nor a cascade, as a fraction of the box size.
pub const GT_BOX_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_checks: usize,
    pub top_r: usize,
    pub rng_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: DEFAULT_TREES,
            max_checks: DEFAULT_MAX_CHECKS,
            top_r: DEFAULT_TOP_R,
            rng_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub depth: Option<PathBuf>,
    pub color: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub cascade: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// Scene spec of a synthetic frame; enables the error report.
    pub scene: Option<PathBuf>,
    pub face_bbox: Option<PixelRect>,
    pub kmeans: KMeansConfig,
    pub rbf: RbfConfig,
    pub forest: ForestConfig,
    pub detect: DetectConfig,
    /// Histogram bin width of the error report; 0.5 mm when unset.
    pub bin_width_mm: Option<f64>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("config JSON", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.kmeans.validate()?;
        self.rbf.validate()?;
        if self.forest.trees == 0 || self.forest.max_checks == 0 || self.forest.top_r == 0 {
            return Err(Error::Validation(format!(
                "forest trees, max_checks and top_r must be positive, got {:?}",
                self.forest
            )));
        }
        if !(self.detect.scale_factor > 1.0 && self.detect.scale_factor.is_finite()) {
            return Err(Error::Validation(format!(
                "scale_factor must be > 1, got {}",
                self.detect.scale_factor
            )));
        }
        if let Some(b) = self.face_bbox {
            if b.w == 0 || b.h == 0 {
                return Err(Error::Validation(format!("face bbox {b:?} is empty")));
            }
        }
        Ok(())
    }

    fn color_search(&self) -> ColorSearch {
        ColorSearch::Forest {
            trees: self.forest.trees,
            top_r: self.forest.top_r,
            max_checks: self.forest.max_checks,
            rng_seed: self.forest.rng_seed,
        }
    }
}

/// One RGB-D frame with its calibration.
#[derive(Debug, Clone)]
pub struct Frame {
    pub depth: DepthFrame,
    pub color: ColorFrame,
    pub cams: IntrinsicsDoc,
}

/// How the face rect of a run was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceSource {
    Override,
    Detected,
    GroundTruth,
}

/// Point counts after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSizes {
    pub registered: usize,
    pub cropped: usize,
    pub face_cluster: usize,
    pub dense: usize,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub face_rect: PixelRect,
    pub face_source: FaceSource,
    pub detections: usize,
    pub sizes: StageSizes,
    pub seeds: PointCloud,
    pub densified: Densified,
    pub counts: StageCounts,
}

/// The face rect to use: the override if any, else the largest detection.
pub enum FaceChoice<'a> {
    Override(PixelRect),
    Detect(&'a Cascade),
    GroundTruth(PixelRect),
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    info!("{stage}: {:.3} s", start.elapsed().as_secs_f64());
    Ok(out)
}

pub fn reconstruct(
    frame: &Frame,
    face: FaceChoice,
    cfg: &PipelineConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let cams = &frame.cams;
    let registered = timed("register", || {
        register_depth_to_color(
            &frame.depth,
            &frame.color,
            &cams.depth_intrinsics,
            &cams.color_intrinsics,
            &cams.rig,
        )
    })?;
    let cloud = back_project_registered(&registered)?;
    info!("registered points: {}", cloud.len());

    let (face_rect, face_source, detections) = match face {
        FaceChoice::Override(r) => (r, FaceSource::Override, 0),
        FaceChoice::GroundTruth(r) => (r, FaceSource::GroundTruth, 0),
        FaceChoice::Detect(cascade) => {
            let found = timed("detect", || {
                detect_faces(
                    cascade,
                    &to_grayscale(&registered.aligned_color()),
                    &cfg.detect,
                )
            })?;
            info!("detections: {}", found.len());
            (
                face_region(&found, None)?,
                FaceSource::Detected,
                found.len(),
            )
        }
    };
    info!("face rect: {face_rect:?} ({face_source:?})");

    let cropped = crop_by_rect(&cloud, &face_rect)?;
    info!("cropped points: {}", cropped.len());
    if cropped.is_empty() {
        return Err(Error::NoFace(format!(
            "no valid depth inside the face rect {face_rect:?}"
        )));
    }
    let seeds = timed("kmeans", || {
        let clustering = kmeans(&cropped.points, &cfg.kmeans)?;
        select_face_cluster(&cropped, &clustering, &face_rect)
    })?;
    info!("face cluster points: {}", seeds.len());

    let densified = timed("densify", || {
        densify_with(&seeds, &cfg.rbf, cfg.color_search())
    })?;
    let stats = &densified.model.stats;
    info!(
        "solver {:?}: {} iterations, relative residual {:.2e}, nnz {}",
        stats.solver, stats.iterations, stats.rel_residual, stats.nnz
    );
    info!("dense points: {}", densified.cloud.len());
    let counts = stage_counts(&seeds, &densified.cloud)?;
    Ok(Reconstruction {
        face_rect,
        face_source,
        detections,
        sizes: StageSizes {
            registered: cloud.len(),
            cropped: cropped.len(),
            face_cluster: seeds.len(),
            dense: densified.cloud.len(),
        },
        seeds,
        densified,
        counts,
    })
}

/// Everything written to the metrics file. Holds no timings so that
/// repeated runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub stage_counts: StageCounts,
    pub stages: StageSizes,
    pub face_rect: PixelRect,
    pub face_source: FaceSource,
    pub avg_nn_m: f64,
    pub r0_m: f64,
    pub solver: SolveStats,
    pub grid_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

impl Metrics {
    pub fn new(rec: &Reconstruction, error: Option<ErrorReport>) -> Self {
        Metrics {
            stage_counts: rec.counts,
            stages: rec.sizes,
            face_rect: rec.face_rect,
            face_source: rec.face_source,
            avg_nn_m: rec.densified.avg_nn,
            r0_m: rec.densified.model.r0,
            solver: rec.densified.model.stats,
            grid_cells: rec.densified.grid.nx * rec.densified.grid.ny,
            error,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        format_table(&self.stage_counts, self.error.as_ref())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| Error::parse(path.display().to_string(), "file is not valid UTF-8"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{context}, {}", path.display()),
            message,
        },
        other => other,
    })
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Usage(format!("missing --{flag}")))
}

pub fn load_cascade(path: &Path) -> Result<Cascade> {
    with_path(path, parse_cascade(&read_text(path)?))
}

pub fn load_intrinsics(path: &Path) -> Result<IntrinsicsDoc> {
    with_path(path, read_intrinsics(&read_text(path)?))
}

pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    with_path(path, SceneSpec::from_json(&read_text(path)?))
}

fn load_frame(cfg: &PipelineConfig) -> Result<Frame> {
    let cams = load_intrinsics(required(&cfg.intrinsics, "intrinsics")?)?;
    let dp = required(&cfg.depth, "depth")?;
    let cp = required(&cfg.color, "color")?;
    let depth = with_path(dp, read_depth_pgm(&read_file(dp)?))?;
    let color = with_path(cp, read_color_ppm(&read_file(cp)?))?;
    Ok(Frame { depth, color, cams })
}

/// Outcome of `reconstruct` or `eval`, already written to the configured
/// paths.
pub struct RunOutput {
    pub reconstruction: Reconstruction,
    pub metrics: Metrics,
    pub ply: Vec<u8>,
}

fn finish(
    cfg: &PipelineConfig,
    rec: Reconstruction,
    gt: Option<&GroundTruth>,
) -> Result<RunOutput> {
    let error = match gt {
        Some(gt) => Some(error_report(
            &rec.densified.cloud,
            gt,
            cfg.bin_width_mm.unwrap_or(DEFAULT_BIN_WIDTH_MM),
        )?),
        None => None,
    };
    let metrics = Metrics::new(&rec, error);
    let ply = write_ply(&rec.densified.cloud);
    if let Some(p) = &cfg.out {
        write_file(p, &ply)?;
    }
    if let Some(p) = &cfg.metrics {
        write_file(p, metrics.to_json().as_bytes())?;
    }
    Ok(RunOutput {
        reconstruction: rec,
        metrics,
        ply,
    })
}

/// Reads the frame files, reconstructs, and writes the PLY and metrics.
pub fn run_reconstruct(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let cascade = match (&cfg.face_bbox, &cfg.cascade) {
        (Some(_), _) => None,
        (None, Some(p)) => Some(load_cascade(p)?),
        (None, None) => {
            return Err(Error::NoFace(
                "no --cascade and no --face-bbox given".into(),
            ))
        }
    };
    let frame = load_frame(cfg)?;
    let scene = cfg.scene.as_deref().map(load_scene).transpose()?;
    let face = match (cfg.face_bbox, &cascade) {
        (Some(r), _) => FaceChoice::Override(r),
        (None, Some(c)) => FaceChoice::Detect(c),
        (None, None) => unreachable!("checked above"),
    };
    let rec = reconstruct(&frame, face, cfg)?;
    let gt = scene
        .map(|s| ground_truth(&s, &frame.cams.depth_intrinsics))
        .transpose()?;
    finish(cfg, rec, gt.as_ref())
}

/// Renders a scene and writes `depth.pgm`, `color.ppm` and `scene.json` (the
/// spec bytes unchanged) into `out_dir`.
pub fn run_synth(scene_path: &Path, intrinsics_path: &Path, out_dir: &Path) -> Result<()> {
    let scene_bytes = read_file(scene_path)?;
    let spec = load_scene(scene_path)?;
    let cams = load_intrinsics(intrinsics_path)?;
    let (depth, color, gt) = timed("render", || render_scene(&spec, &cams))?;
    info!(
        "face pixels: {}, valid depth pixels: {}",
        gt.face_pixel_count(),
        depth.valid_count()
    );
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", out_dir.display()),
        ))
    })?;
    write_file(&out_dir.join("depth.pgm"), &write_depth_pgm(&depth))?;
    write_file(&out_dir.join("color.ppm"), &write_color_ppm(&color))?;
    write_file(&out_dir.join("scene.json"), &scene_bytes)?;
    Ok(())
}

/// Ground-truth face box grown by [`GT_BOX_MARGIN`] per side and clipped to
/// the frame.
pub fn ground_truth_rect(gt: &GroundTruth) -> Result<PixelRect> {
    let b = gt.face_bbox().ok_or_else(|| {
        Error::NoFace("the scene's face is not visible in the depth frame".into())
    })?;
    let mx = (b.w as f64 * GT_BOX_MARGIN).round() as u32;
    let my = (b.h as f64 * GT_BOX_MARGIN).round() as u32;
    let x0 = b.x.saturating_sub(mx);
    let y0 = b.y.saturating_sub(my);
    let x1 = (b.x + b.w + mx).min(gt.width);
    let y1 = (b.y + b.h + my).min(gt.height);
    Ok(PixelRect::new(x0, y0, x1 - x0, y1 - y0))
}

/// Reconstructs a synthetic frame and scores it against its scene. Frames
/// are read from `depth`/`color` when given, otherwise rendered from the
/// scene in memory.
pub fn run_eval(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = load_scene(required(&cfg.scene, "scene")?)?;
    let cascade = match (&cfg.face_bbox, &cfg.cascade) {
        (None, Some(p)) => Some(load_cascade(p)?),
        _ => None,
    };
    let (frame, gt) = match (&cfg.depth, &cfg.color) {
        (None, None) => {
            let cams = load_intrinsics(required(&cfg.intrinsics, "intrinsics")?)?;
            let (depth, color, gt) = timed("render", || render_scene(&spec, &cams))?;
            (Frame { depth, color, cams }, gt)
        }
        _ => {
            let frame = load_frame(cfg)?;
            let gt = ground_truth(&spec, &frame.cams.depth_intrinsics)?;
            (frame, gt)
        }
    };
    let face = match (cfg.face_bbox, &cascade) {
        (Some(r), _) => FaceChoice::Override(r),
        (None, Some(c)) => FaceChoice::Detect(c),
        (None, None) => FaceChoice::GroundTruth(ground_truth_rect(&gt)?),
    };
    let rec = reconstruct(&frame, face, cfg)?;
    finish(cfg, rec, Some(&gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, RigExtrinsics};
    use crate::synth::{Bump, HoleSpec};

    fn cams() -> IntrinsicsDoc {
        let depth = Intrinsics {
            focal_px: 290.0,
            principal_u: 159.5,
            principal_v: 119.5,
            width: 320,
            height: 240,
        };
        IntrinsicsDoc {
            depth_intrinsics: depth,
            color_intrinsics: Intrinsics {
                focal_px: 262.5,
                ..depth
            },
            rig: RigExtrinsics {
                baseline: [0.025, 0.0, 0.0],
            },
        }
    }

    fn scene() -> SceneSpec {
        SceneSpec {
            face_center: [0.0, 0.0, 0.6],
            face_radii: [0.085, 0.11, 0.06],
            cap_fraction: 0.8,
            nose: Some(Bump {
                offset: [0.0, 0.0],
                amplitude: 0.022,
                width: 0.012,
            }),
            eyes: vec![],
            background_depth: 1.2,
            noise_sigma: 1.0,
            dropout_fraction: 0.02,
            hole_rects: vec![HoleSpec {
                center: [160.0, 121.0],
                semi_axes: [2.0, 3.0],
            }],
            rng_seed: 3,
        }
    }

    fn frame() -> (Frame, GroundTruth) {
        let (depth, color, gt) = render_scene(&scene(), &cams()).unwrap();
        (
            Frame {
                depth,
                color,
                cams: cams(),
            },
            gt,
        )
    }

    #[test]
    fn small_scene_end_to_end() {
        let (frame, gt) = frame();
        let rect = ground_truth_rect(&gt).unwrap();
        let rec = reconstruct(
            &frame,
            FaceChoice::GroundTruth(rect),
            &PipelineConfig::default(),
        )
        .unwrap();
        let s = rec.sizes;
        assert!(
            s.registered >= s.cropped && s.cropped > s.face_cluster && s.dense > s.face_cluster,
            "{s:?}"
        );
        // The face cluster is the face: every seed lies on the ground-truth
        // support and no background point survives.
        assert!(rec.seeds.points.iter().all(|p| p[2] < 1.0));
        let face_valid = (0..gt.height)
            .flat_map(|v| (0..gt.width).map(move |u| (u, v)))
            .filter(|&(u, v)| gt.is_face(u, v) && frame.depth.get(u, v) > 0)
            .count();
        assert_eq!(rec.seeds.len(), face_valid);
        let report = error_report(&rec.densified.cloud, &gt, 0.5).unwrap();
        assert!(report.mean_abs_mm < 2.0, "{report:?}");
    }

    #[test]
    fn ground_truth_rect_has_margin() {
        let (_, gt) = frame();
        let b = gt.face_bbox().unwrap();
        let r = ground_truth_rect(&gt).unwrap();
        assert!(r.x < b.x && r.y < b.y && r.x + r.w > b.x + b.w && r.y + r.h > b.y + b.h);
    }

    #[test]
    fn empty_rect_region_is_no_face() {
        let (frame, _) = frame();
        let mut f = frame;
        f.depth = DepthFrame::new(320, 240, vec![0; 320 * 240]).unwrap();
        let err = reconstruct(
            &f,
            FaceChoice::Override(PixelRect::new(0, 0, 10, 10)),
            &PipelineConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let cfg = PipelineConfig::from_json(
            r#"{"rbf": {"upsample": 2}, "face_bbox": {"x": 1, "y": 2, "w": 3, "h": 4}}"#,
        )
        .unwrap();
        assert_eq!(cfg.rbf.upsample, 2);
        assert_eq!(cfg.rbf.r0_multiplier, 6.0);
        assert_eq!(cfg.face_bbox, Some(PixelRect::new(1, 2, 3, 4)));
        assert!(matches!(
            PipelineConfig::from_json(r#"{"trees": 3}"#),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Error::NoFace(String::new()).exit_code(), 2);
        assert_eq!(Error::parse("x", "y").exit_code(), 3);
        assert_eq!(Error::Validation(String::new()).exit_code(), 3);
        assert_eq!(
            Error::NotConverged {
                iterations: 1,
                residual: 1.0
            }
            .exit_code(),
            4
        );
        assert_eq!(Error::Singular(String::new()).exit_code(), 4);
    }
}
