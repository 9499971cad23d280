//! Synthetic RGB-D frames of a face-like surface with analytic ground truth.
//!
//! The surface is an ellipsoid cap seen from the camera side, with a Gaussian
//! nose bump and Gaussian eye dents. Depth pixels are ray-cast against it (or
//! fall to a background plane), perturbed with seeded Gaussian noise,
//! quantized to millimeters, and thinned by random dropout and explicit
//! elliptical holes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ColorFrame, DepthFrame, Intrinsics, PixelRect, RigExtrinsics};
use crate::io::IntrinsicsDoc;

pub const SKIN: [u8; 3] = [224, 172, 140];
pub const EYE: [u8; 3] = [70, 48, 40];
pub const BACKGROUND: [u8; 3] = [40, 70, 110];

const MAX_DROPOUT: f64 = 0.5;
const RAY_ITERS: usize = 200;
const RAY_TOL: f64 = 1e-13;

/// Gaussian bump `amplitude * exp(-d^2 / (2 width^2))` at a metric (x, y)
/// offset from the face center. The nose bump moves the surface toward the
/// camera, eye dents move it away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub offset: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

/// Elliptical hole in depth-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSpec {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
}

impl HoleSpec {
    pub fn contains(&self, u: u32, v: u32) -> bool {
        let du = (u as f64 - self.center[0]) / self.semi_axes[0];
        let dv = (v as f64 - self.center[1]) / self.semi_axes[1];
        du * du + dv * dv <= 1.0
    }
}

fn default_cap_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Ellipsoid center in depth-camera coordinates, meters.
    pub face_center: [f64; 3],
    /// Ellipsoid semi-axes, meters.
    pub face_radii: [f64; 3],
    /// The face is the part of the ellipsoid whose normalized (x, y) radius
    /// is at most this value.
    #[serde(default = "default_cap_fraction")]
    pub cap_fraction: f64,
    #[serde(default)]
    pub nose: Option<Bump>,
    #[serde(default)]
    pub eyes: Vec<Bump>,
    /// Depth of the background plane, meters.
    pub background_depth: f64,
    /// Standard deviation of the additive depth noise, millimeters.
    pub noise_sigma: f64,
    pub dropout_fraction: f64,
    #[serde(default)]
    pub hole_rects: Vec<HoleSpec>,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec =
            serde_json::from_str(text).map_err(|e| Error::parse("scene JSON", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("scene: {msg}")));
        let finite = self
            .face_center
            .iter()
            .chain(&self.face_radii)
            .all(|v| v.is_finite())
            && [
                self.cap_fraction,
                self.background_depth,
                self.noise_sigma,
                self.dropout_fraction,
            ]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return bad("all numbers must be finite".into());
        }
        if self.face_radii.iter().any(|&r| r <= 0.0) {
            return bad(format!(
                "face_radii must be positive, got {:?}",
                self.face_radii
            ));
        }
        if !(self.cap_fraction > 0.0 && self.cap_fraction < 1.0) {
            return bad(format!(
                "cap_fraction must be in (0, 1), got {}",
                self.cap_fraction
            ));
        }
        for (name, b) in self
            .nose
            .iter()
            .map(|b| ("nose", b))
            .chain(self.eyes.iter().map(|b| ("eye", b)))
        {
            if !(b.offset.iter().all(|v| v.is_finite()) && b.amplitude.is_finite()) {
                return bad(format!("{name} parameters must be finite"));
            }
            if !(b.width > 0.0 && b.width.is_finite()) {
                return bad(format!("{name} width must be positive, got {}", b.width));
            }
        }
        if self.noise_sigma < 0.0 {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout_fraction) {
            return bad(format!(
                "dropout_fraction must be in [0, {MAX_DROPOUT}], got {}",
                self.dropout_fraction
            ));
        }
        let surface = self.surface();
        if surface.min_depth_bound() <= 0.0 {
            return bad("the face must lie in front of the camera".into());
        }
        if self.background_depth <= surface.max_depth_bound() {
            return bad(format!(
                "background_depth {} must exceed the deepest face point {:.4}",
                self.background_depth,
                surface.max_depth_bound()
            ));
        }
        if self.background_depth * 1000.0 + 6.0 * self.noise_sigma > u16::MAX as f64 {
            return bad("background_depth exceeds the 16-bit millimeter range".into());
        }
        for h in &self.hole_rects {
            let ok = h.center.iter().all(|v| v.is_finite())
                && h.semi_axes.iter().all(|&a| a > 0.0 && a.is_finite());
            if !ok {
                return bad(format!(
                    "hole {h:?} needs a finite center and positive semi-axes"
                ));
            }
        }
        Ok(())
    }

    pub fn surface(&self) -> Surface {
        Surface {
            center: self.face_center,
            radii: self.face_radii,
            cap_fraction: self.cap_fraction,
            nose: self.nose,
            eyes: self.eyes.clone(),
        }
    }
}

/// The noise-free face surface as a height field `z(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub cap_fraction: f64,
    pub nose: Option<Bump>,
    pub eyes: Vec<Bump>,
}

fn bump_value(b: &Bump, dx: f64, dy: f64) -> f64 {
    let ex = dx - b.offset[0];
    let ey = dy - b.offset[1];
    b.amplitude * (-(ex * ex + ey * ey) / (2.0 * b.width * b.width)).exp()
}

impl Surface {
    fn normalized_radius_sq(&self, x: f64, y: f64) -> f64 {
        let nx = (x - self.center[0]) / self.radii[0];
        let ny = (y - self.center[1]) / self.radii[1];
        nx * nx + ny * ny
    }

    pub fn in_support(&self, x: f64, y: f64) -> bool {
        self.normalized_radius_sq(x, y) <= self.cap_fraction * self.cap_fraction
    }

    /// Height of the surface continued past the support (the ellipsoid term
    /// is clamped at its rim). Used by the ray caster.
    fn height_extended(&self, x: f64, y: f64) -> f64 {
        let s = self.normalized_radius_sq(x, y);
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let mut z = self.center[2] - self.radii[2] * (1.0 - s).max(0.0).sqrt();
        if let Some(n) = &self.nose {
            z -= bump_value(n, dx, dy);
        }
        for e in &self.eyes {
            z += bump_value(e, dx, dy);
        }
        z
    }

    /// Surface depth at (x, y), or `None` outside the face support.
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.in_support(x, y).then(|| self.height_extended(x, y))
    }

    /// Weight in [0, 1] of the eye color at (x, y).
    fn eye_weight(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        self.eyes
            .iter()
            .filter(|e| e.amplitude != 0.0)
            .map(|e| bump_value(e, dx, dy) / e.amplitude)
            .fold(0.0, f64::max)
    }

    fn min_depth_bound(&self) -> f64 {
        let nose = self.nose.map_or(0.0, |n| n.amplitude.max(0.0));
        let dents: f64 = self.eyes.iter().map(|e| e.amplitude.min(0.0)).sum();
        self.center[2] - self.radii[2] - nose + dents
    }

    fn max_depth_bound(&self) -> f64 {
        let rim = (1.0 - self.cap_fraction * self.cap_fraction).sqrt();
        let nose = self.nose.map_or(0.0, |n| (-n.amplitude).max(0.0));
        let dents: f64 = self.eyes.iter().map(|e| e.amplitude.max(0.0)).sum();
        self.center[2] - self.radii[2] * rim + nose + dents
    }

    /// Intersects the ray `t * (a, b, 1) - offset` (camera at `-offset`) with
    /// the surface. Returns the depth-camera point when it lands on the face.
    fn cast(&self, a: f64, b: f64, offset: [f64; 3]) -> Option<[f64; 3]> {
        let mut t = self.center[2] + offset[2];
        for _ in 0..RAY_ITERS {
            let next = self.height_extended(t * a - offset[0], t * b - offset[1]) + offset[2];
            let done = (next - t).abs() <= RAY_TOL * next.abs().max(1.0);
            t = next;
            if done {
                break;
            }
        }
        let p = [t * a - offset[0], t * b - offset[1], t - offset[2]];
        (p[2] > 0.0 && self.in_support(p[0], p[1])).then_some(p)
    }
}

/// The analytic surface plus the depth pixels whose rays hit it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub surface: Surface,
    pub width: u32,
    pub height: u32,
    pub face_mask: Vec<bool>,
}

impl GroundTruth {
    pub fn is_face(&self, u: u32, v: u32) -> bool {
        self.face_mask[v as usize * self.width as usize + u as usize]
    }

    pub fn face_pixel_count(&self) -> usize {
        self.face_mask.iter().filter(|&&m| m).count()
    }

    /// Tight bounding box of the face mask.
    pub fn face_bbox(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for v in 0..self.height {
            for u in 0..self.width {
                if self.is_face(u, v) {
                    x0 = x0.min(u);
                    y0 = y0.min(v);
                    x1 = x1.max(u);
                    y1 = y1.max(v);
                }
            }
        }
        (x0 != u32::MAX).then(|| PixelRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

pub fn eval_ground_truth(gt: &GroundTruth, x: f64, y: f64) -> Option<f64> {
    gt.surface.height(x, y)
}

/// Noise-free depth (meters) along the ray of depth pixel (u, v), and whether
/// the ray hit the face.
pub fn trace_depth_pixel(
    surface: &Surface,
    background: f64,
    intr: &Intrinsics,
    u: u32,
    v: u32,
) -> (f64, bool) {
    let a = (u as f64 - intr.principal_u) / intr.focal_px;
    let b = (v as f64 - intr.principal_v) / intr.focal_px;
    match surface.cast(a, b, [0.0; 3]) {
        Some(p) => (p[2], true),
        None => (background, false),
    }
}

fn pixel_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn render_depth(spec: &SceneSpec, surface: &Surface, intr: &Intrinsics) -> (Vec<u16>, Vec<bool>) {
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked"));
    let w = intr.width;
    let rows: Vec<(Vec<u16>, Vec<bool>)> = (0..intr.height)
        .into_par_iter()
        .map(|v| {
            let mut samples = Vec::with_capacity(w as usize);
            let mut mask = Vec::with_capacity(w as usize);
            for u in 0..w {
                let (z, face) = trace_depth_pixel(surface, spec.background_depth, intr, u, v);
                let mut rng = pixel_rng(spec.rng_seed, v as u64 * w as u64 + u as u64);
                let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                let dropped = rng.random::<f64>() < spec.dropout_fraction;
                let holed = spec.hole_rects.iter().any(|h| h.contains(u, v));
                let mm = (z * 1000.0 + n).round().clamp(1.0, u16::MAX as f64) as u16;
                samples.push(if dropped || holed { 0 } else { mm });
                mask.push(face);
            }
            (samples, mask)
        })
        .collect();
    let mut samples = Vec::with_capacity((w * intr.height) as usize);
    let mut mask = Vec::with_capacity(samples.capacity());
    for (s, m) in rows {
        samples.extend(s);
        mask.extend(m);
    }
    (samples, mask)
}

fn render_color(surface: &Surface, intr: &Intrinsics, rig: &RigExtrinsics) -> Vec<[u8; 3]> {
    let w = intr.width;
    (0..intr.height)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..w).map(move |u| {
                let a = (u as f64 - intr.principal_u) / intr.focal_px;
                let b = (v as f64 - intr.principal_v) / intr.focal_px;
                match surface.cast(a, b, rig.baseline) {
                    Some(p) => {
                        let t = surface.eye_weight(p[0], p[1]);
                        let mix = |i: usize| {
                            (SKIN[i] as f64 * (1.0 - t) + EYE[i] as f64 * t).round() as u8
                        };
                        [mix(0), mix(1), mix(2)]
                    }
                    None => BACKGROUND,
                }
            })
        })
        .collect()
}

/// Renders the depth frame (depth camera) and the color frame (color camera,
/// offset by the rig baseline) of a scene.
pub fn render_scene(
    spec: &SceneSpec,
    cams: &IntrinsicsDoc,
) -> Result<(DepthFrame, ColorFrame, GroundTruth)> {
    spec.validate()?;
    let di = &cams.depth_intrinsics;
    let ci = &cams.color_intrinsics;
    di.validate()?;
    ci.validate()?;
    cams.rig.validate()?;
    let surface = spec.surface();
    let (samples, face_mask) = render_depth(spec, &surface, di);
    let depth = DepthFrame::new(di.width, di.height, samples)?;
    let color = ColorFrame::new(ci.width, ci.height, render_color(&surface, ci, &cams.rig))?;
    let gt = GroundTruth {
        surface,
        width: di.width,
        height: di.height,
        face_mask,
    };
    Ok((depth, color, gt))
}

/// Ground truth without rendering the frames.
pub fn ground_truth(spec: &SceneSpec, intr: &Intrinsics) -> Result<GroundTruth> {
    spec.validate()?;
    intr.validate()?;
    let surface = spec.surface();
    let face_mask = (0..intr.height)
        .into_par_iter()
        .flat_map_iter(|v| {
            let surface = &surface;
            (0..intr.width)
                .map(move |u| trace_depth_pixel(surface, spec.background_depth, intr, u, v).1)
        })
        .collect();
    Ok(GroundTruth {
        surface,
        width: intr.width,
        height: intr.height,
        face_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::back_project;

    fn cams() -> IntrinsicsDoc {
        let depth = Intrinsics {
            focal_px: 580.0,
            principal_u: 319.5,
            principal_v: 239.5,
            width: 640,
            height: 480,
        };
        IntrinsicsDoc {
            depth_intrinsics: depth,
            color_intrinsics: Intrinsics {
                focal_px: 525.0,
                ..depth
            },
            rig: RigExtrinsics {
                baseline: [0.025, 0.0, 0.0],
            },
        }
    }

    fn scene() -> SceneSpec {
        SceneSpec {
            face_center: [0.0, 0.0, 0.78],
            face_radii: [0.085, 0.11, 0.06],
            cap_fraction: 0.8,
            nose: Some(Bump {
                offset: [0.0, 0.0],
                amplitude: 0.022,
                width: 0.012,
            }),
            eyes: vec![
                Bump {
                    offset: [-0.032, -0.03],
                    amplitude: 0.006,
                    width: 0.01,
                },
                Bump {
                    offset: [0.032, -0.03],
                    amplitude: 0.006,
                    width: 0.01,
                },
            ],
            background_depth: 1.3,
            noise_sigma: 0.0,
            dropout_fraction: 0.0,
            hole_rects: vec![],
            rng_seed: 7,
        }
    }

    #[test]
    fn clean_render_is_rounded_truth() {
        let (depth, _, gt) = render_scene(&scene(), &cams()).unwrap();
        let di = cams().depth_intrinsics;
        let mut faces = 0;
        for v in 0..di.height {
            for u in 0..di.width {
                let (z, face) = trace_depth_pixel(&gt.surface, 1.3, &di, u, v);
                assert_eq!(face, gt.is_face(u, v));
                assert_eq!(depth.get(u, v), (z * 1000.0).round() as u16);
                faces += face as usize;
            }
        }
        assert!(faces > 10_000, "{faces}");
    }

    #[test]
    fn clean_back_projection_lies_on_surface() {
        let (depth, _, gt) = render_scene(&scene(), &cams()).unwrap();
        let cloud = back_project(&depth, &cams().depth_intrinsics).unwrap();
        let mut checked = 0;
        for (p, src) in cloud.points.iter().zip(&cloud.source_pixels) {
            let (u, v) = src.unwrap();
            if !gt.is_face(u, v) {
                assert_eq!(depth.get(u, v), 1300);
                continue;
            }
            // The quantized depth moves the point along its ray; compare with
            // the true depth of the same pixel.
            let (z, _) = trace_depth_pixel(&gt.surface, 1.3, &cams().depth_intrinsics, u, v);
            assert!((p[2] - z).abs() <= 0.0005 + 1e-12);
            checked += 1;
        }
        assert!(checked > 10_000);
    }

    #[test]
    fn dropout_rate_over_face() {
        let mut s = scene();
        s.dropout_fraction = 0.2;
        s.noise_sigma = 1.0;
        let (depth, _, gt) = render_scene(&s, &cams()).unwrap();
        let (mut total, mut dropped) = (0usize, 0usize);
        for v in 0..depth.height() {
            for u in 0..depth.width() {
                if gt.is_face(u, v) {
                    total += 1;
                    dropped += (depth.get(u, v) == 0) as usize;
                }
            }
        }
        assert!(total >= 10_000, "{total}");
        let rate = dropped as f64 / total as f64;
        assert!((0.18..=0.22).contains(&rate), "{rate}");
    }

    #[test]
    fn holes_clear_exactly_their_pixels() {
        let mut s = scene();
        let hole = HoleSpec {
            center: [320.0, 243.0],
            semi_axes: [2.5, 3.5],
        };
        s.hole_rects = vec![hole];
        let (depth, _, _) = render_scene(&s, &cams()).unwrap();
        let mut inside = 0;
        for v in 0..depth.height() {
            for u in 0..depth.width() {
                let du = (u as f64 - 320.0) / 2.5;
                let dv = (v as f64 - 243.0) / 3.5;
                let want_hole = du * du + dv * dv <= 1.0;
                assert_eq!(depth.get(u, v) == 0, want_hole, "({u}, {v})");
                inside += want_hole as usize;
            }
        }
        // Columns u = 318..=322 hold 5, 7, 7, 7, 5 rows of the ellipse.
        assert_eq!(inside, 31);
    }

    #[test]
    fn render_is_deterministic() {
        let mut s = scene();
        s.noise_sigma = 1.0;
        s.dropout_fraction = 0.05;
        let a = render_scene(&s, &cams()).unwrap();
        let b = render_scene(&s, &cams()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        s.rng_seed += 1;
        assert_ne!(render_scene(&s, &cams()).unwrap().0, a.0);
    }

    #[test]
    fn background_separation() {
        let mut s = scene();
        s.noise_sigma = 1.0;
        let (depth, _, gt) = render_scene(&s, &cams()).unwrap();
        let (mut face_max, mut bg_min) = (0u16, u16::MAX);
        for v in 0..depth.height() {
            for u in 0..depth.width() {
                let d = depth.get(u, v);
                if gt.is_face(u, v) {
                    face_max = face_max.max(d);
                } else {
                    bg_min = bg_min.min(d);
                }
            }
        }
        let bound = 1000.0 * (1.3 - s.surface().max_depth_bound()) - 3.0 * 1.0;
        // 6-sigma tails of 300k draws may cross 3 sigma; allow the sample
        // extremes a few more sigma.
        assert!(
            (bg_min - face_max) as f64 >= bound - 6.0,
            "{bg_min} {face_max} {bound}"
        );
    }

    #[test]
    fn apex_is_center_minus_radius() {
        let mut s = scene();
        s.nose = None;
        s.eyes.clear();
        let gt = ground_truth(&s, &cams().depth_intrinsics).unwrap();
        assert_eq!(eval_ground_truth(&gt, 0.0, 0.0), Some(0.78 - 0.06));
        assert_eq!(eval_ground_truth(&gt, 0.085 * 0.81, 0.0), None);
        assert_eq!(eval_ground_truth(&gt, 0.5, 0.5), None);
    }

    /// Bisection on `t - h(t a, t b)` along the pixel ray, without the fixed
    /// point iteration the renderer uses.
    fn bisect_ray(surface: &Surface, a: f64, b: f64) -> f64 {
        let f = |t: f64| t - surface.height_extended(t * a, t * b);
        let (mut lo, mut hi) = (0.5, 1.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ground_truth_matches_ray_cast_oracle() {
        let s = scene();
        let gt = ground_truth(&s, &cams().depth_intrinsics).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut n = 0;
        while n < 100 {
            let x = rng.random_range(-0.085..0.085);
            let y = rng.random_range(-0.11..0.11);
            let Some(z) = eval_ground_truth(&gt, x, y) else {
                continue;
            };
            let t = bisect_ray(&gt.surface, x / z, y / z);
            assert!((t - z).abs() <= 1e-9, "({x}, {y}): {z} vs {t}");
            n += 1;
        }
    }

    #[test]
    fn color_marks_face_and_eyes() {
        let (_, color, _) = render_scene(&scene(), &cams()).unwrap();
        assert_eq!(color.get(0, 0), BACKGROUND);
        // The color camera sits 25 mm to the -x side of the depth camera, so
        // the face center appears right of the principal point.
        let shift = (525.0f64 * 0.025 / (0.78 - 0.06 - 0.022)).round() as u32;
        assert_eq!(color.get(320 + shift, 240), SKIN);
        let (eu, ev): (f64, f64) = (
            525.0 * (-0.032 + 0.025) / 0.78 + 319.5,
            525.0 * -0.03 / 0.78 + 239.5,
        );
        let eye = color.get(eu.round() as u32, ev.round() as u32);
        assert!(eye[0] < 120, "{eye:?}");
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = scene();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(SceneSpec::from_json(&text).unwrap(), s);
        let mut bad = s.clone();
        bad.dropout_fraction = 0.99;
        assert!(matches!(bad.validate(), Err(Error::Validation(_))));
        let mut bad = s.clone();
        bad.background_depth = 0.7;
        assert!(matches!(bad.validate(), Err(Error::Validation(_))));
        let mut bad = s;
        bad.face_radii[1] = 0.0;
        assert!(matches!(bad.validate(), Err(Error::Validation(_))));
        assert!(matches!(
            SceneSpec::from_json("{\"face_center\": 1}"),
            Err(Error::Parse { .. })
        ));
    }
}
