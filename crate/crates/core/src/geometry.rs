//! Pinhole camera model, depth-to-color registration and back-projection.
//!
//! Depth frames store millimeters with `0` meaning "no return"; everything in
//! memory after back-projection is in meters. A single focal length serves
//! both image axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub principal_u: f64,
    pub principal_v: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::Validation(format!(
                "focal_px must be positive, got {}",
                self.focal_px
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "image size must be non-zero, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.principal_u >= 0.0 && self.principal_u < self.width as f64) {
            return Err(Error::Validation(format!(
                "principal_u {} outside [0, {})",
                self.principal_u, self.width
            )));
        }
        if !(self.principal_v >= 0.0 && self.principal_v < self.height as f64) {
            return Err(Error::Validation(format!(
                "principal_v {} outside [0, {})",
                self.principal_v, self.height
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    /// Returns `None` for points at or behind the image plane.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            self.focal_px * p[0] / p[2] + self.principal_u,
            self.focal_px * p[1] / p[2] + self.principal_v,
        ))
    }

    /// Inverse of [`Intrinsics::project`] for a known depth in meters.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [
            (u - self.principal_u) * z / self.focal_px,
            (v - self.principal_v) * z / self.focal_px,
            z,
        ]
    }

    fn check_frame(&self, width: u32, height: u32, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Config(format!(
                "{what} frame is {width}x{height} but intrinsics describe {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Rotation-free offset between the depth and color cameras.
///
/// `baseline` is added to a depth-camera point to express it in color-camera
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigExtrinsics {
    pub baseline: [f64; 3],
}

impl RigExtrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.baseline.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "baseline must be finite, got {:?}",
                self.baseline
            )))
        }
    }
}

/// Row-major depth samples in millimeters; `0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    width: u32,
    height: u32,
    samples: Vec<u16>,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, samples: Vec<u16>) -> Result<Self> {
        if samples.len() != width as usize * height as usize {
            return Err(Error::Config(format!(
                "depth frame {width}x{height} needs {} samples, got {}",
                width as usize * height as usize,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.samples[v as usize * self.width as usize + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|&&d| d != 0).count()
    }
}

/// Row-major 8-bit RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorFrame {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl ColorFrame {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Config(format!(
                "color frame {width}x{height} needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        self.pixels[v as usize * self.width as usize + u as usize]
    }
}

/// Depth frame with a color sample attached to every valid depth pixel that
/// lands inside the color image.
#[derive(Debug, Clone)]
pub struct RegisteredFrame {
    pub depth: DepthFrame,
    pub color_at_depth: Vec<Option<[u8; 3]>>,
    pub depth_intrinsics: Intrinsics,
}

impl RegisteredFrame {
    /// The aligned color image on the depth grid. Pixels without a color
    /// sample are black.
    pub fn aligned_color(&self) -> ColorFrame {
        let pixels = self
            .color_at_depth
            .iter()
            .map(|c| c.unwrap_or([0, 0, 0]))
            .collect();
        ColorFrame {
            width: self.depth.width,
            height: self.depth.height,
            pixels,
        }
    }
}

/// Axis-aligned pixel rectangle; covers columns `x..x + w` and rows `y..y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u >= self.x && v >= self.y && (u - self.x) < self.w && (v - self.y) < self.h
    }

    /// Center of the covered pixel span, in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + (self.w as f64 - 1.0) / 2.0,
            self.y as f64 + (self.h as f64 - 1.0) / 2.0,
        )
    }

    pub fn iou(&self, other: &PixelRect) -> f64 {
        let x0 = self.x.max(other.x) as i64;
        let y0 = self.y.max(other.y) as i64;
        let x1 = ((self.x + self.w).min(other.x + other.w)) as i64;
        let y1 = ((self.y + self.h).min(other.y + other.h)) as i64;
        let inter = ((x1 - x0).max(0) * (y1 - y0).max(0)) as f64;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Colored 3D points in meters, optionally tagged with the depth pixel they
/// came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub source_pixels: Vec<Option<(u32, u32)>>,
}

impl PointCloud {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            points: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            source_pixels: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: [f64; 3], color: [u8; 3], source: Option<(u32, u32)>) {
        self.points.push(point);
        self.colors.push(color);
        self.source_pixels.push(source);
    }

    /// Sub-cloud of the given indices, in the order given.
    pub fn select(&self, indices: impl IntoIterator<Item = usize>) -> PointCloud {
        let mut out = PointCloud::default();
        for i in indices {
            out.push(self.points[i], self.colors[i], self.source_pixels[i]);
        }
        out
    }

    pub fn xy(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p[0], p[1]]).collect()
    }
}

/// Back-projects every valid depth pixel through the pinhole model. Points
/// are emitted in row-major pixel order and colored black.
pub fn back_project(depth: &DepthFrame, intr: &Intrinsics) -> Result<PointCloud> {
    intr.check_frame(depth.width, depth.height, "depth")?;
    let mut cloud = PointCloud::with_capacity(depth.valid_count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d == 0 {
                continue;
            }
            let z = d as f64 / 1000.0;
            cloud.push(
                intr.unproject(u as f64, v as f64, z),
                [0, 0, 0],
                Some((u, v)),
            );
        }
    }
    Ok(cloud)
}

/// Back-projects a registered frame, attaching the registered colors. Points
/// whose projection missed the color image stay black.
pub fn back_project_registered(frame: &RegisteredFrame) -> Result<PointCloud> {
    let mut cloud = back_project(&frame.depth, &frame.depth_intrinsics)?;
    let width = frame.depth.width as usize;
    for (color, src) in cloud.colors.iter_mut().zip(&cloud.source_pixels) {
        let (u, v) = src.expect("back_project tags every point");
        if let Some(c) = frame.color_at_depth[v as usize * width + u as usize] {
            *color = c;
        }
    }
    Ok(cloud)
}

/// Nearest pixel with halves rounded up.
fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Samples the color image onto the depth grid: each valid depth pixel is
/// back-projected, shifted by the rig baseline and projected into the color
/// camera. No occlusion handling.
pub fn register_depth_to_color(
    depth: &DepthFrame,
    color: &ColorFrame,
    depth_intr: &Intrinsics,
    color_intr: &Intrinsics,
    rig: &RigExtrinsics,
) -> Result<RegisteredFrame> {
    depth_intr.validate()?;
    color_intr.validate()?;
    rig.validate()?;
    depth_intr.check_frame(depth.width, depth.height, "depth")?;
    color_intr.check_frame(color.width, color.height, "color")?;

    let b = rig.baseline;
    let mut color_at_depth = vec![None; depth.samples.len()];
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d == 0 {
                continue;
            }
            let p = depth_intr.unproject(u as f64, v as f64, d as f64 / 1000.0);
            let q = [p[0] + b[0], p[1] + b[1], p[2] + b[2]];
            let Some((uc, vc)) = color_intr.project(q) else {
                continue;
            };
            let (uc, vc) = (round_half_up(uc), round_half_up(vc));
            if uc >= 0 && vc >= 0 && uc < color.width as i64 && vc < color.height as i64 {
                color_at_depth[v as usize * depth.width as usize + u as usize] =
                    Some(color.get(uc as u32, vc as u32));
            }
        }
    }
    Ok(RegisteredFrame {
        depth: depth.clone(),
        color_at_depth,
        depth_intrinsics: *depth_intr,
    })
}

/// Keeps the points whose source pixel lies inside `rect`, preserving order.
pub fn crop_by_rect(cloud: &PointCloud, rect: &PixelRect) -> Result<PointCloud> {
    let mut keep = Vec::new();
    for (i, src) in cloud.source_pixels.iter().enumerate() {
        let (u, v) = src.ok_or_else(|| {
            Error::Usage(format!(
                "point {i} has no source pixel; cannot crop by rect"
            ))
        })?;
        if rect.contains(u, v) {
            keep.push(i);
        }
    }
    Ok(cloud.select(keep))
}
