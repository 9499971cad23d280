//! Viola-Jones face detection with pretrained OpenCV Haar cascades.

mod cascade;
mod integral;
mod scan;

use serde::{Deserialize, Serialize};

pub use cascade::{
    parse_cascade, write_cascade, Cascade, CascadeCounts, HaarFeature, HaarRect, Stage,
    WeakClassifier,
};
pub use integral::{integral_images, Integral};
pub use scan::{detect_faces, evaluate_window, group_rects, scan_windows, WindowNorm, GROUP_EPS};

use crate::error::{Error, Result};
use crate::geometry::ColorFrame;
pub use crate::geometry::PixelRect;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn get(&self, u: u32, v: u32) -> u8 {
        self.pixels[v as usize * self.width as usize + u as usize]
    }
}

pub fn to_grayscale(color: &ColorFrame) -> GrayFrame {
    let pixels = color
        .pixels()
        .iter()
        .map(|&[r, g, b]| {
            (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayFrame {
        width: color.width(),
        height: color.height(),
        pixels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    pub window_norm: WindowNorm,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_neighbors: 3,
            window_norm: WindowNorm::Inset,
        }
    }
}

/// The override when given, else the largest detection (first on ties).
pub fn face_region(
    detections: &[PixelRect],
    override_rect: Option<PixelRect>,
) -> Result<PixelRect> {
    if let Some(r) = override_rect {
        return Ok(r);
    }
    let mut best: Option<PixelRect> = None;
    for d in detections {
        if best.is_none_or(|b| d.area() > b.area()) {
            best = Some(*d);
        }
    }
    best.ok_or_else(|| Error::NoFace("no face detected and no bounding box given".into()))
}
