use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cascade::Cascade;
use super::integral::{integral_images, Integral};
use super::{DetectConfig, GrayFrame};
use crate::error::{Error, Result};
use crate::geometry::PixelRect;

/// Relative tolerance for two detections to count as the same face.
pub const GROUP_EPS: f64 = 0.2;

fn scaled(v: u32, scale: f64) -> u32 {
    (v as f64 * scale).round() as u32
}

/// How a window's feature responses are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowNorm {
    /// Mean and variance over the window inset by one base pixel on each
    /// side, `inv` from that inset area, and the first rect weight rebalanced
    /// so every scaled feature sums to zero on a flat patch. This is the
    /// convention the stock OpenCV cascades were trained under.
    #[default]
    Inset,
    /// Mean and variance over the whole window, `inv = 1/(W*H)`, weights as
    /// stored.
    Full,
}

#[derive(Debug, Clone, Copy)]
struct ScaledRect {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    weight: f64,
}

/// A cascade's geometry resolved at one scale.
struct ScaledCascade<'a> {
    cascade: &'a Cascade,
    window: (u32, u32),
    norm_rect: (u32, u32, u32, u32),
    features: Vec<Vec<ScaledRect>>,
}

impl<'a> ScaledCascade<'a> {
    fn new(c: &'a Cascade, scale: f64, norm: WindowNorm) -> Self {
        let window = (scaled(c.base_width, scale), scaled(c.base_height, scale));
        let norm_rect = match norm {
            WindowNorm::Inset if c.base_width > 2 && c.base_height > 2 => (
                scaled(1, scale),
                scaled(1, scale),
                scaled(c.base_width - 1, scale) - scaled(1, scale),
                scaled(c.base_height - 1, scale) - scaled(1, scale),
            ),
            _ => (0, 0, window.0, window.1),
        };
        let features = c
            .features
            .iter()
            .map(|f| {
                let mut rects: Vec<ScaledRect> = f
                    .rects
                    .iter()
                    .map(|r| {
                        let (x0, y0) = (scaled(r.x, scale), scaled(r.y, scale));
                        ScaledRect {
                            x: x0,
                            y: y0,
                            w: scaled(r.x + r.w, scale) - x0,
                            h: scaled(r.y + r.h, scale) - y0,
                            weight: r.weight,
                        }
                    })
                    .collect();
                let area0 = (rects[0].w * rects[0].h) as f64;
                if norm == WindowNorm::Inset && area0 > 0.0 {
                    let rest: f64 = rects[1..]
                        .iter()
                        .map(|r| r.weight * (r.w * r.h) as f64)
                        .sum();
                    rects[0].weight = -rest / area0;
                }
                rects
            })
            .collect();
        Self {
            cascade: c,
            window,
            norm_rect,
            features,
        }
    }

    fn evaluate(&self, ii: &Integral, sq: &Integral, (ox, oy): (u32, u32)) -> bool {
        let (nx, ny, nw, nh) = self.norm_rect;
        let inv = 1.0 / (nw as f64 * nh as f64);
        let mean = ii.rect_sum(ox + nx, oy + ny, nw, nh) as f64 * inv;
        let var = sq.rect_sum(ox + nx, oy + ny, nw, nh) as f64 * inv - mean * mean;
        let mut var_norm = var.max(0.0).sqrt();
        if var_norm == 0.0 {
            var_norm = 1.0;
        }
        for stage in &self.cascade.stages {
            let mut sum = 0.0;
            for wc in &stage.weak_classifiers {
                let response: f64 = self.features[wc.feature_index]
                    .iter()
                    .map(|r| r.weight * ii.rect_sum(ox + r.x, oy + r.y, r.w, r.h) as f64)
                    .sum();
                sum += if response * inv < wc.threshold * var_norm {
                    wc.left_value
                } else {
                    wc.right_value
                };
            }
            if sum < stage.stage_threshold {
                return false;
            }
        }
        true
    }
}

/// Runs the cascade on the window at `origin` whose size is the base window
/// times `scale` (rounded). Feature rect edges are scaled and rounded the
/// same way.
pub fn evaluate_window(
    c: &Cascade,
    ii: &Integral,
    sq: &Integral,
    origin: (u32, u32),
    scale: f64,
    norm: WindowNorm,
) -> Result<bool> {
    if scale.is_nan() || scale < 1.0 {
        return Err(Error::Usage(format!(
            "window scale must be >= 1, got {scale}"
        )));
    }
    let (ww, wh) = (scaled(c.base_width, scale), scaled(c.base_height, scale));
    let (ox, oy) = origin;
    if ox as u64 + ww as u64 > ii.width() as u64 || oy as u64 + wh as u64 > ii.height() as u64 {
        return Err(Error::Usage(format!(
            "window {ww}x{wh} at ({ox}, {oy}) exceeds the {}x{} frame",
            ii.width(),
            ii.height()
        )));
    }
    Ok(ScaledCascade::new(c, scale, norm).evaluate(ii, sq, origin))
}

/// Window scales `scale_factor^i` whose scaled window fits the frame.
fn scales(c: &Cascade, width: u32, height: u32, scale_factor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = 1.0f64;
    while scaled(c.base_width, s) <= width && scaled(c.base_height, s) <= height {
        out.push(s);
        s *= scale_factor;
    }
    out
}

/// Every window that passes the cascade, in a fixed order.
pub fn scan_windows(
    c: &Cascade,
    gray: &GrayFrame,
    scale_factor: f64,
    norm: WindowNorm,
) -> Result<Vec<PixelRect>> {
    if !(scale_factor > 1.0 && scale_factor.is_finite()) {
        return Err(Error::Validation(format!(
            "scale_factor must be > 1, got {scale_factor}"
        )));
    }
    let (ii, sq) = integral_images(gray);
    let per_scale: Vec<Vec<PixelRect>> = scales(c, gray.width, gray.height, scale_factor)
        .into_par_iter()
        .map(|s| {
            let sc = ScaledCascade::new(c, s, norm);
            let (ww, wh) = sc.window;
            let step = (s.round() as usize).max(1);
            let mut hits = Vec::new();
            for y in (0..=gray.height - wh).step_by(step) {
                for x in (0..=gray.width - ww).step_by(step) {
                    if sc.evaluate(&ii, &sq, (x, y)) {
                        hits.push(PixelRect::new(x, y, ww, wh));
                    }
                }
            }
            hits
        })
        .collect();
    Ok(per_scale.into_iter().flatten().collect())
}

fn similar(a: &PixelRect, b: &PixelRect, eps: f64) -> bool {
    let delta = eps * a.w.min(a.h).min(b.w).min(b.h) as f64;
    let close = |p: u32, q: u32| (p as f64 - q as f64).abs() <= delta;
    close(a.x, b.x) && close(a.y, b.y) && close(a.x + a.w, b.x + b.w) && close(a.y + a.h, b.y + b.h)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges similar rects (transitively) and returns the rounded mean rect of
/// each group with at least `min_neighbors` members, largest area first.
pub fn group_rects(rects: &[PixelRect], min_neighbors: usize, eps: f64) -> Vec<PixelRect> {
    let mut sorted = rects.to_vec();
    sorted.sort_unstable_by_key(|r| (r.y, r.x, r.h, r.w));
    let n = sorted.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&sorted[i], &sorted[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<PixelRect> = groups
        .values()
        .filter(|g| g.len() >= min_neighbors.max(1))
        .map(|g| {
            let k = g.len() as f64;
            let mean = |f: fn(&PixelRect) -> u32| {
                (g.iter().map(|&i| f(&sorted[i]) as f64).sum::<f64>() / k).round() as u32
            };
            PixelRect::new(mean(|r| r.x), mean(|r| r.y), mean(|r| r.w), mean(|r| r.h))
        })
        .collect();
    out.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    out
}

/// Multi-scale sliding-window detection followed by grouping.
pub fn detect_faces(c: &Cascade, gray: &GrayFrame, cfg: &DetectConfig) -> Result<Vec<PixelRect>> {
    let hits = scan_windows(c, gray, cfg.scale_factor, cfg.window_norm)?;
    Ok(group_rects(&hits, cfg.min_neighbors, GROUP_EPS))
}

#[cfg(test)]
pub(super) type FeatureRects = Vec<Vec<(u32, u32, u32, u32, f64)>>;

#[cfg(test)]
pub(super) fn scaled_features(c: &Cascade, scale: f64, norm: WindowNorm) -> FeatureRects {
    ScaledCascade::new(c, scale, norm)
        .features
        .into_iter()
        .map(|f| {
            f.into_iter()
                .map(|r| (r.x, r.y, r.w, r.h, r.weight))
                .collect()
        })
        .collect()
}
