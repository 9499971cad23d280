//! k-means on 3D coordinates and selection of the cluster under the face
//! center.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelRect, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansInit {
    /// Greedy k-means++ seeding.
    PlusPlus,
    /// k distinct points drawn uniformly.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Convergence threshold on the largest centroid move, meters.
    pub tol: f64,
    pub rng_seed: u64,
    pub init: KMeansInit,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iters: 100,
            tol: 1e-6,
            rng_seed: 42,
            init: KMeansInit::PlusPlus,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Validation(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    /// Sum of squared distances from each point to its cluster centroid.
    pub inertia: f64,
    /// Objective after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest centroid; the lowest index wins ties.
fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = d2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Draws an index with probability proportional to `weights`.
fn weighted_pick(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// Greedy k-means++: each new center is the best of `2 + ln k` D²-weighted
/// candidates by resulting potential.
fn plus_plus(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![points[rng.random_range(0..n)]];
    let mut closest: Vec<f64> = points.iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                weighted_pick(&closest, total, rng)
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &c)| c.min(d2(p, &points[cand])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, updated));
            }
        }
        let (_, cand, updated) = best.expect("at least two trials");
        centers.push(points[cand]);
        closest = updated;
    }
    centers
}

/// Lloyd's algorithm. Clusters left empty by an assignment step are
/// dropped, so the result may have fewer than `k` clusters.
pub fn kmeans(points: &[[f64; 3]], cfg: &KMeansConfig) -> Result<Clustering> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::Usage("k-means needs at least one point".into()));
    }
    let n = points.len();
    let k = cfg.k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut centroids = match cfg.init {
        KMeansInit::PlusPlus => plus_plus(points, k, &mut rng),
        KMeansInit::Uniform => sample(&mut rng, n, k)
            .into_iter()
            .map(|i| points[i])
            .collect(),
    };
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids).0;
        }
        // Means are accumulated relative to each cluster's first member, which
        // keeps coincident members exactly on their centroid.
        let mut refs: Vec<Option<[f64; 3]>> = vec![None; centroids.len()];
        let mut sums = vec![[0.0f64; 3]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            let r = *refs[*l].get_or_insert(*p);
            for d in 0..3 {
                sums[*l][d] += p[d] - r[d];
            }
        }
        let mut remap = vec![usize::MAX; centroids.len()];
        let mut next = Vec::with_capacity(centroids.len());
        let mut shift: f64 = 0.0;
        for j in 0..centroids.len() {
            if counts[j] == 0 {
                continue;
            }
            let r = refs[j].expect("non-empty cluster");
            let c: [f64; 3] = std::array::from_fn(|d| r[d] + sums[j][d] / counts[j] as f64);
            shift = shift.max(d2(&c, &centroids[j]).sqrt());
            remap[j] = next.len();
            next.push(c);
        }
        for l in labels.iter_mut() {
            *l = remap[*l];
        }
        centroids = next;
        trace.push(inertia(points, &labels, &centroids));
        if shift < cfg.tol {
            break;
        }
    }
    Ok(Clustering {
        inertia: *trace.last().expect("at least one iteration"),
        labels,
        centroids,
        inertia_trace: trace,
        iterations,
    })
}

fn inertia(points: &[[f64; 3]], labels: &[usize], centroids: &[[f64; 3]]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| d2(p, &centroids[l]))
        .sum()
}

/// Keeps the cluster of the point whose source pixel is nearest to the
/// rect center, preserving order.
pub fn select_face_cluster(
    cloud: &PointCloud,
    clustering: &Clustering,
    face_rect: &PixelRect,
) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::NoFace("no points inside the face region".into()));
    }
    if clustering.labels.len() != cloud.len() {
        return Err(Error::Usage(format!(
            "{} labels for {} points",
            clustering.labels.len(),
            cloud.len()
        )));
    }
    let (cu, cv) = face_rect.center();
    let mut seed = None;
    for (i, src) in cloud.source_pixels.iter().enumerate() {
        let (u, v) = src.ok_or_else(|| {
            Error::Usage(format!(
                "point {i} has no source pixel; cannot locate the face center"
            ))
        })?;
        let d = (u as f64 - cu).powi(2) + (v as f64 - cv).powi(2);
        if seed.is_none_or(|(_, best)| d < best) {
            seed = Some((i, d));
        }
    }
    let label = clustering.labels[seed.expect("cloud is non-empty").0];
    Ok(cloud.select(
        clustering
            .labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == label)
            .map(|(i, _)| i),
    ))
}
