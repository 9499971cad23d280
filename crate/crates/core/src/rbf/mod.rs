//! Gaussian RBF height-field interpolation over the seed cloud.
//!
//! Seeds are treated as a height field z(x, y). The kernel
//! `exp(-r^2 / r0^2)` is truncated at `cutoff_multiplier * r0` for the sparse
//! solve; the dense solver keeps the full matrix.

pub mod linalg;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::neighbors::{average_nn_distance_with, KdForest, KdTree, DEFAULT_BUCKET_SIZE};
use linalg::{conjugate_gradient, lu_solve, CsrMatrix};

/// Largest system the dense solver accepts.
pub const DENSE_MAX_CENTERS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[serde(alias = "cg")]
    SparseCg,
    #[serde(alias = "dense")]
    DenseExact,
}

/// Constant removed from the seed values before solving and added back on
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueOffset {
    /// Fit `z - mean(z)`, so the field relaxes to the mean height away from
    /// the seeds instead of to zero.
    Mean,
    /// Fit the raw values.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbfConfig {
    /// `r0 = r0_multiplier * average seed spacing`.
    pub r0_multiplier: f64,
    /// Kernel support radius in units of `r0`.
    pub cutoff_multiplier: f64,
    pub ridge: f64,
    /// Grid cells per seed spacing along each axis.
    pub upsample: u32,
    /// A cell is kept when its nearest seed lies within
    /// `mask_multiplier * average seed spacing`.
    pub mask_multiplier: f64,
    pub color_k: usize,
    pub solver: Solver,
    pub cg_rel_tol: f64,
    /// Defaults to `10 * M`.
    pub cg_max_iters: Option<usize>,
    pub value_offset: ValueOffset,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            r0_multiplier: 6.0,
            cutoff_multiplier: 3.0,
            ridge: 5e-3,
            upsample: 3,
            mask_multiplier: 2.0,
            color_k: 8,
            solver: Solver::SparseCg,
            cg_rel_tol: 1e-8,
            cg_max_iters: None,
            value_offset: ValueOffset::Mean,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r0_multiplier", self.r0_multiplier),
            ("cutoff_multiplier", self.cutoff_multiplier),
            ("mask_multiplier", self.mask_multiplier),
            ("cg_rel_tol", self.cg_rel_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Validation(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        if self.upsample == 0 {
            return Err(Error::Validation("upsample must be at least 1".into()));
        }
        if self.color_k == 0 {
            return Err(Error::Validation("color_k must be at least 1".into()));
        }
        if self.cg_max_iters == Some(0) {
            return Err(Error::Validation("cg_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn gaussian_kernel(r: f64, r0: f64) -> f64 {
    (-(r * r) / (r0 * r0)).exp()
}

#[inline]
fn kernel_d2(d2: f64, inv_r0_sq: f64) -> f64 {
    (-d2 * inv_r0_sq).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solver: Solver,
    pub iterations: usize,
    pub rel_residual: f64,
    pub nnz: usize,
}

/// Fitted RBF height field. Evaluation sums `w_i * phi(|q - c_i|)` over the
/// centers within `cutoff` (all centers when `cutoff` is `None`) in
/// ascending center order, plus `offset`.
#[derive(Debug, Clone)]
pub struct RbfModel {
    pub centers: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub r0: f64,
    pub offset: f64,
    pub cutoff: Option<f64>,
    pub stats: SolveStats,
    index: KdTree<2>,
}

impl RbfModel {
    pub fn index(&self) -> &KdTree<2> {
        &self.index
    }

    pub fn eval(&self, q: [f64; 2]) -> f64 {
        match self.cutoff {
            Some(c) => eval_rbf(self, q, &self.index, c),
            None => self.eval_full(q),
        }
    }

    /// Untruncated sum over every center.
    pub fn eval_full(&self, q: [f64; 2]) -> f64 {
        let inv = 1.0 / (self.r0 * self.r0);
        let mut s = 0.0;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let d2 = (c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2);
            s += w * kernel_d2(d2, inv);
        }
        self.offset + s
    }
}

/// Evaluates `model` at `q` using the centers of `centers_index` within
/// `cutoff`. With no center in range the result is `model.offset`.
pub fn eval_rbf(model: &RbfModel, q: [f64; 2], centers_index: &KdTree<2>, cutoff: f64) -> f64 {
    let inv = 1.0 / (model.r0 * model.r0);
    let mut s = 0.0;
    for (i, d2) in centers_index.within_radius(&q, cutoff) {
        s += model.weights[i] * kernel_d2(d2, inv);
    }
    model.offset + s
}

/// `Phi + ridge * I` with entries beyond `cutoff` dropped.
pub fn assemble_truncated(index: &KdTree<2>, r0: f64, cutoff: f64, ridge: f64) -> CsrMatrix {
    let inv = 1.0 / (r0 * r0);
    let pts = index.points();
    let rows = (0..pts.len())
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            index.within_radius_into(&pts[i], cutoff, buf);
            buf.iter()
                .map(|&(j, d2)| {
                    let diag = if j == i { ridge } else { 0.0 };
                    (j as u32, kernel_d2(d2, inv) + diag)
                })
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// Full `Phi + ridge * I`, row-major.
pub fn assemble_dense(centers: &[[f64; 2]], r0: f64, ridge: f64) -> Vec<f64> {
    let n = centers.len();
    let inv = 1.0 / (r0 * r0);
    let mut a = vec![0.0; n * n];
    a.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 =
                (centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2);
            *v = kernel_d2(d2, inv) + if i == j { ridge } else { 0.0 };
        }
    });
    a
}

/// Fits the height field through the seeds' z values over their (x, y).
pub fn fit_rbf(seeds: &PointCloud, cfg: &RbfConfig, avg_nn: f64) -> Result<RbfModel> {
    let values = seeds.points.iter().map(|p| p[2]).collect();
    fit_rbf_xy(seeds.xy(), values, cfg, avg_nn)
}

pub fn fit_rbf_xy(
    centers: Vec<[f64; 2]>,
    values: Vec<f64>,
    cfg: &RbfConfig,
    avg_nn: f64,
) -> Result<RbfModel> {
    cfg.validate()?;
    if centers.is_empty() {
        return Err(Error::Usage("RBF fit needs at least one seed".into()));
    }
    assert_eq!(centers.len(), values.len(), "one value per center");
    if !(avg_nn.is_finite() && avg_nn > 0.0) {
        return Err(Error::Usage(format!(
            "average seed spacing must be positive, got {avg_nn}"
        )));
    }
    let index = KdTree::build(centers.clone(), DEFAULT_BUCKET_SIZE)?;
    fit_with_index(index, values, cfg, avg_nn)
}

fn fit_with_index(
    index: KdTree<2>,
    values: Vec<f64>,
    cfg: &RbfConfig,
    avg_nn: f64,
) -> Result<RbfModel> {
    let m = values.len();
    let centers = index.points().to_vec();
    if cfg.ridge == 0.0 {
        for (i, c) in centers.iter().enumerate() {
            if let Some(&(j, _)) = index.within_radius(c, 0.0).iter().find(|&&(j, _)| j != i) {
                return Err(Error::Singular(format!(
                    "seeds {} and {} share (x, y) = ({}, {}) and ridge is 0",
                    i.min(j),
                    i.max(j),
                    c[0],
                    c[1]
                )));
            }
        }
    }
    let r0 = cfg.r0_multiplier * avg_nn;
    let offset = match cfg.value_offset {
        ValueOffset::Mean => values.iter().sum::<f64>() / m as f64,
        ValueOffset::None => 0.0,
    };
    let rhs: Vec<f64> = values.iter().map(|v| v - offset).collect();
    let (weights, cutoff, stats) = match cfg.solver {
        Solver::SparseCg => {
            let cutoff = cfg.cutoff_multiplier * r0;
            let a = assemble_truncated(&index, r0, cutoff, cfg.ridge);
            let max_iters = cfg.cg_max_iters.unwrap_or(10 * m);
            let out = conjugate_gradient(&a, &rhs, cfg.cg_rel_tol, max_iters)?;
            let stats = SolveStats {
                solver: Solver::SparseCg,
                iterations: out.iterations,
                rel_residual: out.rel_residual,
                nnz: a.nnz(),
            };
            (out.x, Some(cutoff), stats)
        }
        Solver::DenseExact => {
            if m > DENSE_MAX_CENTERS {
                return Err(Error::Config(format!(
                    "dense solver is limited to {DENSE_MAX_CENTERS} seeds, got {m}"
                )));
            }
            let a = assemble_dense(&centers, r0, cfg.ridge);
            let x = lu_solve(a.clone(), rhs.clone())?;
            let rel_residual = dense_rel_residual(&a, &x, &rhs);
            let stats = SolveStats {
                solver: Solver::DenseExact,
                iterations: 0,
                rel_residual,
                nnz: m * m,
            };
            (x, None, stats)
        }
    };
    Ok(RbfModel {
        centers,
        values,
        weights,
        r0,
        offset,
        cutoff,
        stats,
        index,
    })
}

fn dense_rel_residual(a: &[f64], x: &[f64], b: &[f64]) -> f64 {
    let n = b.len();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return 0.0;
    }
    let r2: f64 = (0..n)
        .map(|i| {
            let ax: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
            (b[i] - ax).powi(2)
        })
        .sum();
    r2.sqrt() / b_norm
}

/// Regular grid over the seeds' (x, y) bounding box; cells are stored
/// row-major (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
}

impl DenseGrid {
    pub fn cell(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
        ]
    }

    pub fn is_in(&self, ix: usize, iy: usize) -> bool {
        self.mask[iy * self.nx + ix]
    }

    pub fn masked_in(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Centers of the masked-in cells in row-major order.
    pub fn masked_cells(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.masked_in());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                if self.is_in(ix, iy) {
                    out.push(self.cell(ix, iy));
                }
            }
        }
        out
    }
}

pub fn make_grid(seeds: &PointCloud, cfg: &RbfConfig, avg_nn: f64) -> Result<DenseGrid> {
    if seeds.is_empty() {
        return Err(Error::Usage("grid needs at least one seed".into()));
    }
    let index = KdTree::build(seeds.xy(), DEFAULT_BUCKET_SIZE)?;
    make_grid_with(&index, cfg, avg_nn)
}

/// Upper bound on grid cells, far above any face-sized frame.
const MAX_GRID_CELLS: usize = 50_000_000;

fn make_grid_with(index: &KdTree<2>, cfg: &RbfConfig, avg_nn: f64) -> Result<DenseGrid> {
    cfg.validate()?;
    if !(avg_nn.is_finite() && avg_nn > 0.0) {
        return Err(Error::Usage(format!(
            "average seed spacing must be positive, got {avg_nn}"
        )));
    }
    let pts = index.points();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in pts {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let spacing = avg_nn / cfg.upsample as f64;
    let count = |d: usize| ((hi[d] - lo[d]) / spacing + 1e-9).floor() as usize + 1;
    let (nx, ny) = (count(0), count(1));
    if nx.saturating_mul(ny) > MAX_GRID_CELLS {
        return Err(Error::Config(format!(
            "grid of {nx}x{ny} cells is too large; raise the seed spacing or lower upsample"
        )));
    }
    let radius = cfg.mask_multiplier * avg_nn;
    let r2 = radius * radius;
    let mask = (0..nx * ny)
        .into_par_iter()
        .map(|c| {
            let q = [
                lo[0] + (c % nx) as f64 * spacing,
                lo[1] + (c / nx) as f64 * spacing,
            ];
            let (_, d) = index.nearest(&q);
            d * d <= r2
        })
        .collect();
    Ok(DenseGrid {
        origin: lo,
        spacing,
        nx,
        ny,
        mask,
    })
}

/// Neighbor search used for the color of each interpolated point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorSearch {
    Exact,
    Forest {
        trees: usize,
        top_r: usize,
        max_checks: usize,
        rng_seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Densified {
    /// Seeds first, then one point per masked-in grid cell.
    pub cloud: PointCloud,
    pub avg_nn: f64,
    pub model: RbfModel,
    pub grid: DenseGrid,
}

impl Densified {
    pub fn interpolated(&self) -> usize {
        self.cloud.len() - self.model.centers.len()
    }
}

pub fn densify(seeds: &PointCloud, cfg: &RbfConfig) -> Result<PointCloud> {
    Ok(densify_with(seeds, cfg, ColorSearch::Exact)?.cloud)
}

pub fn densify_with(seeds: &PointCloud, cfg: &RbfConfig, colors: ColorSearch) -> Result<Densified> {
    cfg.validate()?;
    if seeds.len() < 2 {
        return Err(Error::Usage(format!(
            "densify needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let index = KdTree::build(seeds.xy(), DEFAULT_BUCKET_SIZE)?;
    let avg_nn = average_nn_distance_with(&index)?;
    if avg_nn <= 0.0 {
        return Err(Error::Usage(
            "seeds have zero average spacing in (x, y)".into(),
        ));
    }
    let values = seeds.points.iter().map(|p| p[2]).collect();
    let model = fit_with_index(index, values, cfg, avg_nn)?;
    let grid = make_grid_with(model.index(), cfg, avg_nn)?;
    let cells = grid.masked_cells();
    let k = cfg.color_k.min(seeds.len());

    let forest = match colors {
        ColorSearch::Exact => None,
        ColorSearch::Forest {
            trees,
            top_r,
            rng_seed,
            ..
        } => Some(KdForest::build(
            seeds.xy(),
            trees,
            top_r,
            DEFAULT_BUCKET_SIZE,
            rng_seed,
        )?),
    };
    let neighbors = |q: &[f64; 2]| -> Vec<usize> {
        match (&forest, colors) {
            (Some(f), ColorSearch::Forest { max_checks, .. }) => {
                f.knn_approx(q, k, max_checks.max(k))
                    .expect("k fits")
                    .indices
            }
            _ => model.index().knn(q, k).expect("k fits").indices,
        }
    };

    let dense: Vec<([f64; 3], [u8; 3])> = cells
        .par_iter()
        .map(|q| {
            let z = model.eval(*q);
            let mut sum = [0u32; 3];
            for i in neighbors(q) {
                for (s, c) in sum.iter_mut().zip(seeds.colors[i]) {
                    *s += c as u32;
                }
            }
            let color = sum.map(|s| (s as f64 / k as f64).round() as u8);
            ([q[0], q[1], z], color)
        })
        .collect();

    let mut cloud = PointCloud::with_capacity(seeds.len() + dense.len());
    for i in 0..seeds.len() {
        cloud.push(seeds.points[i], seeds.colors[i], seeds.source_pixels[i]);
    }
    for (p, c) in dense {
        cloud.push(p, c, None);
    }
    Ok(Densified {
        cloud,
        avg_nn,
        model,
        grid,
    })
}
