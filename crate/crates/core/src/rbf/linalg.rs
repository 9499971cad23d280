//! Sparse symmetric storage, conjugate gradient and dense LU.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse rows with ascending column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from per-row `(column, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!((c as usize) < n);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .zip(&self.values[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`, rows in parallel; each row sums in column order.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k] as usize];
            }
            *yi = s;
        });
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[i * self.n + j] = v;
            }
        }
        a
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` recomputed from `x`.
    pub rel_residual: f64,
}

/// Conjugate gradient for a symmetric positive definite `a`, starting from
/// zero. The recurrence residual is confirmed against the true residual on
/// convergence; a mismatch restarts from the current iterate.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let target = rel_tol * b_norm;
    let mut ap = vec![0.0; n];
    let mut r = b.to_vec();
    let mut iterations = 0;
    let mut true_rel = 1.0;
    while iterations < max_iters {
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        while iterations < max_iters && rr.sqrt() > target {
            a.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                return Err(Error::NotConverged {
                    iterations,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            iterations += 1;
        }
        a.matvec(&x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        true_rel = norm(&r) / b_norm;
        if true_rel <= rel_tol {
            return Ok(CgOutcome {
                x,
                iterations,
                rel_residual: true_rel,
            });
        }
    }
    Err(Error::NotConverged {
        iterations,
        residual: true_rel,
    })
}

/// Solves the row-major `n x n` system by Gaussian elimination with partial
/// pivoting.
pub fn lu_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    for k in 0..n {
        let (pivot_row, pivot_abs) =
            (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot_abs == 0.0 || !pivot_abs.is_finite() {
            return Err(Error::Singular(format!(
                "zero pivot in column {k} of a {n}x{n} system"
            )));
        }
        if pivot_row != k {
            for j in 0..n {
                a.swap(k * n + j, pivot_row * n + j);
            }
            b.swap(k, pivot_row);
        }
        let (top, rest) = a.split_at_mut((k + 1) * n);
        let pivot = &top[k * n..];
        let inv = 1.0 / pivot[k];
        let bk = b[k];
        rest.par_chunks_mut(n)
            .zip(b[k + 1..].par_iter_mut())
            .for_each(|(row, bi)| {
                let f = row[k] * inv;
                if f != 0.0 {
                    row[k] = 0.0;
                    for j in k + 1..n {
                        row[j] -= f * pivot[j];
                    }
                    *bi -= f * bk;
                }
            });
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * x[j];
        }
        x[i] = s / a[i * n + i];
    }
    Ok(x)
}
