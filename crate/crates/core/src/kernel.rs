//! Gaussian (RBF) kernel evaluation.
//!
//! `k(a, b) = exp(-|a - b|^2 / (2 sigma^2))`. Squared distances use the
//! expanded form `|a|^2 + |b|^2 - 2 a.b`, clamped at zero.

use nalgebra::{DMatrix, DVectorView, RowDVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DutiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// RBF length scale sigma.
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        let cfg = Self { bandwidth };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(DutiError::InvalidConfig(format!(
                "kernel bandwidth must be finite and positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

fn row_sq_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| dot(r.iter(), r.iter())).collect()
}

// Fixed left-to-right order so that every entry is independent of threading.
fn dot<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Cross kernel matrix between the rows of `a` (p x d) and `b` (q x d).
pub fn rbf_kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    if a.ncols() != b.ncols() {
        return Err(DutiError::DimensionMismatch(format!(
            "kernel inputs have {} and {} feature columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let (p, q) = (a.nrows(), b.nrows());
    let na = row_sq_norms(a);
    let nb = row_sq_norms(b);
    let scale = 1.0 / (2.0 * cfg.bandwidth * cfg.bandwidth);
    // Row-major copies make the inner dot products contiguous.
    let a_rows: Vec<RowDVector<f64>> = a.row_iter().map(|r| r.into_owned()).collect();
    let b_rows: Vec<RowDVector<f64>> = b.row_iter().map(|r| r.into_owned()).collect();

    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            (0..q)
                .map(|j| {
                    let d2 = na[i] + nb[j] - 2.0 * dot(a_rows[i].iter(), b_rows[j].iter());
                    (-(d2.max(0.0)) * scale).exp()
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(p, q, |i, j| rows[i][j]))
}

/// Symmetric training kernel matrix `K = [k(x_i, x_j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn build(x: &DMatrix<f64>, cfg: &KernelConfig) -> Result<Self> {
        Ok(Self {
            values: rbf_kernel_matrix(x, x, cfg)?,
        })
    }

    /// Wraps a precomputed square matrix, checking symmetry.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(DutiError::DimensionMismatch(format!(
                "kernel matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let n = values.nrows();
        for i in 0..n {
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-12 {
                    return Err(DutiError::InvalidData(format!(
                        "kernel matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// `K_i`, the i-th column (equal to the i-th row).
    pub fn column(&self, i: usize) -> DVectorView<'_, f64> {
        self.values.column(i)
    }
}

/// Median of pairwise Euclidean distances over distinct pairs.
///
/// Falls back to the mean positive distance when the median is zero.
pub fn median_heuristic_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(DutiError::DegenerateData(
            "median heuristic needs at least two points".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((x.row(i) - x.row(j)).norm());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        return Ok(median);
    }
    let positive: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        return Err(DutiError::DegenerateData("all points coincide".into()));
    }
    Ok(positive.iter().sum::<f64>() / positive.len() as f64)
}
