use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::klr::{log_softmax_rows, train_klr};
use super::krr::RidgeSystem;
use super::LearnerConfig;
use crate::error::{DutiError, Result};
use crate::kernel::{median_heuristic_bandwidth, rbf_kernel_matrix, KernelConfig, KernelMatrix};
use crate::types::{Dataset, Labels};

/// `{1e-4, 1e-3, ..., 1e1}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=1).map(|e| 10f64.powi(e)).collect()
}

/// Median heuristic scaled by `{1/4, 1/2, 1, 2, 4}`.
pub fn default_sigma_grid(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = median_heuristic_bandwidth(x)?;
    Ok([0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|s| s * m).collect())
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub config: LearnerConfig,
    /// `(lambda, sigma, mean validation loss)` for every grid point.
    pub table: Vec<(f64, f64, f64)>,
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn sub(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| k[(rows[a], cols[b])])
}

/// Validation losses of one fold for every lambda (in the given order).
fn fold_losses(
    k: &DMatrix<f64>,
    labels: &Labels,
    train: &[usize],
    val: &[usize],
    lambdas: &[f64],
    sigma: f64,
) -> Vec<f64> {
    let k_tt = KernelMatrix::from_matrix(sub(k, train, train));
    let k_vt = sub(k, val, train);
    let Ok(k_tt) = k_tt else {
        return vec![f64::INFINITY; lambdas.len()];
    };
    match labels {
        Labels::Regression(y) => {
            let y_t = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            lambdas
                .iter()
                .map(|&lambda| match RidgeSystem::new(&k_tt, lambda) {
                    Ok(sys) => {
                        let alpha = sys.solve(&y_t);
                        let pred = &k_vt * alpha;
                        val.iter()
                            .zip(pred.iter())
                            .map(|(&i, p)| (y[i] - p).powi(2))
                            .sum::<f64>()
                            / val.len() as f64
                    }
                    Err(_) => f64::INFINITY,
                })
                .collect()
        }
        Labels::Classification { classes, labels } => {
            let y_t: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            // Walk lambda from strongest to weakest, warm-starting each fit.
            let mut order: Vec<usize> = (0..lambdas.len()).collect();
            order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
            let mut out = vec![f64::INFINITY; lambdas.len()];
            let mut warm: Option<DMatrix<f64>> = None;
            for idx in order {
                let cfg = LearnerConfig {
                    lambda: lambdas[idx],
                    kernel: KernelConfig { bandwidth: sigma },
                    newton_tol: LearnerConfig::DEFAULT_NEWTON_TOL,
                    newton_max_iter: LearnerConfig::DEFAULT_NEWTON_MAX_ITER,
                };
                if let Ok(fit) = train_klr(&k_tt, &y_t, *classes, &cfg, warm.as_ref()) {
                    let logp = log_softmax_rows(&(&k_vt * &fit.params.alpha));
                    out[idx] = -val
                        .iter()
                        .enumerate()
                        .map(|(r, &i)| logp[(r, labels[i])])
                        .sum::<f64>()
                        / val.len() as f64;
                    warm = Some(fit.params.alpha);
                }
            }
            out
        }
    }
}

/// Grid search over `(lambda, sigma)` by `folds`-fold cross-validation.
///
/// Loss is mean squared error for regression and mean negative
/// log-likelihood for classification. Ties go to the larger lambda, then the
/// larger sigma.
pub fn cross_validate(
    data: &Dataset,
    lambda_grid: &[f64],
    sigma_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if lambda_grid.is_empty() || sigma_grid.is_empty() {
        return Err(DutiError::InvalidConfig("cross-validation grids must be non-empty".into()));
    }
    for &l in lambda_grid {
        if !(l.is_finite() && l > 0.0) {
            return Err(DutiError::InvalidConfig(format!("invalid lambda {l} in grid")));
        }
    }
    for &s in sigma_grid {
        KernelConfig::new(s)?;
    }
    let n = data.len();
    if folds < 2 || n < folds {
        return Err(DutiError::InvalidConfig(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {n}"
        )));
    }
    let assignment = fold_assignment(n, folds, seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
            (train, val)
        })
        .collect();

    let mut table = Vec::with_capacity(lambda_grid.len() * sigma_grid.len());
    for &sigma in sigma_grid {
        let k = rbf_kernel_matrix(data.features(), data.features(), &KernelConfig { bandwidth: sigma })?;
        let per_fold: Vec<Vec<f64>> = splits
            .par_iter()
            .map(|(train, val)| fold_losses(&k, data.labels(), train, val, lambda_grid, sigma))
            .collect();
        for (li, &lambda) in lambda_grid.iter().enumerate() {
            let mean = per_fold.iter().map(|f| f[li]).sum::<f64>() / folds as f64;
            table.push((lambda, sigma, mean));
        }
    }

    let best = table
        .iter()
        .filter(|(_, _, loss)| loss.is_finite())
        .min_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then(b.0.total_cmp(&a.0))
                .then(b.1.total_cmp(&a.1))
        })
        .copied()
        .ok_or_else(|| DutiError::NonConvergence {
            solver: "cross-validation",
            iterations: table.len(),
            residual: f64::INFINITY,
        })?;
    Ok(CvResult {
        config: LearnerConfig::new(best.0, best.1)?,
        table,
    })
}
