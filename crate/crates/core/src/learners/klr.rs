//! Multiclass kernel logistic regression on soft (weighted) labels.
//!
//! With scores `S = K alpha` and row-wise softmax `P`, the learner minimizes
//!
//! ```text
//! L(alpha) = 1/n sum_i [ logsumexp(S_i) - sum_j W_ij S_ij ] + lambda/2 sum_j alpha_j' K alpha_j
//! ```
//!
//! Its gradient is `K R` with `R = (P - W)/n + lambda alpha`, so the KKT
//! condition `g = K R = 0`. Newton steps solve `M dz = -R` where
//! `M = D Kbar / n + lambda I` and `D` is the block-diagonal softmax Jacobian.
//! This range-space form never inverts `K`, which is badly conditioned for
//! RBF kernels; it yields the same Newton direction whenever `K` is
//! invertible.

use std::cell::OnceCell;

use nalgebra::{DMatrix, Dyn, LU};

use super::{fingerprint, LearnerConfig};
use crate::error::{DutiError, Result};
use crate::kernel::KernelMatrix;
use crate::types::{check_row_simplex, ModelParams};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

pub fn log_softmax_rows(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scores.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.apply(|v| *v -= lse);
    }
    out
}

pub fn softmax_rows(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scores.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let s: f64 = row.iter().sum();
        row.apply(|v| *v /= s);
    }
    out
}

fn logsumexp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    max + row.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Value of the weighted training objective at `alpha`.
pub fn klr_objective(k: &DMatrix<f64>, w: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> f64 {
    let scores = k * alpha;
    objective_from_scores(&scores, w, alpha, lambda)
}

fn objective_from_scores(scores: &DMatrix<f64>, w: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = scores.nrows() as f64;
    let data: f64 = scores
        .row_iter()
        .zip(w.row_iter())
        .map(|(s, wi)| logsumexp(s.iter().cloned()) - s.dot(&wi))
        .sum();
    data / n + 0.5 * lambda * alpha.dot(scores)
}

/// `R = (P - W)/n + lambda alpha`; the KKT residual is `K R`.
fn range_residual(probs: &DMatrix<f64>, w: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = probs.nrows() as f64;
    (probs - w) / n + alpha * lambda
}

/// KKT residual `g(W, alpha) = K ((P - W)/n + lambda alpha)`, an n x k matrix.
pub fn klr_kkt_residual(k: &DMatrix<f64>, w: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let probs = softmax_rows(&(k * alpha));
    k * range_residual(&probs, w, alpha, lambda)
}

/// Linear systems with `M = D Kbar / n + lambda I` and its transpose.
///
/// `D_i = diag(p_i) - p_i p_i'` annihilates the all-ones direction, so each
/// row splits into a constant part (solved in closed form) and an
/// (k-1)-dimensional part; only the latter needs an LU factorization.
pub struct SoftmaxSystem<'a> {
    kernel: &'a DMatrix<f64>,
    probs: DMatrix<f64>,
    lambda: f64,
    blocks: Vec<DMatrix<f64>>,
    lu: OnceCell<Option<LU<f64, Dyn, Dyn>>>,
    lu_t: OnceCell<Option<LU<f64, Dyn, Dyn>>>,
}

impl<'a> SoftmaxSystem<'a> {
    pub fn new(kernel: &'a DMatrix<f64>, probs: &DMatrix<f64>, lambda: f64) -> Self {
        let q = probs.ncols() - 1;
        let blocks = probs
            .row_iter()
            .map(|p| {
                // G[a][b] = p_a [a == b] - p_a p_b + p_a p_last
                let last = p[q];
                DMatrix::from_fn(q, q, |a, b| {
                    let diag = if a == b { p[a] } else { 0.0 };
                    diag - p[a] * p[b] + p[a] * last
                })
            })
            .collect();
        Self {
            kernel,
            probs: probs.clone(),
            lambda,
            blocks,
            lu: OnceCell::new(),
            lu_t: OnceCell::new(),
        }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    fn n(&self) -> usize {
        self.probs.nrows()
    }

    fn q(&self) -> usize {
        self.probs.ncols() - 1
    }

    fn reduced(&self, transpose: bool) -> DMatrix<f64> {
        let (n, q) = (self.n(), self.q());
        let inv_n = 1.0 / n as f64;
        let mut r = DMatrix::zeros(n * q, n * q);
        for i in 0..n {
            for l in 0..n {
                let kil = self.kernel[(i, l)] * inv_n;
                // M: block (i, l) = K_il G_i / n;  M': block (l, i) = K_li G_i / n
                let (row_block, col_block) = if transpose { (l, i) } else { (i, l) };
                let g = &self.blocks[i];
                for a in 0..q {
                    for b in 0..q {
                        r[(row_block * q + a, col_block * q + b)] = kil * g[(a, b)];
                    }
                }
            }
        }
        for d in 0..n * q {
            r[(d, d)] += self.lambda;
        }
        r
    }

    fn solve_with(&self, rhs: &DMatrix<f64>, transpose: bool) -> Result<DMatrix<f64>> {
        let (n, q) = (self.n(), self.q());
        let k = q + 1;
        if rhs.nrows() != n || rhs.ncols() != k {
            return Err(DutiError::DimensionMismatch(format!(
                "softmax system is {n}x{k}, right-hand side is {}x{}",
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        let cell = if transpose { &self.lu_t } else { &self.lu };
        let lu = cell
            .get_or_init(|| Some(self.reduced(transpose).lu()))
            .as_ref()
            .ok_or_else(|| DutiError::IllConditioned("softmax Jacobian system".into()))?;
        let means: Vec<f64> = rhs.row_iter().map(|r| r.sum() / k as f64).collect();
        let mut top = nalgebra::DVector::zeros(n * q);
        for i in 0..n {
            for a in 0..q {
                top[i * q + a] = rhs[(i, a)] - means[i];
            }
        }
        let u = lu.solve(&top).ok_or_else(|| {
            DutiError::IllConditioned("softmax Jacobian system is singular; increase lambda".into())
        })?;
        let mut z = DMatrix::zeros(n, k);
        for i in 0..n {
            let c = means[i] / self.lambda;
            let mut s = 0.0;
            for a in 0..q {
                let v = u[i * q + a];
                z[(i, a)] = v + c;
                s += v;
            }
            z[(i, q)] = c - s;
        }
        Ok(z)
    }

    /// Solves `M z = rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_with(rhs, false)
    }

    /// Solves `M' z = rhs`.
    pub fn solve_transpose(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_with(rhs, true)
    }

    fn jac_rows(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        // row i -> D_i v_i
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for i in 0..v.nrows() {
            let p = self.probs.row(i);
            let pv = p.dot(&v.row(i));
            for j in 0..v.ncols() {
                out[(i, j)] = p[j] * (v[(i, j)] - pv);
            }
        }
        out
    }

    /// `M z`, evaluated directly.
    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n() as f64;
        self.jac_rows(&(self.kernel * z)) / n + z * self.lambda
    }

    /// `M' z`, evaluated directly.
    pub fn apply_transpose(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n() as f64;
        self.kernel * self.jac_rows(z) / n + z * self.lambda
    }
}

/// Result of a logistic training run.
#[derive(Debug, Clone)]
pub struct KlrFit {
    pub params: ModelParams,
    /// Newton steps taken.
    pub iterations: usize,
    /// Final `|g|_inf`.
    pub kkt_residual: f64,
}

enum Targets<'a> {
    Soft(&'a DMatrix<f64>),
    Hard(&'a [usize]),
}

impl Targets<'_> {
    fn residual(&self, probs: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        match self {
            Targets::Soft(w) => range_residual(probs, w, alpha, lambda),
            Targets::Hard(labels) => {
                let n = probs.nrows() as f64;
                let mut r = probs / n + alpha * lambda;
                for (i, &y) in labels.iter().enumerate() {
                    r[(i, y)] -= 1.0 / n;
                }
                r
            }
        }
    }

    fn objective(&self, scores: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> f64 {
        match self {
            Targets::Soft(w) => objective_from_scores(scores, w, alpha, lambda),
            Targets::Hard(labels) => {
                let n = scores.nrows() as f64;
                let data: f64 = scores
                    .row_iter()
                    .zip(labels.iter())
                    .map(|(s, &y)| logsumexp(s.iter().cloned()) - s[y])
                    .sum();
                data / n + 0.5 * lambda * alpha.dot(scores)
            }
        }
    }
}

fn newton(
    k: &KernelMatrix,
    targets: Targets<'_>,
    classes: usize,
    cfg: &LearnerConfig,
    init: Option<&DMatrix<f64>>,
    fingerprint_parts: &[&[f64]],
) -> Result<KlrFit> {
    cfg.validate()?;
    let kv = k.values();
    let n = k.n();
    let lambda = cfg.lambda;
    let mut alpha = match init {
        Some(a) => {
            if a.nrows() != n || a.ncols() != classes {
                return Err(DutiError::DimensionMismatch(format!(
                    "warm start is {}x{}, expected {n}x{classes}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            a.clone()
        }
        None => DMatrix::zeros(n, classes),
    };
    let mut scores = kv * &alpha;
    let mut iterations = 0;
    loop {
        let probs = softmax_rows(&scores);
        let r = targets.residual(&probs, &alpha, lambda);
        let grad = kv * &r;
        let res = grad.amax();
        if res <= cfg.newton_tol {
            return Ok(KlrFit {
                params: ModelParams {
                    train_fingerprint: fingerprint(fingerprint_parts),
                    alpha,
                    lambda,
                    kernel: cfg.kernel,
                },
                iterations,
                kkt_residual: res,
            });
        }
        if iterations >= cfg.newton_max_iter {
            return Err(DutiError::NonConvergence {
                solver: "logistic Newton",
                iterations,
                residual: res,
            });
        }
        let system = SoftmaxSystem::new(kv, &probs, lambda);
        let mut step = system.solve(&(-&r))?;
        let mut slope = grad.dot(&step);
        if !(slope < 0.0) {
            step = -&r;
            slope = -grad.dot(&r);
        }
        let f0 = targets.objective(&scores, &alpha, lambda);
        let step_scores = kv * &step;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &alpha + &step * t;
            let cand_scores = &scores + &step_scores * t;
            let f = targets.objective(&cand_scores, &cand, lambda);
            if f <= f0 + ARMIJO_C * t * slope {
                alpha = cand;
                scores = cand_scores;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // At round-off level the objective can no longer rank points;
            // a pure Newton step is then safe.
            if -slope <= 1e-12 * (1.0 + f0.abs()) {
                alpha += &step;
                scores += &step_scores;
            } else {
                return Err(DutiError::NonConvergence {
                    solver: "logistic line search",
                    iterations,
                    residual: res,
                });
            }
        }
        iterations += 1;
    }
}

/// Trains on soft labels `w` (rows in the simplex), optionally warm-started.
pub fn train_klr_weighted_from(
    k: &KernelMatrix,
    w: &DMatrix<f64>,
    cfg: &LearnerConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<KlrFit> {
    if w.nrows() != k.n() {
        return Err(DutiError::DimensionMismatch(format!(
            "kernel is {0}x{0} but weights have {1} rows",
            k.n(),
            w.nrows()
        )));
    }
    if w.ncols() < 2 {
        return Err(DutiError::InvalidConfig("need at least 2 classes".into()));
    }
    check_row_simplex(w)?;
    newton(
        k,
        Targets::Soft(w),
        w.ncols(),
        cfg,
        init,
        &[k.values().as_slice(), w.as_slice()],
    )
}

pub fn train_klr_weighted(k: &KernelMatrix, w: &DMatrix<f64>, cfg: &LearnerConfig) -> Result<ModelParams> {
    train_klr_weighted_from(k, w, cfg, None).map(|f| f.params)
}

/// Trains on hard class labels.
pub fn train_klr(
    k: &KernelMatrix,
    labels: &[usize],
    classes: usize,
    cfg: &LearnerConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<KlrFit> {
    if labels.len() != k.n() {
        return Err(DutiError::DimensionMismatch(format!(
            "kernel is {0}x{0} but {1} labels were given",
            k.n(),
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(DutiError::InvalidConfig("need at least 2 classes".into()));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(DutiError::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    let as_f64: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    newton(
        k,
        Targets::Hard(labels),
        classes,
        cfg,
        init,
        &[k.values().as_slice(), &as_f64],
    )
}

/// Class probabilities for a q x n cross kernel.
pub fn predict_klr(params: &ModelParams, k_cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k_cross.ncols() != params.alpha.nrows() {
        return Err(DutiError::DimensionMismatch(format!(
            "cross kernel has {} columns but the model was trained on {} items",
            k_cross.ncols(),
            params.alpha.nrows()
        )));
    }
    Ok(softmax_rows(&(k_cross * &params.alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;
    use crate::types::one_hot;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn kernel(x: &DMatrix<f64>, sigma: f64) -> KernelMatrix {
        KernelMatrix::build(x, &KernelConfig::new(sigma).unwrap()).unwrap()
    }

    fn random_simplex_rows(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.05..1.0));
        for mut row in w.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        w
    }

    #[test]
    fn uniform_weights_give_zero_alpha() {
        let x = toy(8, 2, 1);
        let k = kernel(&x, 0.7);
        let w = DMatrix::from_element(8, 3, 1.0 / 3.0);
        let p = train_klr_weighted(&k, &w, &LearnerConfig::new(0.1, 0.7).unwrap()).unwrap();
        assert!(p.alpha.amax() < 1e-12);
    }

    #[test]
    fn converged_run_satisfies_kkt() {
        let x = toy(12, 2, 2);
        let k = kernel(&x, 0.6);
        let w = random_simplex_rows(12, 3, 3);
        let cfg = LearnerConfig::new(0.05, 0.6).unwrap();
        let p = train_klr_weighted(&k, &w, &cfg).unwrap();
        // evaluate g(W, alpha) from scratch
        let n = 12.0;
        let s = k.values() * &p.alpha;
        let mut g = DMatrix::zeros(12, 3);
        for i in 0..12 {
            let z: f64 = (0..3).map(|j| s[(i, j)].exp()).sum();
            for j in 0..3 {
                let coef = (s[(i, j)].exp() / z - w[(i, j)]) / n;
                for r in 0..12 {
                    g[(r, j)] += coef * k.values()[(r, i)];
                }
            }
        }
        g += k.values() * &p.alpha * cfg.lambda;
        assert!(g.amax() <= cfg.newton_tol);
    }

    #[test]
    fn one_hot_weights_match_hard_labels() {
        let x = toy(15, 2, 4);
        let labels: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let k = kernel(&x, 0.8);
        let mut cfg = LearnerConfig::new(0.02, 0.8).unwrap();
        cfg.newton_tol = 1e-13;
        let soft = train_klr_weighted(&k, &one_hot(&labels, 3).unwrap(), &cfg).unwrap();
        let hard = train_klr(&k, &labels, 3, &cfg, None).unwrap();
        assert!((soft.alpha - hard.params.alpha).amax() < 1e-8);
    }

    #[test]
    fn warm_start_needs_fewer_steps() {
        let x = toy(20, 2, 5);
        let k = kernel(&x, 0.5);
        let w = random_simplex_rows(20, 2, 6);
        let cfg = LearnerConfig::new(0.01, 0.5).unwrap();
        let cold = train_klr_weighted_from(&k, &w, &cfg, None).unwrap();
        let warm = train_klr_weighted_from(&k, &w, &cfg, Some(&cold.params.alpha)).unwrap();
        assert_eq!(warm.iterations, 0);
        assert!(cold.iterations > 0);
    }

    #[test]
    fn zero_alpha_predicts_uniform() {
        let p = ModelParams {
            alpha: DMatrix::zeros(4, 3),
            lambda: 1.0,
            kernel: KernelConfig { bandwidth: 1.0 },
            train_fingerprint: String::new(),
        };
        let probs = predict_klr(&p, &DMatrix::from_element(2, 4, 0.3)).unwrap();
        assert!(probs.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(predict_klr(&p, &DMatrix::from_element(2, 5, 0.3)).is_err());
    }

    #[test]
    fn softmax_system_solves_match_direct_application() {
        let x = toy(9, 2, 7);
        let k = kernel(&x, 0.9);
        let s = k.values() * random_simplex_rows(9, 4, 8) * 3.0;
        let probs = softmax_rows(&s);
        let sys = SoftmaxSystem::new(k.values(), &probs, 0.03);
        let rhs = random_simplex_rows(9, 4, 9) - DMatrix::from_element(9, 4, 0.2);
        let z = sys.solve(&rhs).unwrap();
        assert!((sys.apply(&z) - &rhs).amax() < 1e-10);
        let zt = sys.solve_transpose(&rhs).unwrap();
        assert!((sys.apply_transpose(&zt) - &rhs).amax() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = toy(7, 2, 10);
        let k = kernel(&x, 0.8);
        let w = random_simplex_rows(7, 3, 11);
        let lambda = 0.07;
        let alpha = random_simplex_rows(7, 3, 12) * 2.0 - DMatrix::from_element(7, 3, 0.5);
        let analytic = klr_kkt_residual(k.values(), &w, &alpha, lambda);
        let h = 1e-5;
        for i in 0..7 {
            for j in 0..3 {
                let mut up = alpha.clone();
                up[(i, j)] += h;
                let mut dn = alpha.clone();
                dn[(i, j)] -= h;
                let fd = (klr_objective(k.values(), &w, &up, lambda)
                    - klr_objective(k.values(), &w, &dn, lambda))
                    / (2.0 * h);
                let a = analytic[(i, j)];
                assert!((fd - a).abs() <= 1e-5 * a.abs().max(1e-3), "({i},{j}): {fd} vs {a}");
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(vals in proptest::collection::vec(-20.0f64..20.0, 12)) {
            let alpha = DMatrix::from_row_slice(4, 3, &vals);
            let p = ModelParams {
                alpha,
                lambda: 1.0,
                kernel: KernelConfig { bandwidth: 1.0 },
                train_fingerprint: String::new(),
            };
            let probs = predict_klr(&p, &toy(5, 4, 13).abs()).unwrap();
            for row in probs.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn shift_invariance(vals in proptest::collection::vec(-5.0f64..5.0, 12), c in -3.0f64..3.0) {
            let alpha = DMatrix::from_row_slice(4, 3, &vals);
            let kc = toy(5, 4, 14).abs();
            let base = ModelParams {
                alpha: alpha.clone(),
                lambda: 1.0,
                kernel: KernelConfig { bandwidth: 1.0 },
                train_fingerprint: String::new(),
            };
            let shifted = ModelParams { alpha: alpha.add_scalar(c), ..base.clone() };
            let a = predict_klr(&base, &kc).unwrap();
            let b = predict_klr(&shifted, &kc).unwrap();
            prop_assert!((a - b).amax() <= 1e-12);
        }
    }
}
