//! Regression debugger for kernel ridge regression.
//!
//! For ridge regression the inner training problem has the closed form
//! `alpha = (K + n lambda I)^{-1} (y + delta)`, so the bilevel debugging
//! objective collapses to a convex weighted lasso in `delta`:
//!
//! ```text
//! |Cw (M delta - t)|^2 + gamma/n |delta|_1,
//! M = [A; B],  A = Kt (K + n lambda I)^{-1},  B = K (K + n lambda I)^{-1} - I,
//! t = [yt - A y; -B y],  Cw = diag(sqrt(c)/sqrt(m), 1/sqrt(n)).
//! ```
//!
//! [`RegressionProblem`] keeps the general implicit-function route (retrain,
//! then differentiate through the optimality condition) for cross-checking
//! the collapsed problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{DutiError, Result};
use crate::kernel::{rbf_kernel_matrix, KernelMatrix};
use crate::learners::{LearnerConfig, RidgeSystem};
use crate::types::{Dataset, TrustedSet};

/// FISTA iteration cap.
pub const LASSO_MAX_ITER: usize = 5000;
const LASSO_REL_DECREASE_TOL: f64 = 1e-9;
const LASSO_OPTIMALITY_TOL: f64 = 1e-7;
/// Accepted first-order optimality violation of a returned solution.
pub const LASSO_ACCEPT_TOL: f64 = 1e-6;
const FEATURE_SIGN_MAX_STEPS: usize = 2000;

fn regression_inputs<'a>(
    data: &'a Dataset,
    trusted: &'a TrustedSet,
) -> Result<(&'a DVector<f64>, &'a DVector<f64>)> {
    trusted.check_compatible(data)?;
    let y = data
        .labels()
        .as_real()
        .ok_or_else(|| DutiError::UnsupportedTask("regression debugger needs real labels".into()))?;
    let yt = trusted
        .labels()
        .as_real()
        .ok_or_else(|| DutiError::UnsupportedTask("regression debugger needs real trusted labels".into()))?;
    Ok((y, yt))
}

/// Kernel-level ingredients of a ridge-regression debugging session.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    ridge: RidgeSystem,
    k_trusted: DMatrix<f64>,
    y: DVector<f64>,
    y_trusted: DVector<f64>,
    confidences: DVector<f64>,
}

/// The four additive parts of the debugging-objective gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergradientTerms {
    /// Through the retrained model, from the trusted-item loss.
    pub trusted: DVector<f64>,
    /// Direct dependence of the self-consistency loss on the shifted labels.
    pub self_direct: DVector<f64>,
    /// Through the retrained model, from the self-consistency loss.
    pub self_implicit: DVector<f64>,
    /// `gamma/n sgn(delta)` with `sgn(0) = 0`.
    pub sparsity: DVector<f64>,
}

impl HypergradientTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.trusted + &self.self_direct + &self.self_implicit + &self.sparsity
    }
}

impl RegressionProblem {
    pub fn new(data: &Dataset, trusted: &TrustedSet, cfg: &LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        let (y, yt) = regression_inputs(data, trusted)?;
        let k = KernelMatrix::build(data.features(), &cfg.kernel)?;
        let k_trusted = rbf_kernel_matrix(trusted.features(), data.features(), &cfg.kernel)?;
        Self::from_kernels(&k, k_trusted, y.clone(), yt.clone(), trusted.confidences().clone(), cfg.lambda)
    }

    /// Assembles a session from precomputed kernels (`k_trusted` is m x n).
    pub fn from_kernels(
        k: &KernelMatrix,
        k_trusted: DMatrix<f64>,
        y: DVector<f64>,
        y_trusted: DVector<f64>,
        confidences: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let n = k.n();
        let m = k_trusted.nrows();
        if k_trusted.ncols() != n || y.len() != n || y_trusted.len() != m || confidences.len() != m {
            return Err(DutiError::DimensionMismatch(format!(
                "inconsistent regression inputs: K {n}x{n}, Kt {}x{}, y {}, yt {}, c {}",
                k_trusted.nrows(),
                k_trusted.ncols(),
                y.len(),
                y_trusted.len(),
                confidences.len()
            )));
        }
        if m == 0 {
            return Err(DutiError::InvalidData("at least one trusted item is required".into()));
        }
        Ok(Self {
            ridge: RidgeSystem::new(k, lambda)?,
            k_trusted,
            y,
            y_trusted,
            confidences,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.y_trusted.len()
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn ridge(&self) -> &RidgeSystem {
        &self.ridge
    }

    fn check_len(&self, delta: &DVector<f64>) -> Result<()> {
        if delta.len() != self.n() {
            return Err(DutiError::DimensionMismatch(format!(
                "delta has {} entries, training set has {}",
                delta.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Retrained dual coefficients `alpha(delta)`.
    pub fn theta(&self, delta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(delta)?;
        Ok(self.ridge.solve(&(&self.y + delta)))
    }

    /// `J v` with `J = d alpha / d delta`.
    pub fn jacobian_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.ridge.solve(v)
    }

    /// `J' v`.
    pub fn jacobian_transpose_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        // J = (K + n lambda I)^{-1} is symmetric
        self.ridge.solve(v)
    }

    /// Dense `J`, for small instances.
    pub fn jacobian(&self) -> DMatrix<f64> {
        self.ridge.inverse()
    }

    /// Bilevel objective with the inner model retrained at `delta`.
    pub fn objective(&self, delta: &DVector<f64>, gamma: f64) -> Result<f64> {
        let alpha = self.theta(delta)?;
        Ok(self.objective_at(delta, &alpha, gamma))
    }

    fn objective_at(&self, delta: &DVector<f64>, alpha: &DVector<f64>, gamma: f64) -> f64 {
        let n = self.n() as f64;
        let m = self.m() as f64;
        let trusted_resid = &self.y_trusted - &self.k_trusted * alpha;
        let trusted: f64 = trusted_resid
            .iter()
            .zip(self.confidences.iter())
            .map(|(r, c)| c * r * r)
            .sum::<f64>()
            / m;
        let self_resid = &self.y + delta - self.ridge.kernel() * alpha;
        trusted + self_resid.norm_squared() / n + gamma * delta.lp_norm(1) / n
    }

    /// Gradient of the bilevel objective through the implicit function
    /// `alpha(delta)`.
    ///
    /// The ridge optimality condition `(2/n) K [(K + n lambda I) alpha - y - delta] = 0`
    /// is used without its invertible left factor `(2/n) K`; the implicit
    /// function and its Jacobian `J = (K + n lambda I)^{-1}` are unchanged.
    pub fn hypergradient_terms(&self, delta: &DVector<f64>, gamma: f64) -> Result<HypergradientTerms> {
        let alpha = self.theta(delta)?;
        let n = self.n() as f64;
        let m = self.m() as f64;
        let trusted_resid = &self.y_trusted - &self.k_trusted * &alpha;
        let weighted = trusted_resid.component_mul(&self.confidences);
        let grad_trusted = self.k_trusted.transpose() * weighted * (-2.0 / m);
        let self_resid = &self.y + delta - self.ridge.kernel() * &alpha;
        let grad_self = self.ridge.kernel() * &self_resid * (-2.0 / n);
        Ok(HypergradientTerms {
            trusted: self.jacobian_transpose_apply(&grad_trusted),
            self_direct: &self_resid * (2.0 / n),
            self_implicit: self.jacobian_transpose_apply(&grad_self),
            sparsity: delta.map(|d| gamma / n * sgn(d)),
        })
    }

    pub fn hypergradient(&self, delta: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
        Ok(self.hypergradient_terms(delta, gamma)?.total())
    }

    /// The collapsed weighted-lasso form of this session.
    pub fn lasso_system(&self) -> LassoSystem {
        let n = self.n();
        let m = self.m();
        // A = Kt S with S symmetric: A' = S Kt'
        let a = self.ridge.solve_matrix(&self.k_trusted.transpose()).transpose();
        // B = K S - I = -n lambda S
        let b = self.ridge.inverse() * (-(n as f64) * self.ridge.lambda());
        let mut weights = DVector::zeros(m + n);
        for i in 0..m {
            weights[i] = (self.confidences[i] / m as f64).sqrt();
        }
        for i in 0..n {
            weights[m + i] = 1.0 / (n as f64).sqrt();
        }
        let mut target = DVector::zeros(m + n);
        target.rows_mut(0, m).copy_from(&(&self.y_trusted - &a * &self.y));
        target.rows_mut(m, n).copy_from(&(-(&b * &self.y)));
        LassoSystem::new(a, b, weights, target)
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weighted lasso `|Cw (M delta - target)|^2 + gamma/n |delta|_1` with `M = [A; B]`.
#[derive(Debug, Clone)]
pub struct LassoSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    weights: DVector<f64>,
    target: DVector<f64>,
    /// `M' Cw^2 M`.
    gram: DMatrix<f64>,
    /// `M' Cw^2 target`.
    linear: DVector<f64>,
    constant: f64,
    /// Upper bound on the largest eigenvalue of `gram`.
    gram_norm: f64,
}

impl LassoSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, weights: DVector<f64>, target: DVector<f64>) -> Self {
        let m = a.nrows();
        let n = b.ncols();
        let mut wm = DMatrix::zeros(m + n, n);
        wm.rows_mut(0, m).copy_from(&a);
        wm.rows_mut(m, n).copy_from(&b);
        for (r, w) in weights.iter().enumerate() {
            wm.row_mut(r).scale_mut(*w);
        }
        let wt = target.component_mul(&weights);
        let gram = wm.transpose() * &wm;
        let gram = (&gram + gram.transpose()) * 0.5;
        let linear = wm.transpose() * &wt;
        let constant = wt.norm_squared();
        let gram_norm = spectral_bound(&gram);
        Self {
            a,
            b,
            weights,
            target,
            gram,
            linear,
            constant,
            gram_norm,
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn n(&self) -> usize {
        self.b.ncols()
    }

    /// `|Cw (M delta - target)|^2`, evaluated from the stacked residual.
    pub fn smooth_value(&self, delta: &DVector<f64>) -> f64 {
        let m = self.a.nrows();
        let top = &self.a * delta - self.target.rows(0, m);
        let bottom = &self.b * delta - self.target.rows(m, self.n());
        let w = &self.weights;
        top.iter()
            .enumerate()
            .map(|(i, r)| (w[i] * r).powi(2))
            .chain(bottom.iter().enumerate().map(|(i, r)| (w[m + i] * r).powi(2)))
            .sum()
    }

    pub fn objective(&self, delta: &DVector<f64>, gamma: f64) -> f64 {
        self.smooth_value(delta) + gamma * delta.lp_norm(1) / self.n() as f64
    }

    /// Gradient of the smooth part, `2 M' Cw^2 (M delta - target)`.
    pub fn smooth_gradient(&self, delta: &DVector<f64>) -> DVector<f64> {
        (&self.gram * delta - &self.linear) * 2.0
    }

    fn quad_value(&self, delta: &DVector<f64>) -> f64 {
        delta.dot(&(&self.gram * delta)) - 2.0 * self.linear.dot(delta) + self.constant
    }

    /// Largest violation of the lasso subgradient optimality conditions.
    pub fn optimality_residual(&self, delta: &DVector<f64>, gamma: f64) -> f64 {
        let pen = gamma / self.n() as f64;
        let g = self.smooth_gradient(delta);
        delta
            .iter()
            .zip(g.iter())
            .map(|(&d, &gi)| {
                if d != 0.0 {
                    (gi + sgn(d) * pen).abs()
                } else {
                    (gi.abs() - pen).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Smallest `gamma` for which `delta = 0` is optimal.
    pub fn zero_threshold(&self) -> f64 {
        self.n() as f64 * self.smooth_gradient(&DVector::zeros(self.n())).amax()
    }
}

fn spectral_bound(sym: &DMatrix<f64>) -> f64 {
    let n = sym.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..50 {
        let w = sym * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        v = w / norm;
    }
    // Power iteration approaches from below; pad, then backtracking corrects.
    est * 1.05
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub delta: DVector<f64>,
    pub objective: f64,
    /// FISTA iterations.
    pub iterations: usize,
    /// Active-set refinement steps taken after FISTA.
    pub refinement_steps: usize,
    pub optimality_residual: f64,
    pub converged: bool,
}

/// Minimizes the weighted lasso from `init` with accelerated proximal gradient
/// (backtracking, adaptive restart) followed by a feature-sign active-set
/// refinement, which makes the result exact up to linear-solve accuracy.
pub fn solve_weighted_lasso(system: &LassoSystem, gamma: f64, init: &DVector<f64>) -> Result<LassoSolution> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(DutiError::InvalidConfig(format!("gamma must be >= 0, got {gamma}")));
    }
    let n = system.n();
    if init.len() != n {
        return Err(DutiError::DimensionMismatch(format!(
            "initial delta has {} entries, expected {n}",
            init.len()
        )));
    }
    let pen = gamma / n as f64;
    let full = |d: &DVector<f64>| system.quad_value(d) + pen * d.lp_norm(1);

    let mut x = init.clone();
    let mut fx = full(&x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = (2.0 * system.gram_norm).max(1e-12);
    let mut iterations = 0;
    for it in 1..=LASSO_MAX_ITER {
        iterations = it;
        let g = system.smooth_gradient(&y);
        let fy = system.quad_value(&y);
        let x_new = loop {
            let cand = (&y - &g / lip).map(|v| soft_threshold(v, pen / lip));
            let diff = &cand - &y;
            let upper = fy + g.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if system.quad_value(&cand) <= upper + 1e-12 * upper.abs().max(1.0) {
                break cand;
            }
            lip *= 2.0;
        };
        let f_new = full(&x_new);
        if f_new > fx {
            // function-value restart
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        let rel = (fx - f_new) / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        if system.optimality_residual(&x, gamma) < LASSO_OPTIMALITY_TOL || rel < LASSO_REL_DECREASE_TOL {
            break;
        }
    }

    let (refined, refinement_steps) = feature_sign_refine(system, gamma, x.clone());
    if full(&refined) <= fx + 1e-12 * fx.abs().max(1.0) {
        x = refined;
    }
    let residual = system.optimality_residual(&x, gamma);
    Ok(LassoSolution {
        objective: system.objective(&x, gamma),
        delta: x,
        iterations,
        refinement_steps,
        optimality_residual: residual,
        converged: residual <= LASSO_ACCEPT_TOL,
    })
}

/// Feature-sign search (an exact active-set lasso method) started from `x`.
fn feature_sign_refine(system: &LassoSystem, gamma: f64, mut x: DVector<f64>) -> (DVector<f64>, usize) {
    let n = system.n();
    let pen = gamma / n as f64;
    let full = |d: &DVector<f64>| system.quad_value(d) + pen * d.lp_norm(1);
    let mut signs: Vec<f64> = x.iter().map(|&v| sgn(v)).collect();
    let mut steps = 0;
    while steps < FEATURE_SIGN_MAX_STEPS {
        steps += 1;
        let active: Vec<usize> = (0..n).filter(|&i| signs[i] != 0.0).collect();
        let g = system.smooth_gradient(&x);

        let active_ok = active
            .iter()
            .all(|&i| x[i] != 0.0 && (g[i] + signs[i] * pen).abs() <= 0.1 * LASSO_OPTIMALITY_TOL);
        if active_ok {
            // optimality of the zero coordinates
            let worst = (0..n)
                .filter(|&i| signs[i] == 0.0)
                .map(|i| (i, g[i].abs() - pen))
                .filter(|&(_, v)| v > 0.1 * LASSO_OPTIMALITY_TOL)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                None => return (x, steps),
                Some((i, _)) => {
                    signs[i] = -sgn(g[i]);
                    continue;
                }
            }
        }

        // Solve the sign-constrained quadratic on the active set:
        // 2 (Q x - b)_A + pen * signs_A = 0.
        let k = active.len();
        if k == 0 {
            return (x, steps);
        }
        let q = DMatrix::from_fn(k, k, |a, b| system.gram[(active[a], active[b])]);
        let rhs = DVector::from_fn(k, |a, _| system.linear[active[a]] - 0.5 * pen * signs[active[a]]);
        let sol = match q.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match q.lu().solve(&rhs) {
                Some(s) => s,
                None => return (x, steps),
            },
        };
        let mut target = DVector::zeros(n);
        for (a, &i) in active.iter().enumerate() {
            target[i] = sol[a];
        }
        // Candidates: the unconstrained target and every zero crossing on the
        // segment from x to it.
        let mut best = target.clone();
        let mut best_f = full(&target);
        for &i in &active {
            let (from, to) = (x[i], target[i]);
            if from != 0.0 && sgn(from) != sgn(to) {
                let s = from / (from - to);
                let mut cand = &x + (&target - &x) * s;
                cand[i] = 0.0;
                let f = full(&cand);
                if f < best_f {
                    best_f = f;
                    best = cand;
                }
            }
        }
        if best_f > full(&x) + 1e-14 * best_f.abs().max(1.0) && x.iter().any(|v| *v != 0.0) {
            // No progress available at this precision.
            return (x, steps);
        }
        x = best;
        for i in 0..n {
            signs[i] = sgn(x[i]);
        }
    }
    (x, steps)
}

/// Builds the weighted-lasso system for a dataset and trusted set.
pub fn build_lasso_system(data: &Dataset, trusted: &TrustedSet, cfg: &LearnerConfig) -> Result<LassoSystem> {
    Ok(RegressionProblem::new(data, trusted, cfg)?.lasso_system())
}

/// Gradient of the bilevel regression objective at `delta`.
pub fn regression_hypergradient(
    delta: &DVector<f64>,
    data: &Dataset,
    trusted: &TrustedSet,
    cfg: &LearnerConfig,
    gamma: f64,
) -> Result<DVector<f64>> {
    RegressionProblem::new(data, trusted, cfg)?.hypergradient(delta, gamma)
}
