//! Classification debugger for multiclass kernel logistic regression.
//!
//! The decision variable is a soft label matrix `delta` whose rows live in
//! the probability simplex. The debugging objective is
//!
//! ```text
//! 1/m sum_l c_l l(xt_l, yt_l) + 1/n sum_ij delta_ij l(x_i, j) + gamma/n sum_i (1 - delta_{i,y_i})
//! ```
//!
//! with the model retrained on `delta` as soft labels. Its gradient flows
//! through the retrained coefficients via the inner optimality condition.

use nalgebra::{DMatrix, DVector};

use crate::error::{DutiError, Result};
use crate::kernel::{rbf_kernel_matrix, KernelMatrix};
use crate::learners::{log_softmax_rows, softmax_rows, train_klr_weighted_from, KlrFit, LearnerConfig, SoftmaxSystem};
use crate::types::{check_row_simplex, one_hot, Dataset, TrustedSet};

/// Euclidean projection of `v` onto the probability simplex (sort based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Projects every row of `m` onto the simplex.
pub fn project_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        for (j, v) in project_simplex(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

fn vec_rows(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

fn unvec_rows(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Dense linearization of the inner optimality condition
/// `g(delta, alpha) = K ((P - delta)/n + lambda alpha) = 0`.
///
/// Vectors are flattened row-major: entry `(i, j)` sits at `i * k + j`.
#[derive(Debug, Clone)]
pub struct KktLinearization {
    pub g_value: DVector<f64>,
    /// `(1/n) sum_i H_i + lambda K'`, where `H_i` is the Hessian of the loss of
    /// item `i` with respect to `alpha` (independent of its label).
    pub dg_dalpha: DMatrix<f64>,
    /// Column `(i, j)` is `-(1/n) K'_i e_j`.
    pub dg_ddelta: DMatrix<f64>,
    n: usize,
    k: usize,
}

impl KktLinearization {
    pub fn new(kernel: &DMatrix<f64>, delta: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> Self {
        let n = kernel.nrows();
        let k = alpha.ncols();
        let nf = n as f64;
        let probs = softmax_rows(&(kernel * alpha));
        let g = kernel * ((&probs - delta) / nf + alpha * lambda);
        let nk = n * k;
        let mut h = DMatrix::zeros(nk, nk);
        for i in 0..n {
            let p = probs.row(i);
            let ki = kernel.column(i);
            for j in 0..k {
                for l in 0..k {
                    let d = if j == l { p[j] } else { 0.0 } - p[j] * p[l];
                    if d == 0.0 {
                        continue;
                    }
                    for a in 0..n {
                        let s = ki[a] * d / nf;
                        for b in 0..n {
                            h[(a * k + j, b * k + l)] += s * ki[b];
                        }
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                for j in 0..k {
                    h[(a * k + j, b * k + j)] += lambda * kernel[(a, b)];
                }
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let mut gd = DMatrix::zeros(nk, nk);
        for i in 0..n {
            for j in 0..k {
                for a in 0..n {
                    gd[(a * k + j, i * k + j)] = -kernel[(a, i)] / nf;
                }
            }
        }
        Self {
            g_value: vec_rows(&g),
            dg_dalpha: h,
            dg_ddelta: gd,
            n,
            k,
        }
    }

    /// `J = d alpha / d delta = -(dg/dalpha)^{-1} dg/ddelta`, an nk x nk matrix.
    pub fn jacobian(&self) -> Result<DMatrix<f64>> {
        let chol = self.dg_dalpha.clone().cholesky().ok_or_else(|| {
            DutiError::IllConditioned(format!(
                "dg/dalpha is not positive definite (n = {}, k = {}); regularization too small",
                self.n, self.k
            ))
        })?;
        Ok(-chol.solve(&self.dg_ddelta))
    }
}

/// How each trial point of the outer line search initializes inner training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    /// `alpha + J (delta_new - delta_old)`.
    Linearized,
    /// From `alpha = 0`.
    Cold,
}

#[derive(Debug, Clone)]
pub struct PgdOptions {
    pub max_iter: usize,
    pub step_tol: f64,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub warm_start: WarmStart,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            step_tol: 1e-6,
            grad_tol: 1e-6,
            initial_step: 1.0,
            warm_start: WarmStart::Linearized,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub delta: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Newton steps spent on inner retraining, over all trial points.
    pub newton_iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial point.
    pub objective_trace: Vec<f64>,
    /// Inner KKT residual after every accepted step.
    pub kkt_trace: Vec<f64>,
}

/// The four additive parts of the classification hypergradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTerms {
    pub trusted: DMatrix<f64>,
    pub self_implicit: DMatrix<f64>,
    /// `(1/n) l(x_i, j)`.
    pub self_direct: DMatrix<f64>,
    /// `-gamma/n` at `(i, y_i)`.
    pub sparsity: DMatrix<f64>,
}

impl ClassificationTerms {
    pub fn total(&self) -> DMatrix<f64> {
        &self.trusted + &self.self_implicit + &self.self_direct + &self.sparsity
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationProblem {
    kernel: KernelMatrix,
    k_trusted: DMatrix<f64>,
    labels: Vec<usize>,
    trusted_onehot: DMatrix<f64>,
    confidences: DVector<f64>,
    classes: usize,
    cfg: LearnerConfig,
}

impl ClassificationProblem {
    pub fn new(data: &Dataset, trusted: &TrustedSet, cfg: &LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        trusted.check_compatible(data)?;
        let (labels, classes) = match data.labels().as_classes() {
            Some(l) => (l.to_vec(), data.task().classes().unwrap_or(0)),
            None => {
                return Err(DutiError::UnsupportedTask(
                    "classification debugger needs class labels".into(),
                ))
            }
        };
        let yt = trusted
            .labels()
            .as_classes()
            .ok_or_else(|| DutiError::UnsupportedTask("trusted items need class labels".into()))?;
        let kernel = KernelMatrix::build(data.features(), &cfg.kernel)?;
        let k_trusted = rbf_kernel_matrix(trusted.features(), data.features(), &cfg.kernel)?;
        Self::from_kernels(kernel, k_trusted, labels, yt, trusted.confidences().clone(), classes, cfg)
    }

    pub fn from_kernels(
        kernel: KernelMatrix,
        k_trusted: DMatrix<f64>,
        labels: Vec<usize>,
        trusted_labels: &[usize],
        confidences: DVector<f64>,
        classes: usize,
        cfg: &LearnerConfig,
    ) -> Result<Self> {
        let n = kernel.n();
        let m = k_trusted.nrows();
        if k_trusted.ncols() != n || labels.len() != n || trusted_labels.len() != m || confidences.len() != m {
            return Err(DutiError::DimensionMismatch(format!(
                "inconsistent classification inputs: K {n}x{n}, Kt {}x{}, labels {}, trusted labels {}, c {}",
                k_trusted.nrows(),
                k_trusted.ncols(),
                labels.len(),
                trusted_labels.len(),
                confidences.len()
            )));
        }
        if m == 0 {
            return Err(DutiError::InvalidData("at least one trusted item is required".into()));
        }
        one_hot(&labels, classes)?;
        Ok(Self {
            kernel,
            k_trusted,
            labels,
            trusted_onehot: one_hot(trusted_labels, classes)?,
            confidences,
            classes,
            cfg: cfg.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.k_trusted.nrows()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn with_config(mut self, cfg: LearnerConfig) -> Self {
        self.cfg = cfg;
        self
    }

    /// `delta = one_hot(Y)`.
    pub fn initial_delta(&self) -> DMatrix<f64> {
        one_hot(&self.labels, self.classes).expect("labels validated at construction")
    }

    fn check_delta(&self, delta: &DMatrix<f64>) -> Result<()> {
        if delta.nrows() != self.n() || delta.ncols() != self.classes {
            return Err(DutiError::DimensionMismatch(format!(
                "delta is {}x{}, expected {}x{}",
                delta.nrows(),
                delta.ncols(),
                self.n(),
                self.classes
            )));
        }
        check_row_simplex(delta)
    }

    /// Retrains the inner model on soft labels `delta`.
    pub fn train(&self, delta: &DMatrix<f64>, init: Option<&DMatrix<f64>>) -> Result<KlrFit> {
        self.check_delta(delta)?;
        train_klr_weighted_from(&self.kernel, delta, &self.cfg, init)
    }

    /// Objective with `alpha` taken as the inner solution at `delta`.
    pub fn objective_at(&self, delta: &DMatrix<f64>, alpha: &DMatrix<f64>, gamma: f64) -> f64 {
        let n = self.n() as f64;
        let m = self.m() as f64;
        let logp_t = log_softmax_rows(&(&self.k_trusted * alpha));
        let trusted: f64 = -(0..self.m())
            .map(|l| self.confidences[l] * logp_t.row(l).dot(&self.trusted_onehot.row(l)))
            .sum::<f64>()
            / m;
        let logp = log_softmax_rows(&(self.kernel.values() * alpha));
        let self_term = -delta.component_mul(&logp).sum() / n;
        let sparsity: f64 = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| 1.0 - delta[(i, y)])
            .sum::<f64>()
            * gamma
            / n;
        trusted + self_term + sparsity
    }

    /// Objective with the inner model retrained from scratch at `delta`.
    pub fn objective(&self, delta: &DMatrix<f64>, gamma: f64) -> Result<f64> {
        let fit = self.train(delta, None)?;
        Ok(self.objective_at(delta, &fit.params.alpha, gamma))
    }

    /// Gradients of the trusted and self-consistency losses with respect to
    /// `alpha`, both n x k.
    fn alpha_gradients(&self, delta: &DMatrix<f64>, alpha: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n() as f64;
        let m = self.m() as f64;
        let mut trusted_resid = softmax_rows(&(&self.k_trusted * alpha)) - &self.trusted_onehot;
        for l in 0..self.m() {
            trusted_resid.row_mut(l).scale_mut(self.confidences[l] / m);
        }
        let probs = softmax_rows(&(self.kernel.values() * alpha));
        let v_trusted = self.k_trusted.transpose() * trusted_resid;
        let v_self = self.kernel.values() * (probs - delta) / n;
        (v_trusted, v_self)
    }

    fn direct_terms(&self, alpha: &DMatrix<f64>, gamma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n() as f64;
        let logp = log_softmax_rows(&(self.kernel.values() * alpha));
        let direct = -logp / n;
        let mut sparsity = DMatrix::zeros(self.n(), self.classes);
        for (i, &y) in self.labels.iter().enumerate() {
            sparsity[(i, y)] = -gamma / n;
        }
        (direct, sparsity)
    }

    /// Hypergradient terms by the adjoint method: `J = M^{-1} / n`, so
    /// `J' v = M^{-T} v / n` with one transpose solve per loss aggregate.
    pub fn hypergradient_terms(
        &self,
        delta: &DMatrix<f64>,
        alpha: &DMatrix<f64>,
        gamma: f64,
    ) -> Result<ClassificationTerms> {
        let probs = softmax_rows(&(self.kernel.values() * alpha));
        let system = SoftmaxSystem::new(self.kernel.values(), &probs, self.cfg.lambda);
        self.hypergradient_terms_with(&system, delta, alpha, gamma)
    }

    fn hypergradient_terms_with(
        &self,
        system: &SoftmaxSystem<'_>,
        delta: &DMatrix<f64>,
        alpha: &DMatrix<f64>,
        gamma: f64,
    ) -> Result<ClassificationTerms> {
        let n = self.n() as f64;
        let (v_trusted, v_self) = self.alpha_gradients(delta, alpha);
        let (self_direct, sparsity) = self.direct_terms(alpha, gamma);
        Ok(ClassificationTerms {
            trusted: system.solve_transpose(&v_trusted)? / n,
            self_implicit: system.solve_transpose(&v_self)? / n,
            self_direct,
            sparsity,
        })
    }

    pub fn hypergradient(&self, delta: &DMatrix<f64>, alpha: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
        Ok(self.hypergradient_terms(delta, alpha, gamma)?.total())
    }

    /// The same gradient with `J` formed densely from the full linearization.
    pub fn hypergradient_explicit(
        &self,
        delta: &DMatrix<f64>,
        alpha: &DMatrix<f64>,
        gamma: f64,
    ) -> Result<DMatrix<f64>> {
        let lin = self.linearization(delta, alpha);
        let jac = lin.jacobian()?;
        let (v_trusted, v_self) = self.alpha_gradients(delta, alpha);
        let implicit = jac.transpose() * vec_rows(&(v_trusted + v_self));
        let (direct, sparsity) = self.direct_terms(alpha, gamma);
        Ok(unvec_rows(&implicit, self.n(), self.classes) + direct + sparsity)
    }

    pub fn linearization(&self, delta: &DMatrix<f64>, alpha: &DMatrix<f64>) -> KktLinearization {
        KktLinearization::new(self.kernel.values(), delta, alpha, self.cfg.lambda)
    }

    /// Smallest `gamma` at which `one_hot(Y)` admits no descent direction in
    /// the simplex, or `None` when it is already stationary for every
    /// `gamma >= 0`.
    pub fn initial_gamma(&self) -> Result<Option<f64>> {
        Ok(self.initial_state()?.0)
    }

    /// `initial_gamma` together with the model trained on the original labels.
    pub fn initial_state(&self) -> Result<(Option<f64>, DMatrix<f64>)> {
        let delta = self.initial_delta();
        let fit = self.train(&delta, None)?;
        let g = self.hypergradient(&delta, &fit.params.alpha, 0.0)?;
        let n = self.n() as f64;
        let mut best = f64::NEG_INFINITY;
        for (i, &y) in self.labels.iter().enumerate() {
            for j in 0..self.classes {
                if j != y {
                    best = best.max(g[(i, y)] - g[(i, j)]);
                }
            }
        }
        let gamma0 = n * best;
        Ok(((gamma0 > 0.0).then_some(gamma0), fit.params.alpha))
    }

    /// Projected gradient descent on the row-simplex product from `delta_init`.
    ///
    /// `alpha_init`, when given, must be the inner solution at `delta_init`
    /// (or close to it); it seeds the first retraining.
    pub fn projected_gradient_descent(
        &self,
        delta_init: &DMatrix<f64>,
        alpha_init: Option<&DMatrix<f64>>,
        gamma: f64,
        opts: &PgdOptions,
    ) -> Result<PgdOutcome> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(DutiError::InvalidConfig(format!("gamma must be >= 0, got {gamma}")));
        }
        self.check_delta(delta_init)?;
        let n = self.n() as f64;
        let mut delta = delta_init.clone();
        let fit = self.train(&delta, alpha_init)?;
        let mut newton_iterations = fit.iterations;
        let mut alpha = fit.params.alpha;
        let mut f = self.objective_at(&delta, &alpha, gamma);
        let mut objective_trace = vec![f];
        let mut kkt_trace = vec![fit.kkt_residual];
        let mut step = opts.initial_step;
        let mut converged = false;
        let mut iterations = 0;

        while iterations < opts.max_iter {
            let probs = softmax_rows(&(self.kernel.values() * &alpha));
            let system = SoftmaxSystem::new(self.kernel.values(), &probs, self.cfg.lambda);
            let grad = self.hypergradient_terms_with(&system, &delta, &alpha, gamma)?.total();
            let pg = &delta - project_rows(&(&delta - &grad));
            if pg.amax() < opts.grad_tol {
                converged = true;
                break;
            }
            iterations += 1;

            let mut t = step;
            let mut accepted = None;
            for trial in 0..60 {
                let cand = project_rows(&(&delta - &grad * t));
                let moved = &cand - &delta;
                let slope = grad.dot(&moved);
                let init = match opts.warm_start {
                    WarmStart::Linearized => Some(&alpha + system.solve(&moved)? / n),
                    WarmStart::Cold => None,
                };
                match self.train(&cand, init.as_ref()) {
                    Ok(fit) => {
                        newton_iterations += fit.iterations;
                        let fc = self.objective_at(&cand, &fit.params.alpha, gamma);
                        if fc <= f + 1e-4 * slope {
                            accepted = Some((cand, fit, fc, trial));
                            break;
                        }
                    }
                    Err(DutiError::NonConvergence { .. }) => {}
                    Err(e) => return Err(e),
                }
                t *= 0.5;
            }
            let Some((cand, fit, fc, trial)) = accepted else {
                // No decrease is measurable along the projected arc.
                break;
            };
            step = if trial == 0 { t * 2.0 } else { t };
            let change = (&cand - &delta).amax();
            delta = cand;
            alpha = fit.params.alpha;
            f = fc;
            objective_trace.push(f);
            kkt_trace.push(fit.kkt_residual);
            if change < opts.step_tol {
                converged = true;
                break;
            }
        }
        Ok(PgdOutcome {
            delta,
            alpha,
            objective: f,
            iterations,
            newton_iterations,
            converged,
            objective_trace,
            kkt_trace,
        })
    }
}

/// Bilevel classification objective at `delta`.
pub fn classification_objective(
    delta: &DMatrix<f64>,
    data: &Dataset,
    trusted: &TrustedSet,
    cfg: &LearnerConfig,
    gamma: f64,
) -> Result<f64> {
    ClassificationProblem::new(data, trusted, cfg)?.objective(delta, gamma)
}

/// Gradient of the classification objective at `delta`, retraining first.
pub fn classification_hypergradient(
    delta: &DMatrix<f64>,
    data: &Dataset,
    trusted: &TrustedSet,
    cfg: &LearnerConfig,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    let problem = ClassificationProblem::new(data, trusted, cfg)?;
    let fit = problem.train(delta, None)?;
    problem.hypergradient(delta, &fit.params.alpha, gamma)
}

/// Runs projected gradient descent from `delta_init` at sparsity weight `gamma`.
pub fn projected_gradient_descent(
    problem: &ClassificationProblem,
    delta_init: &DMatrix<f64>,
    gamma: f64,
    opts: &PgdOptions,
) -> Result<PgdOutcome> {
    problem.projected_gradient_descent(delta_init, None, gamma, opts)
}
