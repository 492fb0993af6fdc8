use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{fingerprint, LearnerConfig};
use crate::error::{DutiError, Result};
use crate::kernel::KernelMatrix;
use crate::types::ModelParams;

/// Cholesky factorization of `K + n lambda I`, shared by every ridge solve
/// in a debug session.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    kernel: DMatrix<f64>,
    shifted: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    lambda: f64,
}

impl RidgeSystem {
    pub fn new(k: &KernelMatrix, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(DutiError::InvalidConfig(format!(
                "lambda must be finite and positive, got {lambda}"
            )));
        }
        let n = k.n();
        let shifted = k.values() + DMatrix::identity(n, n) * (n as f64 * lambda);
        let chol = shifted.clone().cholesky().ok_or_else(|| {
            DutiError::IllConditioned(format!(
                "Cholesky of K + n*lambda*I failed (n = {n}, lambda = {lambda:e})"
            ))
        })?;
        Ok(Self {
            kernel: k.values().clone(),
            shifted,
            chol,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// `(K + n lambda I)^{-1} rhs`, with one step of iterative refinement.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.chol.solve(rhs);
        let r = rhs - &self.shifted * &x;
        x += self.chol.solve(&r);
        x
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = self.chol.solve(rhs);
        let r = rhs - &self.shifted * &x;
        x += self.chol.solve(&r);
        x
    }

    /// `(K + n lambda I)^{-1}`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        // symmetrize away round-off
        (&inv + inv.transpose()) * 0.5
    }

    pub fn residual_inf(&self, alpha: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
        (&self.shifted * alpha - rhs).amax()
    }
}

/// Kernel ridge regression: `alpha = (K + n lambda I)^{-1} y_eff`.
pub fn train_krr(k: &KernelMatrix, y_eff: &DVector<f64>, cfg: &LearnerConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if y_eff.len() != k.n() {
        return Err(DutiError::DimensionMismatch(format!(
            "kernel is {0}x{0} but {1} targets were given",
            k.n(),
            y_eff.len()
        )));
    }
    let system = RidgeSystem::new(k, cfg.lambda)?;
    let alpha = system.solve(y_eff);
    let tol = 1e-8 * (1.0 + y_eff.amax());
    let res = system.residual_inf(&alpha, y_eff);
    if !(res <= tol) {
        return Err(DutiError::IllConditioned(format!(
            "ridge residual {res:e} exceeds {tol:e}"
        )));
    }
    Ok(ModelParams {
        train_fingerprint: fingerprint(&[k.values().as_slice(), y_eff.as_slice()]),
        alpha: DMatrix::from_column_slice(alpha.len(), 1, alpha.as_slice()),
        lambda: cfg.lambda,
        kernel: cfg.kernel,
    })
}

/// Predictions `K_cross alpha` for a q x n cross kernel.
pub fn predict_krr(params: &ModelParams, k_cross: &DMatrix<f64>) -> Result<DVector<f64>> {
    if params.alpha.ncols() != 1 {
        return Err(DutiError::DimensionMismatch(format!(
            "ridge parameters must have one column, got {}",
            params.alpha.ncols()
        )));
    }
    if k_cross.ncols() != params.alpha.nrows() {
        return Err(DutiError::DimensionMismatch(format!(
            "cross kernel has {} columns but the model was trained on {} items",
            k_cross.ncols(),
            params.alpha.nrows()
        )));
    }
    Ok(k_cross * params.alpha.column(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;
    use proptest::prelude::*;

    fn cfg(lambda: f64) -> LearnerConfig {
        LearnerConfig::new(lambda, 1.0).unwrap()
    }

    fn kernel_of(x: &[f64], sigma: f64) -> KernelMatrix {
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        KernelMatrix::build(&xm, &KernelConfig::new(sigma).unwrap()).unwrap()
    }

    #[test]
    fn one_point_hand_solve() {
        let k = KernelMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let p = train_krr(&k, &DVector::from_vec(vec![2.0]), &cfg(1.0)).unwrap();
        assert!((p.alpha[(0, 0)] - 1.0).abs() < 1e-15);
        let pred = predict_krr(&p, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((pred[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_targets_give_zero_alpha() {
        let k = kernel_of(&[0.0, 0.5, 1.3], 0.7);
        let p = train_krr(&k, &DVector::zeros(3), &cfg(0.1)).unwrap();
        assert!(p.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn zero_alpha_predicts_zero() {
        let p = ModelParams {
            alpha: DMatrix::zeros(3, 1),
            lambda: 1.0,
            kernel: KernelConfig { bandwidth: 1.0 },
            train_fingerprint: String::new(),
        };
        let pred = predict_krr(&p, &DMatrix::from_element(2, 3, 0.4)).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
        assert!(predict_krr(&p, &DMatrix::from_element(2, 4, 0.4)).is_err());
    }

    #[test]
    fn interpolation_limit() {
        let x = [0.0, 0.4, 1.1, 1.9];
        let k = kernel_of(&x, 0.5);
        let y = DVector::from_vec(vec![0.3, -1.0, 0.7, 2.0]);
        let p = train_krr(&k, &y, &LearnerConfig::new(1e-12, 0.5).unwrap()).unwrap();
        let pred = predict_krr(&p, k.values()).unwrap();
        assert!((pred - y).amax() < 1e-8);
    }

    #[test]
    fn rejects_length_mismatch() {
        let k = kernel_of(&[0.0, 1.0], 1.0);
        assert!(matches!(
            train_krr(&k, &DVector::zeros(3), &cfg(1.0)),
            Err(DutiError::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn stronger_regularization_shrinks(
            x in proptest::collection::vec(-2.0f64..2.0, 6),
            y in proptest::collection::vec(-3.0f64..3.0, 6),
            sigma in 0.3f64..2.0,
        ) {
            let k = kernel_of(&x, sigma);
            let y = DVector::from_vec(y);
            let strong = train_krr(&k, &y, &cfg(1e3)).unwrap();
            let weak = train_krr(&k, &y, &cfg(1e-3)).unwrap();
            prop_assert!(strong.alpha.norm() <= weak.alpha.norm() + 1e-12);
        }

        #[test]
        fn stationarity_on_range_of_k(
            x in proptest::collection::vec(-2.0f64..2.0, 5),
            y in proptest::collection::vec(-3.0f64..3.0, 5),
            lambda in 1e-3f64..1.0,
        ) {
            let k = kernel_of(&x, 0.8);
            let y = DVector::from_vec(y);
            let p = train_krr(&k, &y, &cfg(lambda)).unwrap();
            let a = p.alpha.column(0).into_owned();
            let kv = k.values();
            let n = 5.0;
            let grad = kv * (kv * &a - &y) * (2.0 / n) + kv * &a * (2.0 * lambda);
            prop_assert!(grad.amax() <= 1e-6);
        }
    }
}
