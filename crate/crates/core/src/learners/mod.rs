//! The two kernel ERM learners used by the debuggers, plus hyperparameter
//! selection by k-fold cross-validation.

mod cv;
mod klr;
mod krr;

pub use cv::{cross_validate, default_lambda_grid, default_sigma_grid, CvResult};
pub use klr::{
    klr_objective, klr_kkt_residual, log_softmax_rows, predict_klr, softmax_rows, train_klr,
    train_klr_weighted, train_klr_weighted_from, KlrFit, SoftmaxSystem,
};
pub use krr::{predict_krr, train_krr, RidgeSystem};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DutiError, Result};
use crate::kernel::KernelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub kernel: KernelConfig,
    /// Sup-norm tolerance on the KKT residual of the logistic learner.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl LearnerConfig {
    pub const DEFAULT_NEWTON_TOL: f64 = 1e-8;
    pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;

    pub fn new(lambda: f64, bandwidth: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            kernel: KernelConfig { bandwidth },
            newton_tol: Self::DEFAULT_NEWTON_TOL,
            newton_max_iter: Self::DEFAULT_NEWTON_MAX_ITER,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(DutiError::InvalidConfig(format!(
                "lambda must be finite and positive, got {}",
                self.lambda
            )));
        }
        if !(self.newton_tol.is_finite() && self.newton_tol > 0.0) {
            return Err(DutiError::InvalidConfig(format!(
                "newton_tol must be positive, got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter == 0 {
            return Err(DutiError::InvalidConfig("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn fingerprint(parts: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        for v in *part {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}
