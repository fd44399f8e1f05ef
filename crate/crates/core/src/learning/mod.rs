//! Parameter estimation: k-means initialization and EM over several
//! demonstrations (weighted least squares for the phase dynamics,
//! weighted logistic regression for the transition weights).

mod em;
mod kmeans;
mod mstep;

pub use em::{e_step, em_fit, em_fit_with_feature, em_refine, segment};
pub use kmeans::kmeans_init;
pub use mstep::{m_step_dynamics, m_step_weights, WeightedLogistic};

use crate::error::{Error, Result};

/// Bias added to the self-transition logit at initialization.
pub const STICKY_BIAS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub loglik_tol: f64,
    /// Gradient-descent step size for the transition weights.
    pub lr_lambda: f64,
    /// Gradient steps per M-step.
    pub lr_iters: usize,
    /// Least-squares regularizer, relative to the mean diagonal of `X W X^T`.
    pub ridge: f64,
    pub seed: u64,
    /// Rounds of split-merge restarts after the first fit; 0 disables them.
    pub split_merge_rounds: usize,
    /// EM iterations given to each split-merge candidate before the most
    /// promising one is run to completion.
    pub split_merge_iters: usize,
}

impl EmConfig {
    pub fn new(seed: u64) -> Self {
        EmConfig {
            max_iters: 100,
            loglik_tol: 1e-4,
            lr_lambda: 1e-3,
            lr_iters: 50,
            ridge: 1e-8,
            seed,
            split_merge_rounds: 2,
            split_merge_iters: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.loglik_tol > 0.0 && self.loglik_tol.is_finite()) {
            return Err(Error::Config("loglik_tol must be positive".into()));
        }
        if !(self.lr_lambda > 0.0 && self.lr_lambda.is_finite()) {
            return Err(Error::Config("lr_lambda must be positive".into()));
        }
        if self.lr_iters == 0 {
            return Err(Error::Config("lr_iters must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config("ridge must be non-negative".into()));
        }
        if self.split_merge_rounds > 0 && self.split_merge_iters == 0 {
            return Err(Error::Config("split_merge_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    /// Total log-likelihood of all demonstrations before each M-step, for
    /// the run that produced the returned model.
    pub loglik_trace: Vec<f64>,
    /// EM iterations over all runs, split-merge candidates included.
    pub iterations_run: usize,
    pub converged: bool,
    /// Split-merge moves that improved the fit.
    pub accepted_moves: usize,
}

impl EmReport {
    pub fn best_loglik(&self) -> f64 {
        self.loglik_trace.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
