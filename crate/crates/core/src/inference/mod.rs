//! Exact inference for the wrench-driven autoregressive HMM.
//!
//! A demonstration of `T` samples has `T - 1` emission terms: phase
//! `rho_t` governs the step `s_t -> s_{t+1}`, so posteriors cover
//! `rho_1 .. rho_{T-1}`. Transitions into `rho_t` use the feature of
//! sample `t`; the first phase uses the feature of sample 1. All message
//! passing is in log space with per-step normalization.

mod emission;
mod filter;
pub mod metrics;
mod smoothing;
#[cfg(test)]
pub(crate) mod test_support;

pub use emission::{emission_loglik, initial_distribution, log_transition_matrix, transition_matrix};
pub use filter::{filter_init, filter_step, ForwardState};
pub use metrics::{count_switches, error_variance, error_variance_table, predict_states, segmentation_accuracy};
pub use smoothing::{forward_backward, forward_messages, ForwardMessages, PosteriorMarginals};

pub(crate) use emission::Sequence;
pub(crate) use smoothing::forward_backward_prepared;
