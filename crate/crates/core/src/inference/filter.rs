use nalgebra::DVector;

use super::emission::{check_step_dims, emission_loglik, log_initial_distribution, log_transition_matrix};
use crate::error::Result;
use crate::feature::InteractionVector;
use crate::linalg::{argmax, log_normalize, log_sum_exp};
use crate::types::HmmModel;

/// Online forward-filter state. `log_alpha` is normalized so that
/// `exp(log_alpha)` sums to one; `loglik` accumulates the normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub log_alpha: DVector<f64>,
    pub t: usize,
    pub phase_estimate: usize,
    pub loglik: f64,
}

impl ForwardState {
    fn from_unnormalized(mut values: Vec<f64>, t: usize, loglik: f64) -> Self {
        let norm = log_normalize(&mut values);
        let phase_estimate = argmax(values.iter().copied());
        ForwardState {
            log_alpha: DVector::from_vec(values),
            t,
            phase_estimate,
            loglik: loglik + norm,
        }
    }

    pub fn probabilities(&self) -> DVector<f64> {
        self.log_alpha.map(f64::exp)
    }
}

/// First forward message from `(s_1, a_1, s_2)`.
pub fn filter_init(
    model: &HmmModel,
    s_1: &DVector<f64>,
    a_1: &InteractionVector,
    s_2: &DVector<f64>,
) -> Result<ForwardState> {
    check_step_dims(model, s_1, a_1.as_vector(), s_2)?;
    let phi = model.feature_fn().eval(s_1, a_1);
    let log_pi = log_initial_distribution(model.weights(), &phi);
    let values = (0..model.n_phases())
        .map(|j| Ok(emission_loglik(model, j, s_1, a_1, s_2)? + log_pi[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardState::from_unnormalized(values, 0, 0.0))
}

/// Advances the filter with the step `(s_t, a_t) -> s_next`.
pub fn filter_step(
    state: &ForwardState,
    model: &HmmModel,
    s_t: &DVector<f64>,
    a_t: &InteractionVector,
    s_next: &DVector<f64>,
) -> Result<ForwardState> {
    check_step_dims(model, s_t, a_t.as_vector(), s_next)?;
    let n = model.n_phases();
    let phi = model.feature_fn().eval(s_t, a_t);
    let log_p = log_transition_matrix(model.weights(), &phi);
    let values = (0..n)
        .map(|j| {
            let prior = log_sum_exp((0..n).map(|i| state.log_alpha[i] + log_p[(i, j)]));
            Ok(emission_loglik(model, j, s_t, a_t, s_next)? + prior)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardState::from_unnormalized(values, state.t + 1, state.loglik))
}
