use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feature::InteractionVector;
use crate::linalg::{log_normalize, GaussianFactor};
use crate::types::{Demonstration, HmmModel, TransitionWeights};

/// Log density of `s_next` under phase `j`:
/// `log N(s_next; A_j s_t + B_j a_t, Sigma_j)`.
pub fn emission_loglik(
    model: &HmmModel,
    j: usize,
    s_t: &DVector<f64>,
    a_t: &InteractionVector,
    s_next: &DVector<f64>,
) -> Result<f64> {
    if j >= model.n_phases() {
        return Err(Error::Dimension(format!(
            "phase {j} out of range for {} phases",
            model.n_phases()
        )));
    }
    check_step_dims(model, s_t, a_t.as_vector(), s_next)?;
    let phase = model.phase(j);
    let factor = phase.factor().ok_or(Error::NotPositiveDefinite { phase: j })?;
    Ok(factor.log_density(&(s_next - phase.predict(s_t, a_t.as_vector()))))
}

pub(crate) fn check_step_dims(
    model: &HmmModel,
    s_t: &DVector<f64>,
    a_t: &DVector<f64>,
    s_next: &DVector<f64>,
) -> Result<()> {
    let (m, d) = (model.state_dim(), model.interaction_dim());
    if s_t.len() != m || s_next.len() != m || a_t.len() != d {
        return Err(Error::Dimension(format!(
            "step has |s| = {}, |a| = {}, |s'| = {}; model expects m = {m}, d = {d}",
            s_t.len(),
            a_t.len(),
            s_next.len()
        )));
    }
    Ok(())
}

fn check_feature(weights: &TransitionWeights, phi: &DVector<f64>) {
    assert_eq!(
        phi.len(),
        weights.feature_dim(),
        "feature length does not match the transition weights"
    );
}

fn log_softmax_rows(w: &DMatrix<f64>, phi: &DVector<f64>) -> DVector<f64> {
    let mut logits = w * phi;
    log_normalize(logits.as_mut_slice());
    logits
}

/// Log of [`transition_matrix`].
pub fn log_transition_matrix(weights: &TransitionWeights, phi: &DVector<f64>) -> DMatrix<f64> {
    check_feature(weights, phi);
    let n = weights.n_phases();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = log_softmax_rows(weights.from_phase(i), phi);
        out.row_mut(i).copy_from(&row.transpose());
    }
    out
}

/// Row-stochastic matrix `P[i][j] = p(rho_t = j | phi_t, rho_{t-1} = i)`,
/// each row a softmax of `w[i][j] . phi`.
///
/// # Panics
/// If `phi` does not have the weights' feature dimension.
pub fn transition_matrix(weights: &TransitionWeights, phi: &DVector<f64>) -> DMatrix<f64> {
    log_transition_matrix(weights, phi).map(f64::exp)
}

pub(crate) fn log_initial_distribution(weights: &TransitionWeights, phi: &DVector<f64>) -> DVector<f64> {
    check_feature(weights, phi);
    log_softmax_rows(weights.initial(), phi)
}

/// First-phase distribution, a softmax of `w0[j] . phi_1`.
///
/// # Panics
/// If `phi` does not have the weights' feature dimension.
pub fn initial_distribution(weights: &TransitionWeights, phi: &DVector<f64>) -> DVector<f64> {
    log_initial_distribution(weights, phi).map(f64::exp)
}

/// States, interaction vectors and transition features of one
/// demonstration, computed once per model feature function.
#[derive(Debug, Clone)]
pub(crate) struct Sequence {
    pub states: Vec<DVector<f64>>,
    pub interactions: Vec<DVector<f64>>,
    pub features: Vec<DVector<f64>>,
}

impl Sequence {
    pub fn new(model: &HmmModel, demo: &Demonstration) -> Result<Self> {
        model.check_demo(demo)?;
        Ok(Self::with_feature(model.feature_fn(), demo))
    }

    pub fn with_feature(feature_fn: &crate::feature::FeatureFn, demo: &Demonstration) -> Self {
        let states: Vec<_> = demo.points().iter().map(|p| p.state.clone()).collect();
        let interactions: Vec<_> = (0..demo.len()).map(|t| demo.interaction(t)).collect();
        let features = states
            .iter()
            .zip(&interactions)
            .map(|(s, a)| feature_fn.eval(s, a))
            .collect();
        Sequence {
            states,
            interactions: interactions.into_iter().map(|a| a.into_inner()).collect(),
            features,
        }
    }

    /// Number of emission terms, `T - 1`.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// `(T-1) x N` table of emission log-likelihoods.
pub(crate) fn emission_table(model: &HmmModel, seq: &Sequence) -> Result<DMatrix<f64>> {
    let n = model.n_phases();
    let factors: Vec<GaussianFactor> = (0..n)
        .map(|j| model.phase(j).factor().ok_or(Error::NotPositiveDefinite { phase: j }))
        .collect::<Result<_>>()?;
    let steps = seq.steps();
    let mut out = DMatrix::zeros(steps, n);
    for t in 0..steps {
        for (j, factor) in factors.iter().enumerate() {
            let phase = model.phase(j);
            let resid = &seq.states[t + 1] - phase.predict(&seq.states[t], &seq.interactions[t]);
            out[(t, j)] = factor.log_density(&resid);
        }
    }
    Ok(out)
}
