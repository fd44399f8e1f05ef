//! Interaction vectors and the transition feature function.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Measured wrench with a constant `1` appended, the input to the
/// compliance/offset matrix of the phase dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionVector(DVector<f64>);

impl InteractionVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The wrench part, without the trailing bias.
    pub fn wrench(&self) -> DVector<f64> {
        self.0.rows(0, self.0.len() - 1).into_owned()
    }
}

/// `[a_raw ; 1]`. Rejects non-finite wrench components.
pub fn feature(a_raw: &DVector<f64>) -> Result<InteractionVector> {
    if let Some(i) = a_raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "wrench component {i} is not finite"
        )));
    }
    Ok(append_bias(a_raw))
}

pub(crate) fn append_bias(v: &DVector<f64>) -> InteractionVector {
    let mut out = DVector::from_element(v.len() + 1, 1.0);
    out.rows_mut(0, v.len()).copy_from(v);
    InteractionVector(out)
}

/// Features fed to the logistic transition model.
///
/// `Identity` is the wrench-driven model: the transition feature is the
/// interaction vector itself. `RelativeState` is the position-driven
/// baseline, `[s_t - target ; 1]`, kept for comparisons.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFn {
    Identity,
    RelativeState { target: DVector<f64> },
}

impl FeatureFn {
    pub fn id(&self) -> &'static str {
        match self {
            FeatureFn::Identity => "identity",
            FeatureFn::RelativeState { .. } => "relative_state",
        }
    }

    /// Feature dimension for state dimension `m` and interaction dimension `d`.
    pub fn dim(&self, m: usize, d: usize) -> usize {
        match self {
            FeatureFn::Identity => d,
            FeatureFn::RelativeState { .. } => m + 1,
        }
    }

    pub fn eval(&self, state: &DVector<f64>, interaction: &InteractionVector) -> DVector<f64> {
        match self {
            FeatureFn::Identity => interaction.as_vector().clone(),
            FeatureFn::RelativeState { target } => append_bias(&(state - target)).into_inner(),
        }
    }

    pub(crate) fn check(&self, m: usize) -> Result<()> {
        match self {
            FeatureFn::Identity => Ok(()),
            FeatureFn::RelativeState { target } if target.len() == m => Ok(()),
            FeatureFn::RelativeState { target } => Err(Error::Dimension(format!(
                "relative-state target has length {}, state dimension is {m}",
                target.len()
            ))),
        }
    }
}
