//! Segmentation of compliant-motion demonstrations into phases.
//!
//! A task is modelled as a non-homogeneous autoregressive hidden Markov
//! model: each phase has linear Gaussian state dynamics driven by the
//! measured wrench, and phase transitions are a softmax of the current
//! interaction feature. The crate provides
//!
//! * exact inference (forward-backward smoothing, online forward filtering),
//! * EM learning over several demonstrations with k-means initialization,
//! * model-order selection by BIC,
//! * a quasi-static contact simulator that generates synthetic
//!   demonstrations and reproduces a task by sequencing impedance-control
//!   primitives under online phase detection.
//!
//! Phase indices are zero-based throughout the library.

pub mod error;
pub mod feature;
pub mod inference;
pub mod learning;
mod linalg;
pub mod selection;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use feature::{feature, FeatureFn, InteractionVector};
pub use inference::{ForwardState, PosteriorMarginals};
pub use learning::{EmConfig, EmReport};
pub use selection::{BicResult, BicSweep, ParamCount};
pub use types::{
    validate_demo, Demonstration, HmmModel, PhaseDynamics, TrajectoryPoint, TransitionWeights,
    Violation, SIGMA_FLOOR,
};

pub use nalgebra::{DMatrix, DVector};
