//! Synthetic demonstrations and task reproduction in a quasi-static
//! contact world driven by impedance-control primitives.

mod compare;
mod controller;
pub mod fixtures;
mod generate;
mod primitives;
mod reproduce;
mod world;

pub use compare::{compare_feature_modes, FeatureComparison, ModeReport};
pub use controller::{impedance_step, PhasePrimitive, PrimitiveConfig, StepOutcome};
pub use generate::{generate_demo, sample_from_model, LabeledDemo, ScriptSegment, Steer};
pub use primitives::extract_primitives;
pub use reproduce::{reproduce, ReproduceConfig, ReproductionTrace, TraceStep};
pub use world::{ContactWorld, Geometry, Scenario, Settled};
