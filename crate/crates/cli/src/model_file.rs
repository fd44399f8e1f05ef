//! Versioned, self-describing JSON model files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use phaseseg_core::{DMatrix, DVector, FeatureFn, HmmModel, PhaseDynamics, TransitionWeights};

pub const FORMAT: &str = "phaseseg-model";
pub const FORMAT_VERSION: u32 = 1;
const PHASE_ORDER: &str = "phases are numbered by first dominance in the first training demonstration; \
                           indices in this file are zero-based, label files are one-based";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Matrix {
    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    fn to_dmatrix(&self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            bail!("{what}: {} values for a {}x{} matrix", self.data.len(), self.rows, self.cols);
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    Identity,
    RelativeState { target: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub sigma: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub initial: Matrix,
    /// `transition[i]` row `j` scores the move from phase `i` to `j`.
    pub transition: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub format_version: u32,
    pub n_phases: usize,
    pub state_dim: usize,
    pub interaction_dim: usize,
    pub feature_dim: usize,
    pub matrix_layout: String,
    pub phase_order: String,
    pub feature_fn: FeatureSpec,
    pub phases: Vec<PhaseSpec>,
    pub weights: WeightSpec,
}

impl ModelFile {
    pub fn from_model(model: &HmmModel) -> Self {
        let feature_fn = match model.feature_fn() {
            FeatureFn::Identity => FeatureSpec::Identity,
            FeatureFn::RelativeState { target } => FeatureSpec::RelativeState {
                target: target.iter().copied().collect(),
            },
        };
        ModelFile {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            n_phases: model.n_phases(),
            state_dim: model.state_dim(),
            interaction_dim: model.interaction_dim(),
            feature_dim: model.feature_dim(),
            matrix_layout: "row-major".into(),
            phase_order: PHASE_ORDER.into(),
            feature_fn,
            phases: model
                .dynamics()
                .iter()
                .map(|p| PhaseSpec {
                    a: Matrix::from_dmatrix(p.a()),
                    b: Matrix::from_dmatrix(p.b()),
                    sigma: Matrix::from_dmatrix(p.sigma()),
                })
                .collect(),
            weights: WeightSpec {
                initial: Matrix::from_dmatrix(model.weights().initial()),
                transition: model.weights().transition().iter().map(Matrix::from_dmatrix).collect(),
            },
        }
    }

    pub fn to_model(&self) -> Result<HmmModel> {
        if self.format != FORMAT {
            bail!("not a model file: format is '{}', expected '{FORMAT}'", self.format);
        }
        if self.format_version != FORMAT_VERSION {
            bail!("model format version {} is not supported (expected {FORMAT_VERSION})", self.format_version);
        }
        if self.matrix_layout != "row-major" {
            bail!("unsupported matrix layout '{}'", self.matrix_layout);
        }
        let dynamics = self
            .phases
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let what = |m: &str| format!("phase {j} {m}");
                Ok(PhaseDynamics::new(
                    p.a.to_dmatrix(&what("A"))?,
                    p.b.to_dmatrix(&what("B"))?,
                    p.sigma.to_dmatrix(&what("Sigma"))?,
                )?)
            })
            .collect::<Result<Vec<_>>>()?;
        let transition = self
            .weights
            .transition
            .iter()
            .enumerate()
            .map(|(i, w)| w.to_dmatrix(&format!("transition weights from phase {i}")))
            .collect::<Result<Vec<_>>>()?;
        let weights = TransitionWeights::new(self.weights.initial.to_dmatrix("initial weights")?, transition)?;
        let feature_fn = match &self.feature_fn {
            FeatureSpec::Identity => FeatureFn::Identity,
            FeatureSpec::RelativeState { target } => FeatureFn::RelativeState {
                target: DVector::from_column_slice(target),
            },
        };
        let model = HmmModel::new(dynamics, weights, feature_fn)?;
        let declared = (self.n_phases, self.state_dim, self.interaction_dim, self.feature_dim);
        let actual = (model.n_phases(), model.state_dim(), model.interaction_dim(), model.feature_dim());
        if declared != actual {
            bail!("declared dimensions {declared:?} do not match the parameters {actual:?}");
        }
        Ok(model)
    }
}

pub fn save(model: &HmmModel, path: &Path) -> Result<()> {
    crate::io::write_json(&ModelFile::from_model(model), path)
}

pub fn load(path: &Path) -> Result<HmmModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
    file.to_model().with_context(|| format!("model {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use phaseseg_core::simulate::fixtures::three_phase_model;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = three_phase_model();
        // awkward values that need all 17 digits
        let a = model.phase(1).a() * (1.0 / 3.0) + DMatrix::from_element(2, 2, 1e-300);
        let mut dynamics = model.dynamics().to_vec();
        dynamics[1] = PhaseDynamics::new(a, model.phase(1).b().clone(), model.phase(1).sigma().clone()).unwrap();
        let target = DVector::from_vec(vec![0.1, -2.0 / 7.0]);
        model = HmmModel::new(dynamics, model.weights().clone(), FeatureFn::RelativeState { target }).unwrap();
        let path = dir.path().join("m.json");
        save(&model, &path).unwrap();
        assert_eq!(load(&path).unwrap(), model);
    }

    #[test]
    fn version_is_checked() {
        let mut file = ModelFile::from_model(&three_phase_model());
        file.format_version = 99;
        assert!(file.to_model().is_err());
        let mut file = ModelFile::from_model(&three_phase_model());
        file.phases[0].a.data.pop();
        assert!(file.to_model().is_err());
    }
}
