use nalgebra::DVector;

use super::generate::LabeledDemo;
use crate::error::{Error, Result};
use crate::feature::FeatureFn;
use crate::inference::{count_switches, segmentation_accuracy};
use crate::learning::{em_fit_with_feature, segment, EmConfig};
use crate::types::Demonstration;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub feature: FeatureFn,
    /// Per-sample accuracy over all demonstrations, best relabeling.
    pub accuracy: f64,
    /// Sum over demonstrations of predicted switches beyond the true ones.
    pub spurious_switches: usize,
    pub labels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureComparison {
    pub wrench: ModeReport,
    pub state: ModeReport,
}

/// Fits the same demonstrations twice, once with wrench-driven
/// transitions and once with transitions driven by the state relative to
/// the mean final state, and scores both segmentations.
pub fn compare_feature_modes(demos: &[LabeledDemo], n_phases: usize, config: &EmConfig) -> Result<FeatureComparison> {
    if demos.is_empty() {
        return Err(Error::Validation("no demonstrations".into()));
    }
    for d in demos {
        if d.labels.len() != d.demo.len() {
            return Err(Error::Validation(format!(
                "'{}' has {} labels for {} samples",
                d.demo.label(),
                d.labels.len(),
                d.demo.len()
            )));
        }
    }
    let plain: Vec<Demonstration> = demos.iter().map(|d| d.demo.clone()).collect();
    let m = plain[0].state_dim();
    let mut target = DVector::zeros(m);
    for d in &plain {
        target += d.state(d.len() - 1);
    }
    target /= plain.len() as f64;

    let run = |feature: FeatureFn| -> Result<ModeReport> {
        let (model, _) = em_fit_with_feature(&plain, n_phases, &feature, config)?;
        let labels = plain.iter().map(|d| segment(&model, d)).collect::<Result<Vec<_>>>()?;
        let truth: Vec<Vec<usize>> = demos.iter().map(|d| d.labels.clone()).collect();
        let spurious = labels
            .iter()
            .zip(&truth)
            .map(|(p, t)| count_switches(p).saturating_sub(count_switches(t)))
            .sum();
        Ok(ModeReport {
            accuracy: segmentation_accuracy(&labels, &truth),
            spurious_switches: spurious,
            labels,
            feature,
        })
    };
    Ok(FeatureComparison {
        wrench: run(FeatureFn::Identity)?,
        state: run(FeatureFn::RelativeState { target })?,
    })
}
