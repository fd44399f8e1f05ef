//! Prediction-error and segmentation scores.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Demonstration, HmmModel};

/// One-step predictions `A_j s_t + B_j a_t` for `t = 1 .. T-1`, i.e.
/// predicted values of `s_2 .. s_T`.
pub fn predict_states(model: &HmmModel, j: usize, demo: &Demonstration) -> Result<Vec<DVector<f64>>> {
    if j >= model.n_phases() {
        return Err(Error::Dimension(format!("phase {j} out of range")));
    }
    model.check_demo(demo)?;
    let phase = model.phase(j);
    Ok((0..demo.len() - 1)
        .map(|t| phase.predict(demo.state(t), demo.interaction(t).as_vector()))
        .collect())
}

/// Mean squared prediction error: `sum_t |s_hat_{t+1} - s_{t+1}|^2 / (T-1)`,
/// where both slices hold the `T - 1` next states.
pub fn error_variance(predicted: &[DVector<f64>], actual: &[DVector<f64>]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} actual states",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Validation("need at least one predicted step".into()));
    }
    let mut sum = 0.0;
    for (p, a) in predicted.iter().zip(actual) {
        if p.len() != a.len() {
            return Err(Error::Dimension("state lengths differ".into()));
        }
        sum += (p - a).norm_squared();
    }
    Ok(sum / predicted.len() as f64)
}

/// `table[(j, i)] = E_j(theta_i)`: error variance on the steps labelled
/// `j` when predicting with phase `i`. Rows of phases with no labelled
/// steps are NaN. `labels[d][t]` labels the step `t -> t+1` of demo `d`.
pub fn error_variance_table(model: &HmmModel, demos: &[Demonstration], labels: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    if demos.len() != labels.len() {
        return Err(Error::Dimension("one label sequence per demonstration required".into()));
    }
    let n = model.n_phases();
    let mut table = DMatrix::from_element(n, n, f64::NAN);
    for i in 0..n {
        let mut per_phase: Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = vec![(Vec::new(), Vec::new()); n];
        for (demo, lab) in demos.iter().zip(labels) {
            let pred = predict_states(model, i, demo)?;
            if lab.len() < pred.len() {
                return Err(Error::Dimension(format!(
                    "demonstration '{}' has {} labels for {} steps",
                    demo.label(),
                    lab.len(),
                    pred.len()
                )));
            }
            for (t, p) in pred.into_iter().enumerate() {
                let j = lab[t];
                if j < n {
                    per_phase[j].0.push(p);
                    per_phase[j].1.push(demo.state(t + 1).clone());
                }
            }
        }
        for (j, (pred, actual)) in per_phase.iter().enumerate() {
            if !pred.is_empty() {
                table[(j, i)] = error_variance(pred, actual)?;
            }
        }
    }
    Ok(table)
}

/// Number of label changes along a sequence.
pub fn count_switches(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Fraction of samples whose predicted label matches the truth under the
/// best one-to-one relabeling of predicted labels.
pub fn segmentation_accuracy(predicted: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
    let pairs: Vec<(usize, usize)> = predicted
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.iter().copied().zip(t.iter().copied()))
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let k = pairs.iter().map(|&(p, t)| p.max(t) + 1).max().unwrap_or(1);
    let mut counts = vec![vec![0usize; k]; k];
    for &(p, t) in &pairs {
        counts[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &counts, &mut best);
    best as f64 / pairs.len() as f64
}

fn permute(perm: &mut [usize], start: usize, counts: &[Vec<usize>], best: &mut usize) {
    if start == perm.len() {
        let score = perm.iter().enumerate().map(|(p, &t)| counts[p][t]).sum();
        *best = (*best).max(score);
        return;
    }
    for i in start..perm.len() {
        perm.swap(start, i);
        permute(perm, start + 1, counts, best);
        perm.swap(start, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::FeatureFn;
    use crate::types::{PhaseDynamics, TrajectoryPoint, TransitionWeights};

    fn line_demo(n: usize) -> Demonstration {
        let points = (0..n)
            .map(|t| TrajectoryPoint::new(t as f64, DVector::from_vec(vec![t as f64, 2.0 * t as f64]), DVector::from_vec(vec![0.5])))
            .collect();
        Demonstration::new(points, 1.0, "line")
    }

    fn model_with(a: DMatrix<f64>, b: DMatrix<f64>) -> HmmModel {
        let d = PhaseDynamics::new(a, b, DMatrix::identity(2, 2)).unwrap();
        HmmModel::new(vec![d], TransitionWeights::zeros(1, 2), FeatureFn::Identity).unwrap()
    }

    #[test]
    fn identity_dynamics_predict_the_current_state() {
        let demo = line_demo(6);
        let model = model_with(DMatrix::identity(2, 2), DMatrix::zeros(2, 2));
        let pred = predict_states(&model, 0, &demo).unwrap();
        assert_eq!(pred.len(), 5);
        for (t, p) in pred.iter().enumerate() {
            assert_eq!(p, demo.state(t));
        }
    }

    #[test]
    fn bias_only_dynamics_predict_a_constant() {
        let demo = line_demo(6);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, -1.0]);
        let model = model_with(DMatrix::zeros(2, 2), b);
        for p in predict_states(&model, 0, &demo).unwrap() {
            assert_eq!(p.as_slice(), &[3.0, -1.0]);
        }
    }

    #[test]
    fn error_variance_closed_forms() {
        let actual: Vec<DVector<f64>> = (0..10).map(|t| DVector::from_element(3, t as f64)).collect();
        assert_eq!(error_variance(&actual, &actual).unwrap(), 0.0);
        let delta = 0.25;
        let shifted: Vec<_> = actual.iter().map(|a| a.add_scalar(delta)).collect();
        let e = error_variance(&shifted, &actual).unwrap();
        assert!((e - 3.0 * delta * delta).abs() < 1e-15);
        assert!(error_variance(&shifted[..3], &actual).is_err());
    }

    #[test]
    fn switches_and_accuracy() {
        assert_eq!(count_switches(&[0, 0, 1, 1, 2, 2]), 2);
        assert_eq!(count_switches(&[1]), 0);
        let truth = vec![vec![0, 0, 1, 1, 2, 2]];
        let relabeled = vec![vec![2, 2, 0, 0, 1, 1]];
        assert_eq!(segmentation_accuracy(&relabeled, &truth), 1.0);
        let off = vec![vec![2, 2, 2, 0, 1, 1]];
        assert!((segmentation_accuracy(&off, &truth) - 5.0 / 6.0).abs() < 1e-15);
    }
}
