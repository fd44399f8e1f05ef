//! Choosing the number of phases with the Bayesian information criterion.

use std::ops::RangeInclusive;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::FeatureFn;
use crate::learning::{em_fit_with_feature, EmConfig, EmReport};
use crate::types::{Demonstration, HmmModel};

/// How free parameters are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamCount {
    /// `N^2 + 2N - 1`, a count that grows with the number of phases only.
    #[default]
    Compact,
    /// The compact count plus every dynamics parameter:
    /// `N (m^2 + m d + m(m+1)/2)`.
    Full,
}

/// Free-parameter count of an `n`-phase model with state dimension `m`
/// and interaction dimension `d`.
pub fn param_count(n: usize, m: usize, d: usize, count: ParamCount) -> usize {
    let base = n * n + 2 * n - 1;
    match count {
        ParamCount::Compact => base,
        ParamCount::Full => base + n * (m * m + m * d + m * (m + 1) / 2),
    }
}

/// `-2 loglik + p ln(n_samples)`.
pub fn bic(loglik: f64, n_params: usize, n_samples: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_samples as f64).ln()
}

#[derive(Debug, Clone)]
pub struct BicResult {
    pub n_phases: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub n_samples: usize,
    pub bic: f64,
    pub report: EmReport,
    pub model: HmmModel,
}

#[derive(Debug, Clone)]
pub struct BicFailure {
    pub n_phases: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BicSweep {
    /// Successful fits in increasing order of `n_phases`.
    pub results: Vec<BicResult>,
    pub failures: Vec<BicFailure>,
}

impl BicSweep {
    /// Lowest BIC; ties go to fewer phases.
    pub fn best(&self) -> Option<&BicResult> {
        self.results
            .iter()
            .fold(None, |acc: Option<&BicResult>, r| match acc {
                Some(b) if b.bic <= r.bic => Some(b),
                _ => Some(r),
            })
    }
}

/// Fits every `N` in `range` (EM seeded with `config.seed + N`) and scores
/// each fit. A fit that fails is recorded and skipped.
pub fn bic_sweep(
    demos: &[Demonstration],
    range: RangeInclusive<usize>,
    feature_fn: &FeatureFn,
    config: &EmConfig,
    count: ParamCount,
) -> Result<BicSweep> {
    if range.is_empty() || *range.start() == 0 {
        return Err(Error::Config(format!(
            "phase range {}..={} must be non-empty and start at 1 or more",
            range.start(),
            range.end()
        )));
    }
    let first = demos
        .first()
        .ok_or_else(|| Error::Validation("no demonstrations".into()))?;
    let m = first.state_dim();
    let d = first.interaction_dim();
    let n_samples: usize = demos.iter().map(|demo| demo.len().saturating_sub(1)).sum();

    let outcomes: Vec<(usize, Result<(HmmModel, EmReport)>)> = range
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let cfg = EmConfig {
                seed: config.seed.wrapping_add(n as u64),
                ..config.clone()
            };
            (n, em_fit_with_feature(demos, n, feature_fn, &cfg))
        })
        .collect();

    let mut sweep = BicSweep {
        results: Vec::new(),
        failures: Vec::new(),
    };
    for (n, outcome) in outcomes {
        match outcome {
            Ok((model, report)) => {
                let loglik = report.best_loglik();
                let n_params = param_count(n, m, d, count);
                sweep.results.push(BicResult {
                    n_phases: n,
                    loglik,
                    n_params,
                    n_samples,
                    bic: bic(loglik, n_params, n_samples),
                    report,
                    model,
                });
            }
            Err(e) => {
                warn!("fit with {n} phases failed: {e}");
                sweep.failures.push(BicFailure {
                    n_phases: n,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_counts() {
        assert_eq!(param_count(1, 3, 4, ParamCount::Compact), 2);
        assert_eq!(param_count(3, 3, 4, ParamCount::Compact), 14);
        assert_eq!(param_count(5, 3, 4, ParamCount::Compact), 34);
    }

    #[test]
    fn full_counts_include_dynamics() {
        // m = 2, d = 3: A has 4, B has 6, Sigma has 3 free entries
        assert_eq!(param_count(2, 2, 3, ParamCount::Full), 7 + 2 * 13);
    }

    #[test]
    fn bic_formula() {
        let v = bic(-100.0, 14, 1000);
        assert!((v - (200.0 + 14.0 * 1000f64.ln())).abs() < 1e-12);
    }

    fn fake(n: usize, bic: f64) -> BicResult {
        use crate::types::{PhaseDynamics, TransitionWeights};
        use nalgebra::DMatrix;
        let dynamics = (0..n)
            .map(|_| PhaseDynamics::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 2), DMatrix::identity(1, 1)).unwrap())
            .collect();
        let model = HmmModel::new(dynamics, TransitionWeights::zeros(n, 2), FeatureFn::Identity).unwrap();
        BicResult {
            n_phases: n,
            loglik: 0.0,
            n_params: 0,
            n_samples: 1,
            bic,
            report: EmReport {
                loglik_trace: vec![0.0],
                iterations_run: 1,
                converged: true,
                accepted_moves: 0,
            },
            model,
        }
    }

    #[test]
    fn ties_prefer_fewer_phases() {
        let sweep = BicSweep {
            results: vec![fake(1, 5.0), fake(2, 3.0), fake(3, 3.0)],
            failures: vec![],
        };
        assert_eq!(sweep.best().unwrap().n_phases, 2);
    }

    #[test]
    fn rejects_empty_range() {
        #[allow(clippy::reversed_empty_ranges)]
        let err = bic_sweep(&[], 3..=2, &FeatureFn::Identity, &EmConfig::new(0), ParamCount::Compact).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
