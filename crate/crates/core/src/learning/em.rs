use log::{debug, info};
use rayon::prelude::*;

use super::kmeans::{kmeans_init_prepared, model_from_labels, prepare};
use super::mstep::{m_step_dynamics_prepared, m_step_weights_prepared};
use super::{EmConfig, EmReport};
use crate::error::{Error, Result};
use crate::feature::FeatureFn;
use crate::inference::{forward_backward_prepared, forward_messages, PosteriorMarginals, Sequence};
use crate::linalg::argmax;
use crate::types::{Demonstration, HmmModel};

// phases with less posterior mass than this keep their previous dynamics
const DEAD_PHASE_MASS: f64 = 1e-6;

/// Smoothed posteriors of every demonstration, in input order.
pub fn e_step(model: &HmmModel, demos: &[Demonstration]) -> Result<Vec<PosteriorMarginals>> {
    for demo in demos {
        model.check_demo(demo)?;
    }
    let seqs: Vec<Sequence> = demos.iter().map(|d| Sequence::with_feature(model.feature_fn(), d)).collect();
    e_step_prepared(model, &seqs)
}

pub(crate) fn e_step_prepared(model: &HmmModel, seqs: &[Sequence]) -> Result<Vec<PosteriorMarginals>> {
    seqs.par_iter().map(|s| forward_backward_prepared(model, s)).collect()
}

fn m_step(model: &HmmModel, seqs: &[Sequence], posts: &[PosteriorMarginals], config: &EmConfig) -> Result<HmmModel> {
    let dynamics = (0..model.n_phases())
        .map(|j| {
            let mass: f64 = posts.iter().map(|p| p.mass(j)).sum();
            if mass < DEAD_PHASE_MASS {
                debug!("phase {j} has mass {mass:.3e}, keeping its dynamics");
                Ok(model.phase(j).clone())
            } else {
                m_step_dynamics_prepared(seqs, posts, j, config.ridge)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = m_step_weights_prepared(seqs, posts, model.weights(), config.lr_lambda, config.lr_iters)?;
    Ok(model.with_parts(dynamics, weights))
}

/// EM with the wrench itself as the transition feature.
pub fn em_fit(demos: &[Demonstration], n_phases: usize, config: &EmConfig) -> Result<(HmmModel, EmReport)> {
    em_fit_with_feature(demos, n_phases, &FeatureFn::Identity, config)
}

/// Fits an `n_phases` model to all demonstrations jointly. The returned
/// model is the one with the highest log-likelihood seen, with phases
/// numbered by their first appearance in the first demonstration.
pub fn em_fit_with_feature(
    demos: &[Demonstration],
    n_phases: usize,
    feature_fn: &FeatureFn,
    config: &EmConfig,
) -> Result<(HmmModel, EmReport)> {
    config.validate()?;
    let seqs = prepare(demos, feature_fn)?;
    let model = kmeans_init_prepared(&seqs, n_phases, feature_fn, config)?;
    let (model, report) = run_em(model, &seqs, config)?;
    split_merge(model, report, &seqs, config)
}

/// EM from a given starting model instead of the k-means initialization.
pub fn em_refine(init: &HmmModel, demos: &[Demonstration], config: &EmConfig) -> Result<(HmmModel, EmReport)> {
    config.validate()?;
    let seqs = prepare(demos, init.feature_fn())?;
    for demo in demos {
        init.check_demo(demo)?;
    }
    let (model, report) = run_em(init.clone(), &seqs, config)?;
    split_merge(model, report, &seqs, config)
}

/// Escapes local optima in which one task phase is shared out between
/// several model phases (one per demonstration, say) while another is
/// missing. Each candidate merges a pair of phases, hands the freed index
/// to the later half of the largest phase in every demonstration, and is
/// refitted with a short EM run. The best candidate is run to completion
/// and kept if it beats the current fit.
// split-merge candidates: iterations every candidate gets, and how many
// of them continue to the full short budget
const PROBE_ITERS: usize = 3;
const PROBE_KEEP: usize = 2;

fn split_merge(
    mut model: HmmModel,
    mut report: EmReport,
    seqs: &[Sequence],
    config: &EmConfig,
) -> Result<(HmmModel, EmReport)> {
    let n = model.n_phases();
    if n < 2 {
        return Ok((model, report));
    }
    let probe = EmConfig {
        max_iters: config.split_merge_iters.min(PROBE_ITERS),
        ..config.clone()
    };
    let min_steps = seqs[0].states[0].len() + seqs[0].interactions[0].len();
    for round in 0..config.split_merge_rounds {
        let best_ll = report.best_loglik();
        let posts = e_step_prepared(&model, seqs)?;
        let labels: Vec<Vec<usize>> = posts
            .iter()
            .map(|p| p.gamma.row_iter().map(|r| argmax(r.iter().copied())).collect())
            .collect();
        // every candidate gets a few iterations, the leaders get the rest
        // of the short budget, and the best of those runs to the end
        let mut probed: Vec<(HmmModel, EmReport)> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let Some(init_labels) = split_merge_labels(&labels, n, i, j, min_steps) else {
                    continue;
                };
                let Ok(init) = model_from_labels(seqs, &init_labels, n, model.feature_fn(), config.ridge) else {
                    continue;
                };
                match run_em(init, seqs, &probe) {
                    Ok((m, r)) => {
                        report.iterations_run += r.iterations_run;
                        debug!("split-merge candidate ({i}, {j}): log-likelihood {:.4}", r.best_loglik());
                        probed.push((m, r));
                    }
                    Err(e) => debug!("split-merge candidate ({i}, {j}) failed: {e}"),
                }
            }
        }
        probed.sort_by(|a, b| b.1.best_loglik().total_cmp(&a.1.best_loglik()));
        let mut candidate: Option<(HmmModel, EmReport)> = None;
        for (m, r) in probed.into_iter().take(PROBE_KEEP) {
            let Ok((m, r)) = continue_em(m, r, seqs, config, config.split_merge_iters) else {
                continue;
            };
            report.iterations_run += r.iterations_run;
            if candidate.as_ref().is_none_or(|c| r.best_loglik() > c.1.best_loglik()) {
                candidate = Some((m, r));
            }
        }
        let Some((m, r)) = candidate else { break };
        let (m, r) = continue_em(m, r, seqs, config, config.max_iters)?;
        report.iterations_run += r.iterations_run;
        let ll = r.best_loglik();
        if ll > best_ll + config.loglik_tol {
            info!("split-merge round {round}: log-likelihood {best_ll:.4} -> {ll:.4}");
            model = m;
            report.loglik_trace = r.loglik_trace;
            report.converged = r.converged;
            report.accepted_moves += 1;
        } else {
            break;
        }
    }
    Ok((model, report))
}

/// Runs EM on from the best model of `report` until `budget` iterations
/// are used in total, appending to its trace. `iterations_run` counts
/// only the new iterations.
fn continue_em(
    model: HmmModel,
    mut report: EmReport,
    seqs: &[Sequence],
    config: &EmConfig,
    budget: usize,
) -> Result<(HmmModel, EmReport)> {
    let used = report.loglik_trace.len();
    report.iterations_run = 0;
    if report.converged || used >= budget {
        return Ok((model, report));
    }
    let rest = EmConfig {
        max_iters: budget - used + 1,
        ..config.clone()
    };
    let (m, r) = run_em(model, seqs, &rest)?;
    // the continuation starts from the best model of the first run
    report.loglik_trace.extend_from_slice(&r.loglik_trace[1..]);
    report.iterations_run = r.iterations_run;
    report.converged = r.converged;
    Ok((m, report))
}

/// Merges `j` into `i`, then gives the later half of the largest phase's
/// steps in each sequence to `j`. `None` if some phase ends up with fewer
/// than `min_steps` steps.
fn split_merge_labels(labels: &[Vec<usize>], n: usize, i: usize, j: usize, min_steps: usize) -> Option<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| l.iter().map(|&c| if c == j { i } else { c }).collect())
        .collect();
    let mut counts = vec![0usize; n];
    for l in &out {
        for &c in l {
            counts[c] += 1;
        }
    }
    let k = (0..n).max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))?;
    for l in &mut out {
        let steps: Vec<usize> = (0..l.len()).filter(|&t| l[t] == k).collect();
        for &t in &steps[steps.len() / 2..] {
            l[t] = j;
        }
    }
    let mut counts = vec![0usize; n];
    for l in &out {
        for &c in l {
            counts[c] += 1;
        }
    }
    counts.iter().all(|&c| c >= min_steps).then_some(out)
}

fn run_em(mut model: HmmModel, seqs: &[Sequence], config: &EmConfig) -> Result<(HmmModel, EmReport)> {
    let n_phases = model.n_phases();
    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<(HmmModel, Vec<PosteriorMarginals>, f64)> = None;
    let mut converged = false;
    for iter in 0..config.max_iters {
        let posts = e_step_prepared(&model, seqs).map_err(|e| e.at_iteration(iter))?;
        let ll: f64 = posts.iter().map(|p| p.loglik).sum();
        if !ll.is_finite() {
            return Err(Error::Divergence {
                target: "log-likelihood".into(),
            }
            .at_iteration(iter));
        }
        debug!("EM iteration {iter}: log-likelihood {ll:.6}");
        let improvement = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if best.as_ref().is_none_or(|b| ll > b.2) {
            best = Some((model.clone(), posts.clone(), ll));
        }
        if improvement.is_some_and(|d| d < config.loglik_tol) {
            converged = true;
            break;
        }
        if iter + 1 == config.max_iters {
            break;
        }
        model = m_step(&model, seqs, &posts, config).map_err(|e| e.at_iteration(iter))?;
    }
    let (best_model, best_posts, best_ll) = best.expect("at least one iteration");
    info!(
        "EM with {n_phases} phases: {} iterations, best log-likelihood {best_ll:.4}, converged {converged}",
        trace.len()
    );
    let perm = first_dominance_order(&best_posts, n_phases);
    let model = best_model.permuted(&perm)?;
    let report = EmReport {
        iterations_run: trace.len(),
        loglik_trace: trace,
        converged,
        accepted_moves: 0,
    };
    Ok((model, report))
}

/// Old phase indices in order of first dominance through the
/// demonstrations; phases that never dominate go last.
fn first_dominance_order(posts: &[PosteriorMarginals], n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    for post in posts {
        for row in post.gamma.row_iter() {
            let j = argmax(row.iter().copied());
            if !order.contains(&j) {
                order.push(j);
            }
        }
    }
    for j in 0..n {
        if !order.contains(&j) {
            order.push(j);
        }
    }
    order
}

/// Per-sample phase labels from the online (forward-only) estimate. The
/// last sample, which has no outgoing step, repeats the previous label.
pub fn segment(model: &HmmModel, demo: &Demonstration) -> Result<Vec<usize>> {
    let mut labels = forward_messages(model, demo)?.argmax_phases();
    let last = *labels.last().expect("at least one step");
    labels.push(last);
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn dominance_order_follows_first_demo() {
        let post = PosteriorMarginals {
            gamma: DMatrix::from_row_slice(4, 3, &[0.1, 0.1, 0.8, 0.1, 0.1, 0.8, 0.7, 0.2, 0.1, 0.2, 0.6, 0.2]),
            zeta: vec![DMatrix::zeros(3, 3); 3],
            loglik: 0.0,
        };
        assert_eq!(first_dominance_order(&[post], 3), vec![2, 0, 1]);
    }

    #[test]
    fn split_merge_moves_later_half() {
        let labels = vec![vec![0, 0, 1, 1, 1, 1], vec![0, 2, 2, 2, 2]];
        let out = split_merge_labels(&labels, 3, 1, 2, 1).unwrap();
        assert_eq!(out, vec![vec![0, 0, 1, 1, 2, 2], vec![0, 1, 1, 2, 2]]);
        assert!(split_merge_labels(&labels, 3, 1, 2, 4).is_none());
    }

    #[test]
    fn missing_phase_goes_last() {
        let post = PosteriorMarginals {
            gamma: DMatrix::from_row_slice(2, 3, &[0.1, 0.8, 0.1, 0.1, 0.8, 0.1]),
            zeta: vec![DMatrix::zeros(3, 3)],
            loglik: 0.0,
        };
        assert_eq!(first_dominance_order(&[post], 3), vec![1, 0, 2]);
    }
}
