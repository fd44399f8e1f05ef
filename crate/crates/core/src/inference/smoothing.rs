use nalgebra::DMatrix;

use super::emission::{emission_table, log_initial_distribution, log_transition_matrix, Sequence};
use crate::error::Result;
use crate::linalg::{log_normalize, log_sum_exp};
use crate::types::{Demonstration, HmmModel};

/// Smoothed phase posteriors of one demonstration.
///
/// `gamma` is `(T-1) x N`; `zeta[t]` is the `N x N` joint of
/// `(rho_t, rho_{t+1})`, so there are `T - 2` slices.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMarginals {
    pub gamma: DMatrix<f64>,
    pub zeta: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

impl PosteriorMarginals {
    pub fn n_phases(&self) -> usize {
        self.gamma.ncols()
    }

    /// Total posterior mass of phase `j`.
    pub fn mass(&self, j: usize) -> f64 {
        self.gamma.column(j).sum()
    }
}

/// Normalized log forward messages, one row per emission step, plus the
/// demonstration log-likelihood accumulated from the normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMessages {
    pub log_alpha: DMatrix<f64>,
    pub loglik: f64,
}

impl ForwardMessages {
    /// `exp(log_alpha)`, the quantity plotted as the phase sequence.
    pub fn normalized_alpha(&self) -> DMatrix<f64> {
        self.log_alpha.map(f64::exp)
    }

    pub fn argmax_phases(&self) -> Vec<usize> {
        self.log_alpha
            .row_iter()
            .map(|r| crate::linalg::argmax(r.iter().copied()))
            .collect()
    }
}

struct ForwardPass {
    log_alpha: DMatrix<f64>,
    log_scale: Vec<f64>,
    // log_trans[t - 1] governs the move into step t
    log_trans: Vec<DMatrix<f64>>,
}

fn forward_pass(model: &HmmModel, seq: &Sequence, log_e: &DMatrix<f64>) -> ForwardPass {
    let n = model.n_phases();
    let steps = seq.steps();
    let mut log_alpha = DMatrix::zeros(steps, n);
    let mut log_scale = Vec::with_capacity(steps);
    let log_trans: Vec<DMatrix<f64>> = (1..steps)
        .map(|t| log_transition_matrix(model.weights(), &seq.features[t]))
        .collect();

    let log_pi = log_initial_distribution(model.weights(), &seq.features[0]);
    let mut row: Vec<f64> = (0..n).map(|j| log_pi[j] + log_e[(0, j)]).collect();
    log_scale.push(log_normalize(&mut row));
    for (j, v) in row.iter().enumerate() {
        log_alpha[(0, j)] = *v;
    }
    for t in 1..steps {
        let lt = &log_trans[t - 1];
        for j in 0..n {
            let incoming = log_sum_exp((0..n).map(|i| log_alpha[(t - 1, i)] + lt[(i, j)]));
            row[j] = log_e[(t, j)] + incoming;
        }
        log_scale.push(log_normalize(&mut row));
        for (j, v) in row.iter().enumerate() {
            log_alpha[(t, j)] = *v;
        }
    }
    ForwardPass {
        log_alpha,
        log_scale,
        log_trans,
    }
}

/// Online-style forward recursion over a whole demonstration.
pub fn forward_messages(model: &HmmModel, demo: &Demonstration) -> Result<ForwardMessages> {
    let seq = Sequence::new(model, demo)?;
    let log_e = emission_table(model, &seq)?;
    let pass = forward_pass(model, &seq, &log_e);
    Ok(ForwardMessages {
        loglik: pass.log_scale.iter().sum(),
        log_alpha: pass.log_alpha,
    })
}

/// Forward-backward smoothing: posterior phase marginals, pairwise
/// marginals and the demonstration log-likelihood.
pub fn forward_backward(model: &HmmModel, demo: &Demonstration) -> Result<PosteriorMarginals> {
    let seq = Sequence::new(model, demo)?;
    forward_backward_prepared(model, &seq)
}

pub(crate) fn forward_backward_prepared(model: &HmmModel, seq: &Sequence) -> Result<PosteriorMarginals> {
    let log_e = emission_table(model, seq)?;
    let n = model.n_phases();
    let steps = seq.steps();
    let pass = forward_pass(model, seq, &log_e);

    // scaled backward messages: beta_hat_t = beta_t / prod_{u > t} c_u
    let mut log_beta = DMatrix::zeros(steps, n);
    for t in (0..steps.saturating_sub(1)).rev() {
        let lt = &pass.log_trans[t];
        for i in 0..n {
            log_beta[(t, i)] = log_sum_exp(
                (0..n).map(|j| lt[(i, j)] + log_e[(t + 1, j)] + log_beta[(t + 1, j)]),
            ) - pass.log_scale[t + 1];
        }
    }

    let mut gamma = DMatrix::zeros(steps, n);
    for t in 0..steps {
        let mut row: Vec<f64> = (0..n).map(|j| pass.log_alpha[(t, j)] + log_beta[(t, j)]).collect();
        log_normalize(&mut row);
        for j in 0..n {
            gamma[(t, j)] = row[j].exp();
        }
    }

    let mut zeta = Vec::with_capacity(steps.saturating_sub(1));
    for t in 0..steps.saturating_sub(1) {
        let lt = &pass.log_trans[t];
        let mut slice: Vec<f64> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                slice.push(pass.log_alpha[(t, i)] + lt[(i, j)] + log_e[(t + 1, j)] + log_beta[(t + 1, j)]);
            }
        }
        log_normalize(&mut slice);
        zeta.push(DMatrix::from_row_iterator(n, n, slice.into_iter().map(f64::exp)));
    }

    Ok(PosteriorMarginals {
        gamma,
        zeta,
        loglik: pass.log_scale.iter().sum(),
    })
}

/// Final normalized forward message, used to cross-check the online filter.
#[cfg(test)]
pub(crate) fn final_log_alpha(model: &HmmModel, demo: &Demonstration) -> nalgebra::DVector<f64> {
    let m = forward_messages(model, demo).unwrap();
    m.log_alpha.row(m.log_alpha.nrows() - 1).transpose()
}
