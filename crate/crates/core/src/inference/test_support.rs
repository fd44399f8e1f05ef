//! Random small models and an exhaustive path-enumeration oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::feature::FeatureFn;
use crate::inference::{emission_loglik, initial_distribution, transition_matrix};
use crate::types::{Demonstration, HmmModel, PhaseDynamics, TrajectoryPoint, TransitionWeights};

pub(crate) fn random_model(rng: &mut impl Rng, n: usize, m: usize, d: usize) -> HmmModel {
    let mut mat = |r: usize, c: usize, scale: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale));
    let dynamics = (0..n)
        .map(|_| {
            let a = DMatrix::identity(m, m) + mat(m, m, 0.3);
            let b = mat(m, d, 0.5);
            let l = mat(m, m, 0.5) + DMatrix::identity(m, m);
            let sigma = &l * l.transpose() * 0.2 + DMatrix::identity(m, m) * 0.05;
            PhaseDynamics::new(a, b, crate::linalg::symmetrize(&sigma)).unwrap()
        })
        .collect();
    let weights = TransitionWeights::new(mat(n, d, 2.0), (0..n).map(|_| mat(n, d, 2.0)).collect()).unwrap();
    HmmModel::new(dynamics, weights, FeatureFn::Identity).unwrap()
}

pub(crate) fn random_demo(rng: &mut impl Rng, len: usize, m: usize, dw: usize) -> Demonstration {
    let points = (0..len)
        .map(|t| {
            TrajectoryPoint::new(
                t as f64 * 0.01,
                DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(dw, |_, _| rng.random_range(-2.0..2.0)),
            )
        })
        .collect();
    Demonstration::new(points, 0.01, "random")
}

pub(crate) struct Oracle {
    pub loglik: f64,
    pub gamma: DMatrix<f64>,
    pub zeta: Vec<DMatrix<f64>>,
}

fn path_weight(model: &HmmModel, demo: &Demonstration, path: &[usize]) -> f64 {
    let phi = |t: usize| demo.interaction(t).into_inner();
    let mut p = initial_distribution(model.weights(), &phi(0))[path[0]];
    for (t, &j) in path.iter().enumerate() {
        if t > 0 {
            p *= transition_matrix(model.weights(), &phi(t))[(path[t - 1], j)];
        }
        p *= emission_loglik(model, j, demo.state(t), &demo.interaction(t), demo.state(t + 1))
            .unwrap()
            .exp();
    }
    p
}

fn paths(n: usize, len: usize) -> Vec<Vec<usize>> {
    let total = n.pow(len as u32);
    (0..total)
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let j = code % n;
                    code /= n;
                    j
                })
                .collect()
        })
        .collect()
}

pub(crate) fn brute_force(model: &HmmModel, demo: &Demonstration) -> Oracle {
    let n = model.n_phases();
    let steps = demo.len() - 1;
    let mut total = 0.0;
    let mut gamma = DMatrix::zeros(steps, n);
    let mut zeta = vec![DMatrix::zeros(n, n); steps.saturating_sub(1)];
    for path in paths(n, steps) {
        let w = path_weight(model, demo, &path);
        total += w;
        for (t, &j) in path.iter().enumerate() {
            gamma[(t, j)] += w;
            if t + 1 < steps {
                zeta[t][(j, path[t + 1])] += w;
            }
        }
    }
    Oracle {
        loglik: total.ln(),
        gamma: gamma / total,
        zeta: zeta.into_iter().map(|z| z / total).collect(),
    }
}

/// Normalized final forward message and total log-likelihood.
pub(crate) fn brute_force_forward(model: &HmmModel, demo: &Demonstration) -> (DVector<f64>, f64) {
    let n = model.n_phases();
    let steps = demo.len() - 1;
    let mut last = DVector::<f64>::zeros(n);
    for path in paths(n, steps) {
        last[path[steps - 1]] += path_weight(model, demo, &path);
    }
    let total = last.sum();
    (last / total, total.ln())
}
