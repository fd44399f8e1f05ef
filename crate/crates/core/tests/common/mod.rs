#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use phaseseg_core::{Demonstration, FeatureFn, HmmModel, PhaseDynamics, TrajectoryPoint, TransitionWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// A random, well-conditioned model with `n` phases, state dimension `m`
/// and wrench dimension `dw`.
pub fn random_model(seed: u64, n: usize, m: usize, dw: usize) -> HmmModel {
    let mut r = rng(seed);
    let d = dw + 1;
    let dynamics = (0..n)
        .map(|_| {
            let a = DMatrix::identity(m, m) * 0.8 + normal_matrix(&mut r, m, m, 0.1);
            let b = normal_matrix(&mut r, m, d, 0.3);
            let l = normal_matrix(&mut r, m, m, 0.2);
            let sigma = &l * l.transpose() + DMatrix::identity(m, m) * r.random_range(0.05..0.3);
            PhaseDynamics::new(a, b, sigma).unwrap()
        })
        .collect();
    let initial = normal_matrix(&mut r, n, d, 1.0);
    let transition = (0..n).map(|_| normal_matrix(&mut r, n, d, 1.0)).collect();
    let weights = TransitionWeights::new(initial, transition).unwrap();
    HmmModel::new(dynamics, weights, FeatureFn::Identity).unwrap()
}

/// Random states and wrenches at period 0.1.
pub fn random_demo(seed: u64, len: usize, m: usize, dw: usize) -> Demonstration {
    let mut r = rng(seed);
    let points = (0..len)
        .map(|k| TrajectoryPoint::new(k as f64 * 0.1, normal_vector(&mut r, m, 1.0), normal_vector(&mut r, dw, 1.0)))
        .collect();
    Demonstration::validated(points, 0.1, format!("random-{seed}")).unwrap()
}

/// Multivariate normal log density, written out from the Cholesky factor.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance must be positive definite");
    let diff = x - mean;
    let z = chol.l().solve_lower_triangular(&diff).unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let k = x.len() as f64;
    -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

fn interaction(demo: &Demonstration, t: usize) -> DVector<f64> {
    let w = &demo.points()[t].wrench;
    DVector::from_fn(w.len() + 1, |i, _| if i < w.len() { w[i] } else { 1.0 })
}

/// Exhaustive enumeration of every phase path.
pub struct BruteForce {
    pub loglik: f64,
    /// `(T-1) x N` smoothed marginals.
    pub gamma: DMatrix<f64>,
    /// `T-2` pairwise marginals.
    pub zeta: Vec<DMatrix<f64>>,
}

pub fn brute_force(model: &HmmModel, demo: &Demonstration) -> BruteForce {
    let n = model.n_phases();
    let steps = demo.len() - 1;
    let emis = DMatrix::from_fn(steps, n, |t, j| {
        let p = model.phase(j);
        let a = interaction(demo, t);
        let mean = p.a() * demo.state(t) + p.b() * &a;
        gaussian_logpdf(demo.state(t + 1), &mean, p.sigma())
    });
    let init = softmax(&(model.weights().initial() * interaction(demo, 0)));
    let trans: Vec<DMatrix<f64>> = (1..steps)
        .map(|t| {
            let phi = interaction(demo, t);
            let mut p = DMatrix::zeros(n, n);
            for i in 0..n {
                let row = softmax(&(model.weights().from_phase(i) * &phi));
                p.row_mut(i).copy_from(&row.transpose());
            }
            p
        })
        .collect();

    let mut path = vec![0usize; steps];
    let mut logs = Vec::new();
    let mut paths = Vec::new();
    loop {
        let mut lp = init[path[0]].ln() + emis[(0, path[0])];
        for t in 1..steps {
            lp += trans[t - 1][(path[t - 1], path[t])].ln() + emis[(t, path[t])];
        }
        logs.push(lp);
        paths.push(path.clone());
        let mut k = 0;
        loop {
            if k == steps {
                break;
            }
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
            k += 1;
        }
        if k == steps {
            break;
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let loglik = max + total.ln();
    let mut gamma = DMatrix::zeros(steps, n);
    let mut zeta = vec![DMatrix::zeros(n, n); steps.saturating_sub(1)];
    for (p, l) in paths.iter().zip(&logs) {
        let w = (l - loglik).exp();
        for t in 0..steps {
            gamma[(t, p[t])] += w;
            if t + 1 < steps {
                zeta[t][(p[t], p[t + 1])] += w;
            }
        }
    }
    BruteForce { loglik, gamma, zeta }
}
