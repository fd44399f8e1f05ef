use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feature::FeatureFn;
use crate::inference::{PosteriorMarginals, Sequence};
use crate::linalg::floor_eigenvalues;
use crate::types::{Demonstration, PhaseDynamics, TransitionWeights, SIGMA_FLOOR};

// squared pivot ratio below which the unregularized solve is not trusted
const ILL_CONDITIONED: f64 = 1e-15;

// step halvings tolerated before an inner iteration gives up on progress
const MAX_HALVINGS: usize = 60;

/// Weighted least squares for phase `phase` over the concatenated steps
/// of all sequences, `weights[d][t]` weighting step `t` of sequence `d`.
pub(crate) fn fit_dynamics(seqs: &[Sequence], weights: &[Vec<f64>], phase: usize, ridge: f64) -> Result<PhaseDynamics> {
    let m = seqs[0].states[0].len();
    let d = seqs[0].interactions[0].len();
    let p = m + d;
    let mut sxx = DMatrix::<f64>::zeros(p, p);
    let mut syx = DMatrix::<f64>::zeros(m, p);
    let mut total = 0.0;
    let mut x = DVector::<f64>::zeros(p);
    for (seq, w) in seqs.iter().zip(weights) {
        for t in 0..seq.steps() {
            let wt = w[t];
            if wt == 0.0 {
                continue;
            }
            x.rows_mut(0, m).copy_from(&seq.states[t]);
            x.rows_mut(m, d).copy_from(&seq.interactions[t]);
            sxx.ger(wt, &x, &x, 1.0);
            syx.ger(wt, &seq.states[t + 1], &x, 1.0);
            total += wt;
        }
    }
    if !(total > 0.0) {
        return Err(Error::SingularSystem { phase });
    }
    let theta = solve_normal_equations(&sxx, &syx, ridge).ok_or(Error::SingularSystem { phase })?;
    let a = theta.columns(0, m).into_owned();
    let b = theta.columns(m, d).into_owned();

    let mut sigma = DMatrix::<f64>::zeros(m, m);
    for (seq, w) in seqs.iter().zip(weights) {
        for t in 0..seq.steps() {
            let wt = w[t];
            if wt == 0.0 {
                continue;
            }
            let resid = &seq.states[t + 1] - &a * &seq.states[t] - &b * &seq.interactions[t];
            sigma.ger(wt, &resid, &resid, 1.0);
        }
    }
    sigma /= total;
    PhaseDynamics::new(a, b, floor_eigenvalues(&sigma, SIGMA_FLOOR))
}

/// Solves `Theta Sxx = Syx`. The ridge `ridge * tr(Sxx) / p` is added
/// only when `Sxx` is numerically singular, so a well-posed M-step stays
/// exact.
fn solve_normal_equations(sxx: &DMatrix<f64>, syx: &DMatrix<f64>, ridge: f64) -> Option<DMatrix<f64>> {
    let attempt = |reg: f64| -> Option<DMatrix<f64>> {
        let mut lhs = sxx.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += reg;
        }
        let chol = nalgebra::Cholesky::new(lhs)?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !(lo > 0.0) || (lo / hi).powi(2) < ILL_CONDITIONED {
            return None;
        }
        let theta = chol.solve(&syx.transpose()).transpose();
        theta.iter().all(|v| v.is_finite()).then_some(theta)
    };
    attempt(0.0).or_else(|| {
        let reg = ridge * sxx.trace() / sxx.nrows() as f64;
        (reg > 0.0).then(|| attempt(reg)).flatten()
    })
}

/// Re-estimates `(A_j, B_j, Sigma_j)` from the smoothed marginals
/// `gamma(j)` of every demonstration.
pub fn m_step_dynamics(
    demos: &[Demonstration],
    posteriors: &[PosteriorMarginals],
    j: usize,
    ridge: f64,
) -> Result<PhaseDynamics> {
    check_alignment(demos, posteriors)?;
    let seqs: Vec<Sequence> = demos.iter().map(|d| Sequence::with_feature(&FeatureFn::Identity, d)).collect();
    m_step_dynamics_prepared(&seqs, posteriors, j, ridge)
}

pub(crate) fn m_step_dynamics_prepared(
    seqs: &[Sequence],
    posteriors: &[PosteriorMarginals],
    j: usize,
    ridge: f64,
) -> Result<PhaseDynamics> {
    if posteriors.iter().any(|p| j >= p.n_phases()) {
        return Err(Error::Dimension(format!("phase {j} out of range")));
    }
    let weights: Vec<Vec<f64>> = posteriors.iter().map(|p| p.gamma.column(j).iter().copied().collect()).collect();
    fit_dynamics(seqs, &weights, j, ridge)
}

fn check_alignment(demos: &[Demonstration], posteriors: &[PosteriorMarginals]) -> Result<()> {
    if demos.is_empty() || demos.len() != posteriors.len() {
        return Err(Error::Dimension(format!(
            "{} demonstrations but {} posteriors",
            demos.len(),
            posteriors.len()
        )));
    }
    for (d, p) in demos.iter().zip(posteriors) {
        if d.len() < 2 || p.gamma.nrows() != d.len() - 1 || p.zeta.len() != d.len() - 2 {
            return Err(Error::Dimension(format!(
                "posteriors do not match demonstration '{}'",
                d.label()
            )));
        }
    }
    Ok(())
}

/// Multi-class logistic regression with soft, per-sample class weights.
///
/// With features `F` (one row per sample), targets `L` (row `t` holds the
/// class weights of sample `t`) and weights `W` (`classes x k`), the loss
/// is `-sum_t sum_j L_tj log softmax(W phi_t)_j` and its gradient is
/// `(diag(l) P - L)^T F`, where `l_t = sum_j L_tj`. For targets whose rows
/// sum to one this is the familiar `F (P - L)`.
#[derive(Debug, Clone)]
pub struct WeightedLogistic {
    features: DMatrix<f64>,
    // features and targets transposed, one column per sample
    features_t: DMatrix<f64>,
    targets_t: DMatrix<f64>,
    row_mass: DVector<f64>,
}

impl WeightedLogistic {
    pub fn new(features: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        if targets.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation("class weights must be finite and non-negative".into()));
        }
        let row_mass = DVector::from_iterator(targets.nrows(), targets.row_iter().map(|r| r.sum()));
        Ok(WeightedLogistic {
            features_t: features.transpose(),
            features,
            targets_t: targets.transpose(),
            row_mass,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.targets_t.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Class probabilities (one column per sample) and the loss.
    fn evaluate(&self, w: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let mut probs = w * &self.features_t;
        let n = probs.nrows();
        let mut loss = 0.0;
        for (col, target) in probs
            .as_mut_slice()
            .chunks_mut(n)
            .zip(self.targets_t.as_slice().chunks(n))
        {
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let mut mass = 0.0;
            let mut dot = 0.0;
            for (v, &l) in col.iter_mut().zip(target) {
                let z = *v - max;
                dot += l * z;
                mass += l;
                *v = z.exp();
                sum += *v;
            }
            loss -= dot - mass * sum.ln();
            for v in col.iter_mut() {
                *v /= sum;
            }
        }
        (probs, loss)
    }

    fn gradient_from(&self, probs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = probs.nrows();
        let mut resid = probs.clone();
        for (t, col) in resid.as_mut_slice().chunks_mut(n).enumerate() {
            let mass = self.row_mass[t];
            for v in col.iter_mut() {
                *v *= mass;
            }
        }
        resid -= &self.targets_t;
        resid * &self.features
    }

    /// Negative weighted log-likelihood.
    pub fn loss(&self, w: &DMatrix<f64>) -> f64 {
        self.evaluate(w).1
    }

    pub fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.gradient_from(&self.evaluate(w).0)
    }

    /// `lr_iters` steps of `w <- w - step * G`. The step starts at `lr`
    /// and is halved whenever a trial step would increase the loss, so the
    /// loss never increases; a halved step is kept for later iterations.
    pub fn descend(&self, w0: &DMatrix<f64>, lr: f64, iters: usize) -> Result<DMatrix<f64>> {
        let mut w = w0.clone();
        let (mut probs, mut loss) = self.evaluate(&w);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                target: "initial weights".into(),
            });
        }
        let mut step = lr;
        for _ in 0..iters {
            let g = self.gradient_from(&probs);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    target: "gradient".into(),
                });
            }
            if g.amax() == 0.0 {
                break;
            }
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let cand = &w - &g * step;
                let (cand_probs, cand_loss) = self.evaluate(&cand);
                if cand_loss.is_finite() && cand_loss <= loss {
                    w = cand;
                    probs = cand_probs;
                    loss = cand_loss;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // no representable descent left at this point
                break;
            }
        }
        Ok(w)
    }
}

/// Transition-feature matrix of all steps `t >= 1` (the features driving
/// `rho_t -> rho_{t+1}`) across sequences.
fn transition_features(seqs: &[Sequence]) -> DMatrix<f64> {
    let k = seqs[0].features[0].len();
    let rows: usize = seqs.iter().map(|s| s.steps() - 1).sum();
    let mut f = DMatrix::zeros(rows, k);
    let mut r = 0;
    for seq in seqs {
        for t in 1..seq.steps() {
            f.row_mut(r).copy_from(&seq.features[t].transpose());
            r += 1;
        }
    }
    f
}

/// Updates the transition and initial weights by gradient descent on the
/// weighted logistic losses; `zeta` supplies the class weights for
/// transitions out of each phase and `gamma_1` those of the first phase.
pub fn m_step_weights(
    feature_fn: &FeatureFn,
    demos: &[Demonstration],
    posteriors: &[PosteriorMarginals],
    weights_old: &TransitionWeights,
    lr_lambda: f64,
    lr_iters: usize,
) -> Result<TransitionWeights> {
    check_alignment(demos, posteriors)?;
    let seqs: Vec<Sequence> = demos.iter().map(|d| Sequence::with_feature(feature_fn, d)).collect();
    m_step_weights_prepared(&seqs, posteriors, weights_old, lr_lambda, lr_iters)
}

/// The logistic problem for transitions out of phase `i`.
pub(crate) fn transition_problem(seqs: &[Sequence], posteriors: &[PosteriorMarginals], i: usize) -> Result<WeightedLogistic> {
    let n = posteriors[0].n_phases();
    let features = transition_features(seqs);
    let mut targets = DMatrix::zeros(features.nrows(), n);
    let mut r = 0;
    for post in posteriors {
        for z in &post.zeta {
            targets.row_mut(r).copy_from(&z.row(i));
            r += 1;
        }
    }
    WeightedLogistic::new(features, targets)
}

pub(crate) fn initial_problem(seqs: &[Sequence], posteriors: &[PosteriorMarginals]) -> Result<WeightedLogistic> {
    let n = posteriors[0].n_phases();
    let k = seqs[0].features[0].len();
    let mut features = DMatrix::zeros(seqs.len(), k);
    let mut targets = DMatrix::zeros(seqs.len(), n);
    for (r, (seq, post)) in seqs.iter().zip(posteriors).enumerate() {
        features.row_mut(r).copy_from(&seq.features[0].transpose());
        targets.row_mut(r).copy_from(&post.gamma.row(0));
    }
    WeightedLogistic::new(features, targets)
}

pub(crate) fn m_step_weights_prepared(
    seqs: &[Sequence],
    posteriors: &[PosteriorMarginals],
    weights_old: &TransitionWeights,
    lr_lambda: f64,
    lr_iters: usize,
) -> Result<TransitionWeights> {
    let n = weights_old.n_phases();
    if seqs[0].features[0].len() != weights_old.feature_dim() {
        return Err(Error::Dimension("feature dimension differs from the weights".into()));
    }
    let initial = initial_problem(seqs, posteriors)?
        .descend(weights_old.initial(), lr_lambda, lr_iters)
        .map_err(|e| rename_divergence(e, "initial phase weights".into()))?;
    let transition = (0..n)
        .map(|i| {
            transition_problem(seqs, posteriors, i)?
                .descend(weights_old.from_phase(i), lr_lambda, lr_iters)
                .map_err(|e| rename_divergence(e, format!("transitions out of phase {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    TransitionWeights::new(initial, transition)
}

fn rename_divergence(e: Error, target: String) -> Error {
    match e {
        Error::Divergence { .. } => Error::Divergence { target },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::forward_backward;
    use crate::types::{HmmModel, TrajectoryPoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn linear_demo(a: &DMatrix<f64>, b: &DMatrix<f64>, s0: DVector<f64>, len: usize, seed: u64) -> Demonstration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = s0;
        let dw = b.ncols() - 1;
        let mut points = Vec::new();
        for t in 0..len {
            let w = DVector::from_fn(dw, |_, _| rng.random_range(-3.0..3.0));
            points.push(TrajectoryPoint::new(t as f64 * 0.01, s.clone(), w.clone()));
            let mut av = DVector::from_element(dw + 1, 1.0);
            av.rows_mut(0, dw).copy_from(&w);
            s = a * &s + b * av;
        }
        Demonstration::new(points, 0.01, "lin")
    }

    fn ones_posterior(demo: &Demonstration, value: f64) -> PosteriorMarginals {
        PosteriorMarginals {
            gamma: DMatrix::from_element(demo.len() - 1, 1, value),
            zeta: vec![DMatrix::from_element(1, 1, value); demo.len() - 2],
            loglik: 0.0,
        }
    }

    fn truth() -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.05, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 3, &[0.01, -0.02, 0.1, 0.03, 0.0, -0.05]);
        (a, b)
    }

    #[test]
    fn noise_free_data_recovers_dynamics() {
        let (a, b) = truth();
        let demo = linear_demo(&a, &b, DVector::from_vec(vec![1.0, -1.0]), 60, 1);
        let post = ones_posterior(&demo, 1.0);
        let fit = m_step_dynamics(&[demo.clone()], &[post], 0, 0.0).unwrap();
        assert!((fit.a() - &a).amax() < 1e-8);
        assert!((fit.b() - &b).amax() < 1e-8);
        // noise-free residuals collapse onto the floor
        assert!(fit.sigma().amax() < 1e-8);
    }

    #[test]
    fn uniform_weight_scale_cancels() {
        let (a, b) = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut demo = linear_demo(&a, &b, DVector::from_vec(vec![0.5, 0.5]), 80, 2);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let points: Vec<_> = demo
            .points()
            .iter()
            .map(|p| TrajectoryPoint::new(p.t, p.state.map(|v| v + noise.sample(&mut rng)), p.wrench.clone()))
            .collect();
        demo = Demonstration::new(points, 0.01, "noisy");
        let full = m_step_dynamics(&[demo.clone()], &[ones_posterior(&demo, 1.0)], 0, 1e-8).unwrap();
        let half = m_step_dynamics(&[demo.clone()], &[ones_posterior(&demo, 0.5)], 0, 1e-8).unwrap();
        assert!((full.a() - half.a()).amax() < 1e-10);
        assert!((full.b() - half.b()).amax() < 1e-10);
        assert!((full.sigma() - half.sigma()).amax() < 1e-14);
    }

    #[test]
    fn two_demos_combine() {
        let (a, b) = truth();
        let d1 = linear_demo(&a, &b, DVector::from_vec(vec![1.0, 0.0]), 30, 5);
        let d2 = linear_demo(&a, &b, DVector::from_vec(vec![-2.0, 3.0]), 30, 6);
        let posts = vec![ones_posterior(&d1, 1.0), ones_posterior(&d2, 1.0)];
        let fit = m_step_dynamics(&[d1, d2], &posts, 0, 0.0).unwrap();
        assert!((fit.a() - &a).amax() < 1e-8);
        assert!((fit.b() - &b).amax() < 1e-8);
    }

    #[test]
    fn weighted_ls_matches_normal_equations() {
        // independent route: explicit X, W, Y and a dense inverse
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (a, b) = truth();
        let demo = linear_demo(&a, &b, DVector::from_vec(vec![0.3, 0.1]), 25, 9);
        let noisy: Vec<_> = demo
            .points()
            .iter()
            .map(|p| TrajectoryPoint::new(p.t, p.state.map(|v| v + rng.random_range(-0.05..0.05)), p.wrench.clone()))
            .collect();
        let demo = Demonstration::new(noisy, 0.01, "n");
        let w: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..1.0)).collect();
        let post = PosteriorMarginals {
            gamma: DMatrix::from_fn(24, 2, |t, j| if j == 0 { w[t] } else { 1.0 - w[t] }),
            zeta: vec![DMatrix::zeros(2, 2); 23],
            loglik: 0.0,
        };
        let fit = m_step_dynamics(&[demo.clone()], &[post], 0, 0.0).unwrap();
        let x = DMatrix::from_fn(5, 24, |r, t| {
            if r < 2 {
                demo.state(t)[r]
            } else {
                demo.interaction(t).as_vector()[r - 2]
            }
        });
        let y = DMatrix::from_fn(2, 24, |r, t| demo.state(t + 1)[r]);
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w));
        let theta = &y * &wm * x.transpose() * (&x * &wm * x.transpose()).try_inverse().unwrap();
        assert!((fit.a() - theta.columns(0, 2)).amax() < 1e-9);
        assert!((fit.b() - theta.columns(2, 3)).amax() < 1e-9);
    }

    #[test]
    fn singular_system_names_phase() {
        let points = (0..5)
            .map(|t| TrajectoryPoint::new(t as f64, DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0])))
            .collect();
        let demo = Demonstration::new(points, 1.0, "flat");
        let post = PosteriorMarginals {
            gamma: DMatrix::from_element(4, 2, 0.5),
            zeta: vec![DMatrix::from_element(2, 2, 0.25); 3],
            loglik: 0.0,
        };
        let err = m_step_dynamics(&[demo], &[post], 1, 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { phase: 1 }));
    }

    fn problem(rng: &mut ChaCha8Rng, rows: usize, n: usize, k: usize) -> WeightedLogistic {
        let f = DMatrix::from_fn(rows, k, |_, c| if c == k - 1 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let l = DMatrix::from_fn(rows, n, |_, _| rng.random_range(0.0..0.5));
        WeightedLogistic::new(f, l).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let p = problem(&mut rng, 30, 3, 4);
            let w = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.5..1.5));
            let g = p.gradient(&w);
            let h = 1e-5;
            let fd = DMatrix::from_fn(3, 4, |r, c| {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[(r, c)] += h;
                wm[(r, c)] -= h;
                (p.loss(&wp) - p.loss(&wm)) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(1e-12);
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn uniform_targets_keep_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = DMatrix::from_fn(50, 3, |_, c| if c == 2 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let l = DMatrix::from_element(50, 3, 1.0 / 3.0);
        let p = WeightedLogistic::new(f, l).unwrap();
        let zero = DMatrix::zeros(3, 3);
        assert!(p.gradient(&zero).amax() < 1e-12);
        let w = p.descend(&zero, 1e-3, 50).unwrap();
        assert!(w.amax() < 1e-12);
    }

    #[test]
    fn sticky_targets_grow_the_diagonal() {
        // every zeta puts its mass on staying in the same phase
        let n = 2;
        let len = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points = (0..len)
            .map(|t| TrajectoryPoint::new(t as f64 * 0.01, DVector::from_vec(vec![0.0]), DVector::from_vec(vec![rng.random_range(-1.0..1.0)])))
            .collect();
        let demo = Demonstration::new(points, 0.01, "s");
        let gamma = DMatrix::from_fn(len - 1, n, |t, j| if (t < 100) == (j == 0) { 1.0 } else { 0.0 });
        let zeta = (0..len - 2)
            .map(|t| {
                let mut z = DMatrix::zeros(n, n);
                let j = usize::from(t >= 100);
                z[(j, j)] = 1.0;
                z
            })
            .collect();
        let post = PosteriorMarginals { gamma, zeta, loglik: 0.0 };
        let mut w = TransitionWeights::zeros(n, 2);
        let mut prev_diag = 0.0;
        for _ in 0..20 {
            w = m_step_weights(&FeatureFn::Identity, &[demo.clone()], &[post.clone()], &w, 0.05, 50).unwrap();
            let diag = w.from_phase(0)[(0, 1)] - w.from_phase(0)[(1, 1)];
            assert!(diag >= prev_diag);
            prev_diag = diag;
        }
        let p = crate::inference::transition_matrix(&w, &DVector::from_vec(vec![0.0, 1.0]));
        assert!(p[(0, 0)] > 0.99 && p[(1, 1)] > 0.99, "{p}");
    }

    #[test]
    fn descent_never_increases_loss_even_with_huge_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = problem(&mut rng, 40, 4, 3);
        let w0 = DMatrix::zeros(4, 3);
        let w = p.descend(&w0, 1e6, 30).unwrap();
        assert!(p.loss(&w) <= p.loss(&w0));
    }

    #[test]
    fn m_step_weights_rejects_misaligned_posteriors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model: HmmModel = crate::inference::test_support::random_model(&mut rng, 2, 1, 2);
        let demo = crate::inference::test_support::random_demo(&mut rng, 10, 1, 1);
        let other = crate::inference::test_support::random_demo(&mut rng, 12, 1, 1);
        let post = forward_backward(&model, &other).unwrap();
        assert!(m_step_weights(&FeatureFn::Identity, &[demo], &[post], model.weights(), 1e-3, 5).is_err());
    }
}
