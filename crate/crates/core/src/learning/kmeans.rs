use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mstep::fit_dynamics;
use super::{EmConfig, STICKY_BIAS};
use crate::error::{Error, Result};
use crate::feature::FeatureFn;
use crate::inference::Sequence;
use crate::types::{Demonstration, HmmModel, TransitionWeights};

const MAX_LLOYD_ITERS: usize = 300;

/// Initial model: k-means++ on the transition features of every step,
/// per-cluster least squares for the dynamics, and transition weights
/// that are zero apart from a sticky bias on each self-transition.
pub fn kmeans_init(
    demos: &[Demonstration],
    n_phases: usize,
    feature_fn: &FeatureFn,
    config: &EmConfig,
) -> Result<HmmModel> {
    let seqs = prepare(demos, feature_fn)?;
    kmeans_init_prepared(&seqs, n_phases, feature_fn, config)
}

pub(crate) fn prepare(demos: &[Demonstration], feature_fn: &FeatureFn) -> Result<Vec<Sequence>> {
    let first = demos
        .first()
        .ok_or_else(|| Error::Validation("no demonstrations".into()))?;
    feature_fn.check(first.state_dim())?;
    for demo in demos {
        if demo.len() < 3 {
            return Err(Error::Validation(format!(
                "demonstration '{}' has {} samples, need at least 3",
                demo.label(),
                demo.len()
            )));
        }
        if demo.state_dim() != first.state_dim() || demo.wrench_dim() != first.wrench_dim() {
            return Err(Error::Dimension(format!(
                "demonstration '{}' differs in dimension from '{}'",
                demo.label(),
                first.label()
            )));
        }
    }
    Ok(demos.iter().map(|d| Sequence::with_feature(feature_fn, d)).collect())
}

pub(crate) fn kmeans_init_prepared(
    seqs: &[Sequence],
    n_phases: usize,
    feature_fn: &FeatureFn,
    config: &EmConfig,
) -> Result<HmmModel> {
    if n_phases == 0 {
        return Err(Error::Config("number of phases must be at least 1".into()));
    }
    let points: Vec<&DVector<f64>> = seqs.iter().flat_map(|s| s.features[..s.steps()].iter()).collect();
    let distinct = count_distinct(&points, n_phases);
    if distinct < n_phases {
        return Err(Error::TooFewDistinct {
            requested: n_phases,
            distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let assign = kmeans(&points, n_phases, &mut rng);
    let mut labels = Vec::with_capacity(seqs.len());
    let mut idx = 0;
    for seq in seqs {
        labels.push(assign[idx..idx + seq.steps()].to_vec());
        idx += seq.steps();
    }
    model_from_labels(seqs, &labels, n_phases, feature_fn, config.ridge)
}

/// Model fitted to a hard assignment of every step: least squares per
/// phase and sticky transition weights.
pub(crate) fn model_from_labels(
    seqs: &[Sequence],
    labels: &[Vec<usize>],
    n_phases: usize,
    feature_fn: &FeatureFn,
    ridge: f64,
) -> Result<HmmModel> {
    let dynamics = (0..n_phases)
        .map(|j| {
            let w: Vec<Vec<f64>> = labels
                .iter()
                .map(|l| l.iter().map(|&c| if c == j { 1.0 } else { 0.0 }).collect())
                .collect();
            fit_dynamics(seqs, &w, j, ridge)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = seqs[0].features[0].len();
    let transition = (0..n_phases)
        .map(|i| {
            let mut w = DMatrix::zeros(n_phases, k);
            w[(i, k - 1)] = STICKY_BIAS;
            w
        })
        .collect();
    let weights = TransitionWeights::new(DMatrix::zeros(n_phases, k), transition)?;
    HmmModel::new(dynamics, weights, feature_fn.clone())
}

/// Number of distinct points, counting at most `cap`.
fn count_distinct(points: &[&DVector<f64>], cap: usize) -> usize {
    let mut found: Vec<&DVector<f64>> = Vec::new();
    for p in points {
        if !found.iter().any(|q| q == p) {
            found.push(p);
            if found.len() >= cap {
                break;
            }
        }
    }
    found.len()
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from k-means++ seeds. Requires at least `k`
/// distinct points.
pub(crate) fn kmeans(points: &[&DVector<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers: Vec<DVector<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // guard against landing on a zero-weight tail through rounding
            if d2[pick] == 0.0 {
                pick = (0..n).max_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap();
            }
            pick
        } else {
            break;
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .map(|c| sq_dist(p, &centers[c]))
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        // an empty cluster takes the point farthest from its own center
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(points[a], &centers[assign[a]]).total_cmp(&sq_dist(points[b], &centers[assign[b]]))
                    })
                    .expect("at least k distinct points");
                counts[assign[far]] -= 1;
                assign[far] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let mut sum = DVector::zeros(center.len());
            for (i, p) in points.iter().enumerate() {
                if assign[i] == c {
                    sum += *p;
                }
            }
            *center = sum / counts[c] as f64;
        }
        if !changed {
            break;
        }
    }
    assign
}
