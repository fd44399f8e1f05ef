use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::controller::{PhasePrimitive, PrimitiveConfig};
use crate::error::{Error, Result};
use crate::inference::PosteriorMarginals;
use crate::types::{Demonstration, HmmModel};

// eigenvalues within this fraction of the largest count as dominant
const DOMINANT_RATIO: f64 = 0.5;
// displacements longer than this multiple of the weighted median are
// shortened to it, so contact snaps do not steer the direction
const CLIP: f64 = 3.0;

/// One primitive per phase: the direction is the principal axis of the
/// `gamma`-weighted displacements `s_{t+1} - s_t`, signed to agree with
/// their mean, and the speed is the weighted mean velocity along it.
/// Displacements beyond three times the weighted median length are
/// shortened to that length first.
/// When several axes are comparably strong, the mean displacement
/// projected onto their span is used instead, and when the mean itself
/// carries most of the scatter it is used directly.
///
/// With `config.press` set, a phase whose mean contact force reaches
/// `config.contact_force` also pushes into the contact: the direction is
/// tilted toward `-mean force` by the ratio `press` (scaled by the
/// translational part of the direction), and the speed is raised
/// so the component along the motion keeps the demonstrated speed.
pub fn extract_primitives(
    model: &HmmModel,
    demos: &[Demonstration],
    posteriors: &[PosteriorMarginals],
    config: &PrimitiveConfig,
) -> Result<Vec<PhasePrimitive>> {
    if demos.len() != posteriors.len() || demos.is_empty() {
        return Err(Error::Dimension("one posterior per demonstration required".into()));
    }
    let n = model.n_phases();
    let m = model.state_dim();
    for (d, p) in demos.iter().zip(posteriors) {
        model.check_demo(d)?;
        if p.gamma.nrows() != d.len() - 1 || p.gamma.ncols() != n {
            return Err(Error::Dimension(format!(
                "posterior of '{}' does not match the demonstration",
                d.label()
            )));
        }
    }
    (0..n)
        .map(|j| {
            let mut mass = 0.0;
            let mut force = DVector::<f64>::zeros(m);
            // (weight, displacement, seconds)
            let mut steps = Vec::new();
            for (demo, post) in demos.iter().zip(posteriors) {
                for t in 0..demo.len() - 1 {
                    let g = post.gamma[(t, j)];
                    if g == 0.0 {
                        continue;
                    }
                    let w = &demo.points()[t].wrench;
                    for i in 0..m.min(3).min(w.len()) {
                        force[i] += g * w[i];
                    }
                    mass += g;
                    steps.push((g, demo.state(t + 1) - demo.state(t), demo.dt()));
                }
            }
            let low = mass < config.min_mass;
            if low {
                warn!("phase {j} has posterior mass {mass:.2}; its primitive is unreliable");
            }
            let cap = CLIP * weighted_median(steps.iter().map(|(g, ds, _)| (*g, ds.norm())).collect());
            let mut mean = DVector::<f64>::zeros(m);
            let mut scatter = DMatrix::<f64>::zeros(m, m);
            let mut velocity = DVector::<f64>::zeros(m);
            for (g, ds, dt) in &steps {
                let norm = ds.norm();
                let ds = if norm > cap { ds * (cap / norm) } else { ds.clone() };
                velocity.axpy(g / dt, &ds, 1.0);
                mean.axpy(*g, &ds, 1.0);
                scatter.ger(*g, &ds, &ds, 1.0);
            }
            if mass > 0.0 {
                mean /= mass;
                scatter /= mass;
                velocity /= mass;
                force /= mass;
            }
            let mut v_dir = principal_direction(&scatter, &mean);
            let mut speed = velocity.dot(&v_dir).max(0.0);
            if let Some(press) = config.press {
                if force.norm() >= config.contact_force {
                    let into = -force.normalize();
                    let side = &into - &v_dir * into.dot(&v_dir);
                    // rotational motion is not pressed
                    let along = v_dir.rows(0, m.min(3)).norm();
                    if side.norm() > 1e-9 && along > 0.0 {
                        let tilted = (&v_dir + side.normalize() * (press * along)).normalize();
                        speed /= tilted.dot(&v_dir);
                        v_dir = tilted;
                    }
                }
            }
            Ok(config.primitive(v_dir, speed)?.flagged(low))
        })
        .collect()
}

fn weighted_median(mut items: Vec<(f64, f64)>) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.sort_by(|a, b| a.1.total_cmp(&b.1));
    let half = 0.5 * items.iter().map(|i| i.0).sum::<f64>();
    let mut acc = 0.0;
    for (g, v) in &items {
        acc += g;
        if acc >= half {
            return *v;
        }
    }
    items[items.len() - 1].1
}

pub(crate) fn principal_direction(scatter: &DMatrix<f64>, mean: &DVector<f64>) -> DVector<f64> {
    let m = mean.len();
    let eig = SymmetricEigen::new(scatter.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        let mut e = DVector::zeros(m);
        e[0] = 1.0;
        return e;
    }
    let leading = eig.eigenvectors.column(order[0]).into_owned();
    let dominant: Vec<usize> = order
        .iter()
        .copied()
        .take_while(|&i| eig.eigenvalues[i] >= DOMINANT_RATIO * top)
        .collect();
    if dominant.len() > 1 {
        let mut proj = DVector::zeros(m);
        for &i in &dominant {
            let v = eig.eigenvectors.column(i);
            proj += v * v.dot(mean);
        }
        if proj.norm() > 1e-12 * top.sqrt() {
            return proj.normalize();
        }
    }
    // consistent motion: the mean is far less noisy than the axis
    if mean.norm_squared() >= DOMINANT_RATIO * top {
        return mean.normalize();
    }
    if leading.dot(mean) < 0.0 {
        -leading
    } else {
        leading
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::FeatureFn;
    use crate::types::{PhaseDynamics, TrajectoryPoint, TransitionWeights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(n: usize, m: usize) -> HmmModel {
        let dynamics = (0..n)
            .map(|_| PhaseDynamics::new(DMatrix::identity(m, m), DMatrix::zeros(m, m + 1), DMatrix::identity(m, m)).unwrap())
            .collect();
        HmmModel::new(dynamics, TransitionWeights::zeros(n, m + 1), FeatureFn::Identity).unwrap()
    }

    fn demo_from(states: Vec<DVector<f64>>, dt: f64) -> Demonstration {
        let m = states[0].len();
        let points = states
            .into_iter()
            .enumerate()
            .map(|(t, s)| TrajectoryPoint::new(t as f64 * dt, s, DVector::zeros(m)))
            .collect();
        Demonstration::new(points, dt, "p")
    }

    fn uniform(len: usize, n: usize) -> PosteriorMarginals {
        PosteriorMarginals {
            gamma: DMatrix::from_element(len - 1, n, 1.0 / n as f64),
            zeta: vec![DMatrix::from_element(n, n, 1.0 / (n * n) as f64); len - 2],
            loglik: 0.0,
        }
    }

    #[test]
    fn straight_down() {
        let states = (0..50).map(|t| DVector::from_vec(vec![0.1, 0.2, 1.0 - 0.003 * t as f64])).collect();
        let demo = demo_from(states, 0.01);
        let prims = extract_primitives(&model(1, 3), &[demo], &[uniform(50, 1)], &PrimitiveConfig::default()).unwrap();
        assert!((prims[0].v_dir() - DVector::from_vec(vec![0.0, 0.0, -1.0])).norm() < 1e-12);
        assert!((prims[0].speed() - 0.3).abs() < 1e-9);
        assert!(!prims[0].low_confidence());
    }

    #[test]
    fn opposite_plates_share_descent() {
        let left = (0..40).map(|t| DVector::from_vec(vec![-0.04 + 0.001 * t as f64, 0.0, 0.04 - 0.001 * t as f64])).collect();
        let right = (0..40).map(|t| DVector::from_vec(vec![0.04 - 0.001 * t as f64, 0.0, 0.04 - 0.001 * t as f64])).collect();
        let demos = [demo_from(left, 0.01), demo_from(right, 0.01)];
        let posts = [uniform(40, 1), uniform(40, 1)];
        let prims = extract_primitives(&model(1, 3), &demos, &posts, &PrimitiveConfig::default()).unwrap();
        let v = prims[0].v_dir();
        assert!(v[2] < -0.99, "{v}");
    }

    #[test]
    fn matches_leading_eigenvector() {
        // x goes back and forth twice as fast as y moves, so the mean is weak
        let mut states = vec![DVector::from_vec(vec![0.0, 0.0])];
        for t in 0..60 {
            let last = states.last().unwrap().clone();
            let step = match t {
                0..20 => DVector::from_vec(vec![0.02, 0.0]),
                20..30 => DVector::from_vec(vec![-0.02, 0.0]),
                _ => DVector::from_vec(vec![0.0, 0.01]),
            };
            states.push(last + step);
        }
        let demo = demo_from(states, 0.1);
        let prims = extract_primitives(&model(2, 2), &[demo.clone()], &[uniform(61, 2)], &PrimitiveConfig::default()).unwrap();
        // brute force: power iteration on the scatter
        let mut s = DMatrix::zeros(2, 2);
        for t in 0..60 {
            let d = demo.state(t + 1) - demo.state(t);
            s += &d * d.transpose();
        }
        let mut v = DVector::from_vec(vec![0.3, 0.7]);
        for _ in 0..200 {
            v = (&s * v).normalize();
        }
        assert!((prims[0].v_dir() - &v).norm() < 1e-9 || (prims[0].v_dir() + &v).norm() < 1e-9);
        assert!(prims[0].v_dir()[0] > 0.0);
    }

    #[test]
    fn noisy_descent_keeps_idle_axes_still() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states: Vec<_> = (0..300)
            .map(|t| {
                let mut s = DVector::from_fn(6, |_, _| 1e-4 * (rng.random::<f64>() - 0.5) * 3.46);
                s[2] += 0.06 - 2e-4 * t as f64;
                s
            })
            .collect();
        let demo = demo_from(states, 0.01);
        let prims = extract_primitives(&model(1, 6), &[demo], &[uniform(300, 1)], &PrimitiveConfig::default()).unwrap();
        let v = prims[0].v_dir();
        assert!(v[2] < -0.999, "{v}");
        assert!((prims[0].speed() - 0.02).abs() < 1e-3, "{}", prims[0].speed());
    }

    #[test]
    fn low_mass_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let states = (0..30).map(|_| DVector::from_vec(vec![rng.random_range(-1.0..1.0)])).collect();
        let demo = demo_from(states, 0.01);
        let mut post = uniform(30, 2);
        post.gamma = DMatrix::from_fn(29, 2, |t, j| if (t == 0) == (j == 1) { 1.0 } else { 0.0 });
        let prims = extract_primitives(&model(2, 1), &[demo], &[post], &PrimitiveConfig::default()).unwrap();
        assert!(!prims[0].low_confidence());
        assert!(prims[1].low_confidence());
    }
}
