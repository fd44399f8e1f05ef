use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax; returns the log normalizer.
pub(crate) fn log_normalize(values: &mut [f64]) -> f64 {
    let norm = log_sum_exp(values.iter().copied());
    for v in values.iter_mut() {
        *v -= norm;
    }
    norm
}

/// Index of the largest entry, ties resolved toward the lowest index.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clamps the eigenvalues of a symmetric matrix from below.
pub(crate) fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrize(m);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

/// Lower Cholesky factor and the Gaussian log normalizer
/// `-0.5 * (m ln 2pi + ln det Sigma)`.
#[derive(Debug, Clone)]
pub(crate) struct GaussianFactor {
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianFactor {
    pub(crate) fn new(sigma: &DMatrix<f64>) -> Option<Self> {
        let chol = nalgebra::Cholesky::new(sigma.clone())?;
        let lower = chol.l();
        let m = sigma.nrows() as f64;
        let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(GaussianFactor {
            lower,
            log_norm: -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub(crate) fn log_density(&self, residual: &DVector<f64>) -> f64 {
        // forward substitution L y = r; m is small so this beats a generic solve
        let n = residual.len();
        let mut y = vec![0.0; n];
        let mut quad = 0.0;
        for i in 0..n {
            let mut acc = residual[i];
            for (k, yk) in y.iter().enumerate().take(i) {
                acc -= self.lower[(i, k)] * yk;
            }
            y[i] = acc / self.lower[(i, i)];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_handles_neg_infinity() {
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp([0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax([1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax([0.0, 0.0]), 0);
    }

    #[test]
    fn eigen_floor_clamps_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let f = floor_eigenvalues(&m, 1e-9);
        assert!((f[(1, 1)] - 1e-9).abs() < 1e-20);
        assert!(GaussianFactor::new(&f).is_some());
    }
}
