//! Domain types: demonstrations, per-phase dynamics, transition weights and
//! the assembled model.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feature::{append_bias, FeatureFn, InteractionVector};
use crate::linalg::GaussianFactor;

/// Smallest eigenvalue any phase covariance may have (squared state units).
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Relative tolerance on the sample period.
const DT_TOLERANCE: f64 = 0.1;

/// One recorded sample: time, state (position, optionally orientation as a
/// rotation vector) and the raw contact wrench.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: DVector<f64>,
    pub wrench: DVector<f64>,
}

impl TrajectoryPoint {
    pub fn new(t: f64, state: DVector<f64>, wrench: DVector<f64>) -> Self {
        TrajectoryPoint { t, state, wrench }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooShort { len: usize },
    InvalidPeriod { dt: f64 },
    NonFinite { index: usize },
    DimensionChange { index: usize },
    NonIncreasingTime { index: usize },
    IrregularSpacing { index: usize, spacing: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooShort { len } => write!(f, "too short: {len} samples, need at least 2"),
            Violation::InvalidPeriod { dt } => write!(f, "sample period {dt} is not positive"),
            Violation::NonFinite { index } => write!(f, "non-finite value at index {index}"),
            Violation::DimensionChange { index } => {
                write!(f, "state or wrench length changes at index {index}")
            }
            Violation::NonIncreasingTime { index } => {
                write!(f, "timestamp does not increase at index {index}")
            }
            Violation::IrregularSpacing { index, spacing } => {
                write!(f, "spacing {spacing} at index {index} deviates more than 10% from dt")
            }
        }
    }
}

/// Ordered samples of one demonstration recorded at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    points: Vec<TrajectoryPoint>,
    dt: f64,
    label: String,
}

impl Demonstration {
    /// Builds a demonstration without validating it; see [`validate_demo`].
    pub fn new(points: Vec<TrajectoryPoint>, dt: f64, label: impl Into<String>) -> Self {
        Demonstration {
            points,
            dt,
            label: label.into(),
        }
    }

    /// Builds a demonstration and rejects it if any invariant is violated.
    pub fn validated(points: Vec<TrajectoryPoint>, dt: f64, label: impl Into<String>) -> Result<Self> {
        let demo = Self::new(points, dt, label);
        let violations = demo.validate();
        if violations.is_empty() {
            Ok(demo)
        } else {
            Err(Error::Validation(format_violations(&demo.label, &violations)))
        }
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn state_dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.state.len())
    }

    pub fn wrench_dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.wrench.len())
    }

    /// `d = d_w + 1`.
    pub fn interaction_dim(&self) -> usize {
        self.wrench_dim() + 1
    }

    pub fn state(&self, t: usize) -> &DVector<f64> {
        &self.points[t].state
    }

    /// Interaction vector of sample `t`. Finite wrenches are a
    /// demonstration invariant, so this does not re-check them.
    pub fn interaction(&self, t: usize) -> InteractionVector {
        append_bias(&self.points[t].wrench)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_demo(self)
    }
}

pub(crate) fn format_violations(label: &str, violations: &[Violation]) -> String {
    let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    format!("demonstration '{label}': {}", list.join("; "))
}

/// Checks every demonstration invariant; an empty list means the
/// demonstration is well formed.
pub fn validate_demo(demo: &Demonstration) -> Vec<Violation> {
    let mut out = Vec::new();
    if demo.points.len() < 2 {
        out.push(Violation::TooShort {
            len: demo.points.len(),
        });
    }
    let dt_ok = demo.dt.is_finite() && demo.dt > 0.0;
    if !dt_ok {
        out.push(Violation::InvalidPeriod { dt: demo.dt });
    }
    let (m, dw) = (demo.state_dim(), demo.wrench_dim());
    for (i, p) in demo.points.iter().enumerate() {
        if p.state.len() != m || p.wrench.len() != dw {
            out.push(Violation::DimensionChange { index: i });
        }
        let finite = p.t.is_finite()
            && p.state.iter().all(|v| v.is_finite())
            && p.wrench.iter().all(|v| v.is_finite());
        if !finite {
            out.push(Violation::NonFinite { index: i });
            continue;
        }
        if i > 0 {
            let prev = demo.points[i - 1].t;
            let spacing = p.t - prev;
            if !prev.is_finite() {
                continue;
            }
            if spacing <= 0.0 {
                out.push(Violation::NonIncreasingTime { index: i });
            } else if dt_ok && (spacing - demo.dt).abs() > DT_TOLERANCE * demo.dt {
                out.push(Violation::IrregularSpacing { index: i, spacing });
            }
        }
    }
    out
}

/// Linear Gaussian dynamics of one phase:
/// `s_{t+1} ~ N(A s_t + B a_t, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl PhaseDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m || b.nrows() != m || sigma.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "A is {:?}, B is {:?}, Sigma is {:?}",
                a.shape(),
                b.shape(),
                sigma.shape()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::Dimension("B needs at least the bias column".into()));
        }
        let finite = |x: &DMatrix<f64>| x.iter().all(|v| v.is_finite());
        if !(finite(&a) && finite(&b) && finite(&sigma)) {
            return Err(Error::Validation("non-finite dynamics parameter".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-9 * sigma.amax().max(1.0) {
            return Err(Error::Validation("Sigma is not symmetric".into()));
        }
        let min_eig = sigma.symmetric_eigenvalues().min();
        if min_eig < 0.5 * SIGMA_FLOOR {
            return Err(Error::Validation(format!(
                "Sigma has eigenvalue {min_eig:e} below the floor {SIGMA_FLOOR:e}"
            )));
        }
        Ok(PhaseDynamics { a, b, sigma })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn interaction_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A s + B a`.
    pub fn predict(&self, state: &DVector<f64>, interaction: &DVector<f64>) -> DVector<f64> {
        &self.a * state + &self.b * interaction
    }

    pub(crate) fn factor(&self) -> Option<GaussianFactor> {
        GaussianFactor::new(&self.sigma)
    }
}

/// Multi-class logistic weights. `initial` is `N x k` (row `j` scores the
/// first phase `j`); `transition[i]` is `N x k` with row `j` holding the
/// weights for moving from phase `i` to phase `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionWeights {
    initial: DMatrix<f64>,
    transition: Vec<DMatrix<f64>>,
}

impl TransitionWeights {
    pub fn new(initial: DMatrix<f64>, transition: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, k) = initial.shape();
        if n == 0 || k == 0 {
            return Err(Error::Dimension("empty weight matrix".into()));
        }
        if transition.len() != n || transition.iter().any(|w| w.shape() != (n, k)) {
            return Err(Error::Dimension(format!(
                "expected {n} transition blocks of shape ({n}, {k})"
            )));
        }
        let finite = initial.iter().chain(transition.iter().flat_map(|w| w.iter())).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite transition weight".into()));
        }
        Ok(TransitionWeights { initial, transition })
    }

    pub fn zeros(n_phases: usize, feature_dim: usize) -> Self {
        TransitionWeights {
            initial: DMatrix::zeros(n_phases, feature_dim),
            transition: vec![DMatrix::zeros(n_phases, feature_dim); n_phases],
        }
    }

    pub fn n_phases(&self) -> usize {
        self.initial.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.initial.ncols()
    }

    pub fn initial(&self) -> &DMatrix<f64> {
        &self.initial
    }

    /// Weights for transitions out of phase `i`.
    pub fn from_phase(&self, i: usize) -> &DMatrix<f64> {
        &self.transition[i]
    }

    pub fn transition(&self) -> &[DMatrix<f64>] {
        &self.transition
    }

    /// Relabels phases: new phase `k` is old phase `perm[k]`.
    pub(crate) fn permuted(&self, perm: &[usize]) -> Self {
        let n = perm.len();
        let k = self.feature_dim();
        let initial = DMatrix::from_fn(n, k, |r, c| self.initial[(perm[r], c)]);
        let transition = (0..n)
            .map(|i| {
                let old = &self.transition[perm[i]];
                DMatrix::from_fn(n, k, |r, c| old[(perm[r], c)])
            })
            .collect();
        TransitionWeights { initial, transition }
    }
}

/// The full model: per-phase dynamics, transition weights and the
/// transition feature function.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    dynamics: Vec<PhaseDynamics>,
    weights: TransitionWeights,
    feature_fn: FeatureFn,
    state_dim: usize,
    interaction_dim: usize,
}

impl HmmModel {
    pub fn new(dynamics: Vec<PhaseDynamics>, weights: TransitionWeights, feature_fn: FeatureFn) -> Result<Self> {
        let n = dynamics.len();
        if n == 0 {
            return Err(Error::Dimension("a model needs at least one phase".into()));
        }
        let m = dynamics[0].state_dim();
        let d = dynamics[0].interaction_dim();
        if dynamics.iter().any(|p| p.state_dim() != m || p.interaction_dim() != d) {
            return Err(Error::Dimension("phase dynamics have inconsistent shapes".into()));
        }
        if weights.n_phases() != n {
            return Err(Error::Dimension(format!(
                "weights describe {} phases, dynamics {n}",
                weights.n_phases()
            )));
        }
        feature_fn.check(m)?;
        if weights.feature_dim() != feature_fn.dim(m, d) {
            return Err(Error::Dimension(format!(
                "weights have feature dimension {}, feature function produces {}",
                weights.feature_dim(),
                feature_fn.dim(m, d)
            )));
        }
        Ok(HmmModel {
            dynamics,
            weights,
            feature_fn,
            state_dim: m,
            interaction_dim: d,
        })
    }

    pub fn n_phases(&self) -> usize {
        self.dynamics.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn interaction_dim(&self) -> usize {
        self.interaction_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.feature_dim()
    }

    pub fn dynamics(&self) -> &[PhaseDynamics] {
        &self.dynamics
    }

    pub fn phase(&self, j: usize) -> &PhaseDynamics {
        &self.dynamics[j]
    }

    pub fn weights(&self) -> &TransitionWeights {
        &self.weights
    }

    pub fn feature_fn(&self) -> &FeatureFn {
        &self.feature_fn
    }

    pub(crate) fn with_parts(&self, dynamics: Vec<PhaseDynamics>, weights: TransitionWeights) -> Self {
        HmmModel {
            dynamics,
            weights,
            feature_fn: self.feature_fn.clone(),
            state_dim: self.state_dim,
            interaction_dim: self.interaction_dim,
        }
    }

    /// Relabels phases: new phase `k` is old phase `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_phases();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Validation(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let dynamics = perm.iter().map(|&p| self.dynamics[p].clone()).collect();
        Ok(self.with_parts(dynamics, self.weights.permuted(perm)))
    }

    /// Checks that a demonstration has the dimensions this model expects.
    pub fn check_demo(&self, demo: &Demonstration) -> Result<()> {
        if demo.len() < 2 {
            return Err(Error::Validation(format!(
                "demonstration '{}' has {} samples, need at least 2",
                demo.label(),
                demo.len()
            )));
        }
        if demo.state_dim() != self.state_dim || demo.interaction_dim() != self.interaction_dim {
            return Err(Error::Dimension(format!(
                "demonstration '{}' has m = {}, d = {}; model expects m = {}, d = {}",
                demo.label(),
                demo.state_dim(),
                demo.interaction_dim(),
                self.state_dim,
                self.interaction_dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(n: usize, dt: f64) -> Demonstration {
        let points = (0..n)
            .map(|i| {
                TrajectoryPoint::new(
                    i as f64 * dt,
                    DVector::from_vec(vec![0.0, 0.0, 0.1 - 0.001 * i as f64]),
                    DVector::zeros(3),
                )
            })
            .collect();
        Demonstration::new(points, dt, "d")
    }

    #[test]
    fn well_formed_demo_has_no_violations() {
        assert!(validate_demo(&demo(100, 0.01)).is_empty());
    }

    #[test]
    fn nan_force_is_reported_with_index() {
        let mut d = demo(10, 0.01);
        d.points[4].wrench[2] = f64::NAN;
        assert_eq!(validate_demo(&d), vec![Violation::NonFinite { index: 4 }]);
    }

    #[test]
    fn single_sample_is_too_short() {
        assert_eq!(validate_demo(&demo(1, 0.01)), vec![Violation::TooShort { len: 1 }]);
    }

    #[test]
    fn irregular_and_reversed_time() {
        let mut d = demo(10, 0.01);
        d.points[3].t += 0.002;
        d.points[7].t = d.points[6].t;
        let v = validate_demo(&d);
        assert!(v.iter().any(|x| matches!(x, Violation::IrregularSpacing { index: 3, .. })));
        assert!(v.contains(&Violation::NonIncreasingTime { index: 7 }));
    }

    #[test]
    fn spacing_within_ten_percent_is_accepted() {
        let mut d = demo(10, 0.01);
        d.points[5].t += 0.0009;
        assert!(validate_demo(&d).is_empty());
    }

    #[test]
    fn dimension_change_is_reported() {
        let mut d = demo(5, 0.01);
        d.points[2].state = DVector::zeros(2);
        assert!(validate_demo(&d).contains(&Violation::DimensionChange { index: 2 }));
    }

    fn eye_dynamics(m: usize, d: usize) -> PhaseDynamics {
        PhaseDynamics::new(DMatrix::identity(m, m), DMatrix::zeros(m, d), DMatrix::identity(m, m)).unwrap()
    }

    #[test]
    fn inconsistent_model_is_rejected() {
        let w = TransitionWeights::zeros(2, 4);
        assert!(HmmModel::new(vec![eye_dynamics(3, 4), eye_dynamics(2, 4)], w.clone(), FeatureFn::Identity).is_err());
        assert!(HmmModel::new(vec![eye_dynamics(3, 4)], w.clone(), FeatureFn::Identity).is_err());
        assert!(HmmModel::new(vec![eye_dynamics(3, 5), eye_dynamics(3, 5)], w.clone(), FeatureFn::Identity).is_err());
        assert!(HmmModel::new(vec![eye_dynamics(3, 4), eye_dynamics(3, 4)], w, FeatureFn::Identity).is_ok());
    }

    #[test]
    fn singular_sigma_is_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(PhaseDynamics::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), s).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(PhaseDynamics::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), asym).is_err());
    }

    #[test]
    fn permutation_must_be_valid() {
        let m = HmmModel::new(
            vec![eye_dynamics(1, 2), eye_dynamics(1, 2)],
            TransitionWeights::zeros(2, 2),
            FeatureFn::Identity,
        )
        .unwrap();
        assert!(m.permuted(&[0, 0]).is_err());
        assert!(m.permuted(&[1, 0]).is_ok());
    }
}
