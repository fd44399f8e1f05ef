use nalgebra::DVector;

use super::world::{ContactWorld, Settled};
use crate::error::{Error, Result};

/// Stiffness and damping used for extracted and scripted primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveConfig {
    /// N/m, applied to the first three state components.
    pub translational_stiffness: f64,
    /// N m/rad, applied to any further components.
    pub rotational_stiffness: f64,
    /// Defaults to `2 sqrt(translational_stiffness)`.
    pub damping: Option<f64>,
    /// Phases with less posterior mass than this are flagged.
    pub min_mass: f64,
    /// Largest distance (m) the translational setpoint may lead the
    /// robot; `None` lets it run ahead without bound.
    pub max_lead: Option<f64>,
    /// Into-contact to along-motion ratio of extracted directions in
    /// phases that press on a surface; `None` keeps pure displacement.
    pub press: Option<f64>,
    /// Mean force magnitude (N) above which a phase counts as pressing.
    pub contact_force: f64,
}

impl Default for PrimitiveConfig {
    fn default() -> Self {
        PrimitiveConfig {
            translational_stiffness: 500.0,
            rotational_stiffness: 100.0,
            damping: None,
            min_mass: 10.0,
            max_lead: Some(0.01),
            press: Some(1.0),
            contact_force: 0.5,
        }
    }
}

impl PrimitiveConfig {
    pub fn stiffness(&self, m: usize) -> DVector<f64> {
        DVector::from_fn(m, |i, _| {
            if i < 3 {
                self.translational_stiffness
            } else {
                self.rotational_stiffness
            }
        })
    }

    pub fn damping(&self) -> f64 {
        self.damping.unwrap_or(2.0 * self.translational_stiffness.sqrt())
    }

    pub fn primitive(&self, v_dir: DVector<f64>, speed: f64) -> Result<PhasePrimitive> {
        let m = v_dir.len();
        Ok(PhasePrimitive::new(v_dir, speed, self.stiffness(m), self.damping())?.with_max_lead(self.max_lead))
    }
}

/// Impedance-control primitive: the setpoint moves along `v_dir` at
/// `speed` and the robot is held to it by a diagonal spring.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePrimitive {
    v_dir: DVector<f64>,
    speed: f64,
    stiffness: DVector<f64>,
    damping: f64,
    max_lead: Option<f64>,
    low_confidence: bool,
}

impl PhasePrimitive {
    pub fn new(v_dir: DVector<f64>, speed: f64, stiffness: DVector<f64>, damping: f64) -> Result<Self> {
        if v_dir.iter().any(|v| !v.is_finite()) || ((v_dir.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::Validation(format!("direction must be a unit vector, norm {}", v_dir.norm())));
        }
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::Validation(format!("speed must be finite and non-negative, got {speed}")));
        }
        if stiffness.len() != v_dir.len() || stiffness.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::Validation("stiffness must be a non-negative diagonal of matching length".into()));
        }
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::Validation("damping must be non-negative".into()));
        }
        Ok(PhasePrimitive {
            v_dir,
            speed,
            stiffness,
            damping,
            max_lead: None,
            low_confidence: false,
        })
    }

    /// Bounds how far the translational setpoint may lead the robot.
    pub fn with_max_lead(mut self, max_lead: Option<f64>) -> Self {
        self.max_lead = max_lead.filter(|d| d.is_finite() && *d >= 0.0);
        self
    }

    pub fn max_lead(&self) -> Option<f64> {
        self.max_lead
    }

    pub fn v_dir(&self) -> &DVector<f64> {
        &self.v_dir
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Diagonal of the stiffness matrix.
    pub fn stiffness(&self) -> &DVector<f64> {
        &self.stiffness
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn low_confidence(&self) -> bool {
        self.low_confidence
    }

    pub(crate) fn flagged(mut self, low_confidence: bool) -> Self {
        self.low_confidence = low_confidence;
        self
    }

    pub fn dim(&self) -> usize {
        self.v_dir.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x: DVector<f64>,
    pub wrench: DVector<f64>,
    pub x_star: DVector<f64>,
    pub regime: usize,
}

/// Advances the setpoint by `v_dir * speed * dt`, pulls its
/// translational part back to within `max_lead` of the robot, and settles
/// the robot against the world. The returned wrench is the measured
/// contact wrench, not the controller force.
pub fn impedance_step(
    x: &DVector<f64>,
    x_star: &DVector<f64>,
    primitive: &PhasePrimitive,
    world: &ContactWorld,
    dt: f64,
) -> Result<StepOutcome> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Validation(format!("time step must be positive, got {dt}")));
    }
    if x.len() != primitive.dim() || x_star.len() != primitive.dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, primitive expects {}",
            x.len(),
            primitive.dim()
        )));
    }
    let mut x_star_next = x_star + primitive.v_dir() * (primitive.speed() * dt);
    if let Some(max_lead) = primitive.max_lead() {
        let k = x.len().min(3);
        let lead = x_star_next.rows(0, k) - x.rows(0, k);
        let dist = lead.norm();
        if dist > max_lead {
            let pulled = x.rows(0, k) + lead * (max_lead / dist);
            x_star_next.rows_mut(0, k).copy_from(&pulled);
        }
    }
    let Settled { x, wrench, regime } = world.settle(&x_star_next, x, primitive.stiffness())?;
    Ok(StepOutcome {
        x,
        wrench,
        x_star: x_star_next,
        regime,
    })
}
