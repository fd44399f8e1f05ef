use nalgebra::DVector;

use super::controller::{impedance_step, PhasePrimitive};
use super::generate::Noise;
use super::world::ContactWorld;
use crate::error::{Error, Result};
use crate::feature::feature;
use crate::inference::{filter_init, filter_step, initial_distribution, ForwardState};
use crate::linalg::argmax;
use crate::types::HmmModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Seconds the last phase must persist before the run ends.
    pub dwell: f64,
    /// Seed of the sensor noise.
    pub seed: u64,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        ReproduceConfig {
            dt: 0.01,
            max_steps: 3000,
            dwell: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: f64,
    pub x_star: DVector<f64>,
    pub x: DVector<f64>,
    pub wrench: DVector<f64>,
    /// Filtered phase after observing this step.
    pub phase: usize,
    /// Primitive that drove this step.
    pub primitive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionTrace {
    pub steps: Vec<TraceStep>,
}

impl ReproductionTrace {
    /// Filtered phases with consecutive repeats removed.
    pub fn phase_sequence(&self) -> Vec<usize> {
        let mut seq: Vec<usize> = Vec::new();
        for s in &self.steps {
            if seq.last() != Some(&s.phase) {
                seq.push(s.phase);
            }
        }
        seq
    }

    /// `(t, new phase)` at every change of the filtered phase.
    pub fn switch_times(&self) -> Vec<(f64, usize)> {
        self.steps
            .windows(2)
            .filter(|w| w[0].phase != w[1].phase)
            .map(|w| (w[1].t, w[1].phase))
            .collect()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.steps.last().expect("non-empty trace").x
    }
}

/// Closed-loop execution: each step runs the primitive of the current
/// filtered phase, then feeds the noisy observation into the forward
/// filter. Stops after `max_steps` or once the last phase has held for
/// `dwell` seconds.
pub fn reproduce(
    model: &HmmModel,
    primitives: &[PhasePrimitive],
    world: &ContactWorld,
    start: &DVector<f64>,
    config: &ReproduceConfig,
) -> Result<ReproductionTrace> {
    world.validate()?;
    let n = model.n_phases();
    if primitives.len() != n {
        return Err(Error::Validation(format!("{} primitives for {n} phases", primitives.len())));
    }
    let m = model.state_dim();
    if start.len() != m || primitives.iter().any(|p| p.dim() != m) {
        return Err(Error::Dimension(format!("start and primitives must have length {m}")));
    }
    if model.interaction_dim() != m + 1 {
        return Err(Error::Dimension(format!(
            "model interaction dimension {} does not match a world wrench of length {m}",
            model.interaction_dim()
        )));
    }
    if !(config.dt > 0.0) || config.max_steps == 0 {
        return Err(Error::Config("dt must be positive and max_steps at least 1".into()));
    }
    let mut noise = Noise::new(world, config.seed);
    let settled = world.settle(start, start, primitives[0].stiffness())?;
    let mut x = settled.x;
    let mut x_star = start.clone();
    let mut obs_s = noise.position(&x);
    let mut obs_a = feature(&noise.wrench(&settled.wrench))?;
    let phi = model.feature_fn().eval(&obs_s, &obs_a);
    let mut phase = argmax(initial_distribution(model.weights(), &phi).iter().copied());

    let mut filter: Option<ForwardState> = None;
    let mut steps = Vec::new();
    let mut dwell_steps = 0usize;
    for k in 0..config.max_steps {
        let used = phase;
        let out = impedance_step(&x, &x_star, &primitives[used], world, config.dt)?;
        let next_s = noise.position(&out.x);
        let next_a = feature(&noise.wrench(&out.wrench))?;
        let state = match &filter {
            None => filter_init(model, &obs_s, &obs_a, &next_s)?,
            Some(f) => filter_step(f, model, &obs_s, &obs_a, &next_s)?,
        };
        phase = state.phase_estimate;
        filter = Some(state);
        steps.push(TraceStep {
            t: (k + 1) as f64 * config.dt,
            x_star: out.x_star.clone(),
            x: out.x.clone(),
            wrench: out.wrench,
            phase,
            primitive: used,
        });
        x = out.x;
        x_star = out.x_star;
        obs_s = next_s;
        obs_a = next_a;
        if phase == n - 1 {
            dwell_steps += 1;
            if dwell_steps as f64 * config.dt >= config.dwell - 1e-9 {
                break;
            }
        } else {
            dwell_steps = 0;
        }
    }
    Ok(ReproductionTrace { steps })
}
