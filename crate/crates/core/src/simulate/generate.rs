use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::controller::{impedance_step, PrimitiveConfig};
use super::world::ContactWorld;
use crate::error::{Error, Result};
use crate::inference::{initial_distribution, transition_matrix};
use crate::types::{Demonstration, HmmModel, TrajectoryPoint};

/// One scripted stretch of a synthetic demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptSegment {
    pub v_dir: DVector<f64>,
    pub speed: f64,
    /// Seconds; an upper bound when `until_regime` is set.
    pub duration: f64,
    /// Ends the segment early once this contact regime is reached, the way
    /// a demonstrator reacts to feeling a contact.
    pub until_regime: Option<usize>,
    /// Seconds the segment keeps running after `until_regime` is reached.
    pub reaction: f64,
    /// Steering toward a target: the setpoint also moves by
    /// `gain * (target - x) * dt` (elementwise) every step.
    pub steer: Option<Steer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Steer {
    pub target: DVector<f64>,
    /// Per-component gain in 1/s; zero leaves a component alone.
    pub gain: DVector<f64>,
}

impl ScriptSegment {
    pub fn new(v_dir: DVector<f64>, speed: f64, duration: f64) -> Self {
        ScriptSegment {
            v_dir,
            speed,
            duration,
            until_regime: None,
            reaction: 0.0,
            steer: None,
        }
    }

    /// Segment following the velocity `v` (direction and speed together).
    pub fn from_velocity(v: DVector<f64>, duration: f64) -> Self {
        let speed = v.norm();
        Self::new(v / speed, speed, duration)
    }

    pub fn until(mut self, regime: usize) -> Self {
        self.until_regime = Some(regime);
        self
    }

    pub fn with_reaction(mut self, seconds: f64) -> Self {
        self.reaction = seconds;
        self
    }

    pub fn steering(mut self, target: DVector<f64>, gain: DVector<f64>) -> Self {
        self.steer = Some(Steer { target, gain });
        self
    }
}

/// A demonstration with the ground-truth phase of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDemo {
    pub demo: Demonstration,
    pub labels: Vec<usize>,
}

pub(crate) struct Noise {
    rng: ChaCha8Rng,
    pos: Option<Normal<f64>>,
    force: Option<Normal<f64>>,
    tremor: Option<Normal<f64>>,
}

impl Noise {
    pub fn new(world: &ContactWorld, seed: u64) -> Self {
        let dist = |s: f64| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated noise level"));
        Noise {
            rng: ChaCha8Rng::seed_from_u64(seed),
            pos: dist(world.noise_pos),
            force: dist(world.noise_force),
            tremor: dist(world.tremor),
        }
    }

    fn perturb(rng: &mut ChaCha8Rng, dist: &Option<Normal<f64>>, v: &DVector<f64>) -> DVector<f64> {
        match dist {
            Some(d) => v.map(|x| x + d.sample(rng)),
            None => v.clone(),
        }
    }

    pub fn position(&mut self, x: &DVector<f64>) -> DVector<f64> {
        Self::perturb(&mut self.rng, &self.pos, x)
    }

    pub fn wrench(&mut self, w: &DVector<f64>) -> DVector<f64> {
        Self::perturb(&mut self.rng, &self.force, w)
    }

    pub fn setpoint(&mut self, x_star: &DVector<f64>) -> DVector<f64> {
        Self::perturb(&mut self.rng, &self.tremor, x_star)
    }
}

/// Runs the script through the impedance controller at period `dt` and
/// records noisy samples. Each sample is labelled with the number of
/// surfaces in contact, so labels follow the contact state rather than
/// the script.
pub fn generate_demo(
    world: &ContactWorld,
    start: &DVector<f64>,
    script: &[ScriptSegment],
    dt: f64,
    seed: u64,
    primitive_config: &PrimitiveConfig,
) -> Result<LabeledDemo> {
    world.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Validation(format!("time step must be positive, got {dt}")));
    }
    if script.is_empty() {
        return Err(Error::Validation("empty script".into()));
    }
    let mut noise = Noise::new(world, seed);
    let mut x = world.settle(start, start, &primitive_config.stiffness(start.len()))?.x;
    let mut x_star = start.clone();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for seg in script {
        if !(seg.duration > 0.0) {
            return Err(Error::Validation(format!("segment duration must be positive, got {}", seg.duration)));
        }
        let prim = primitive_config.primitive(seg.v_dir.clone(), seg.speed)?;
        let steps = (seg.duration / dt).round() as usize;
        let mut left: Option<usize> = None;
        for _ in 0..steps {
            // hand jitter accumulates in the setpoint like a random walk
            let mut jittered = noise.setpoint(&x_star);
            if let Some(steer) = &seg.steer {
                jittered += (&steer.target - &x).component_mul(&steer.gain) * dt;
            }
            let out = impedance_step(&x, &jittered, &prim, world, dt)?;
            x = out.x;
            x_star = out.x_star;
            let t = points.len() as f64 * dt;
            points.push(TrajectoryPoint::new(t, noise.position(&x), noise.wrench(&out.wrench)));
            labels.push(out.regime);
            if left.is_none() && seg.until_regime == Some(out.regime) {
                left = Some((seg.reaction.max(0.0) / dt).round() as usize);
            }
            match left.as_mut() {
                Some(0) => break,
                Some(k) => *k -= 1,
                None => {}
            }
        }
    }
    let demo = Demonstration::validated(points, dt, format!("{}-{seed}", world.scenario.id()))?;
    Ok(LabeledDemo { demo, labels })
}

/// Samples phases and states from `model` along a given wrench sequence,
/// starting in state `s0`. Labels cover every sample; the last repeats
/// the phase of the final step.
pub fn sample_from_model(
    model: &HmmModel,
    s0: &DVector<f64>,
    wrenches: &[DVector<f64>],
    dt: f64,
    seed: u64,
) -> Result<LabeledDemo> {
    if wrenches.len() < 2 {
        return Err(Error::Validation("need at least two wrench samples".into()));
    }
    let m = model.state_dim();
    if s0.len() != m || wrenches.iter().any(|w| w.len() + 1 != model.interaction_dim()) {
        return Err(Error::Dimension("start state or wrenches do not match the model".into()));
    }
    let chols = model
        .dynamics()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            nalgebra::Cholesky::new(p.sigma().clone())
                .map(|c| c.l())
                .ok_or(Error::NotPositiveDefinite { phase: j })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categorical = |rng: &mut ChaCha8Rng, p: &[f64]| -> usize {
        let u: f64 = rand::Rng::random(rng);
        let mut acc = 0.0;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                return j;
            }
        }
        p.len() - 1
    };

    let mut s = s0.clone();
    let mut phase = 0;
    let mut points = Vec::with_capacity(wrenches.len());
    let mut labels = Vec::with_capacity(wrenches.len());
    for (t, w) in wrenches.iter().enumerate() {
        points.push(TrajectoryPoint::new(t as f64 * dt, s.clone(), w.clone()));
        if t + 1 == wrenches.len() {
            labels.push(phase);
            break;
        }
        let a = crate::feature::feature(w)?;
        let phi = model.feature_fn().eval(&s, &a);
        phase = if t == 0 {
            categorical(&mut rng, initial_distribution(model.weights(), &phi).as_slice())
        } else {
            let p = transition_matrix(model.weights(), &phi);
            let row: Vec<f64> = p.row(phase).iter().copied().collect();
            categorical(&mut rng, &row)
        };
        labels.push(phase);
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        s = model.phase(phase).predict(&s, a.as_vector()) + &chols[phase] * z;
    }
    let demo = Demonstration::validated(points, dt, format!("sampled-{seed}"))?;
    Ok(LabeledDemo { demo, labels })
}
