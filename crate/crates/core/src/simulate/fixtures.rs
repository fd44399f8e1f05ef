//! Ready-made worlds, scripts and models for synthetic experiments.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::controller::PrimitiveConfig;
use super::generate::{generate_demo, LabeledDemo, ScriptSegment};
use super::world::{ContactWorld, Scenario};
use crate::error::Result;
use crate::feature::FeatureFn;
use crate::types::{HmmModel, PhaseDynamics, TransitionWeights};

pub const DT: f64 = 0.01;

/// Valley with stiff 45 degree plates, light sensor noise and hand
/// jitter.
pub fn valley_world() -> ContactWorld {
    let mut w = ContactWorld::new(Scenario::Valley);
    w.stiffness_env = 1e5;
    w.noise_pos = 1e-5;
    w.noise_force = 0.1;
    w.tremor = 1e-4;
    w
}

/// [`valley_world`] with `noise_pos` metres of position sensor noise and
/// `tremor` metres of hand jitter.
pub fn noisy_valley_world(noise_pos: f64, tremor: f64) -> ContactWorld {
    let mut w = valley_world();
    w.noise_pos = noise_pos;
    w.tremor = tremor;
    w
}

const VALLEY_SPEED: f64 = 0.02;
const VALLEY_HEIGHT: f64 = 0.08;
// seconds the demonstrator keeps pressing after reaching the valley line
const REACTION: f64 = 1.0;
const STEER_GAIN: f64 = 2.0;
const STEER_PUSH: f64 = 0.01;

/// Start pose and script for a valley demonstration starting 4 cm to the
/// left (`side < 0`) or right of the valley line: pressing straight down
/// lets the plate funnel the tool into the valley, then it moves along
/// the valley floor.
pub fn valley_script(side: f64) -> (DVector<f64>, Vec<ScriptSegment>) {
    valley_script_from(side, 0.04)
}

/// Like [`valley_script`] but starting `offset` metres from the valley
/// line, 8 cm up.
pub fn valley_script_from(side: f64, offset: f64) -> (DVector<f64>, Vec<ScriptSegment>) {
    let start = DVector::from_vec(vec![side.signum() * offset, 0.0, VALLEY_HEIGHT]);
    let script = vec![
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, 0.0, -VALLEY_SPEED]), 20.0)
            .until(2)
            .with_reaction(REACTION),
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, VALLEY_SPEED, 0.0]), 3.0),
    ];
    (start, script)
}

/// Valley demonstration in which the slide is steered: once on a plate,
/// the demonstrator presses down gently and homes in on the valley line
/// at a rate proportional to the remaining distance, the same way from
/// either side.
pub fn valley_steered_script(side: f64) -> (DVector<f64>, Vec<ScriptSegment>) {
    let start = DVector::from_vec(vec![side.signum() * 0.04, 0.0, VALLEY_HEIGHT]);
    let line = DVector::zeros(3);
    let gain = DVector::from_vec(vec![STEER_GAIN, 0.0, STEER_GAIN]);
    let script = vec![
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, 0.0, -VALLEY_SPEED]), 10.0).until(1),
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, 0.0, -STEER_PUSH]), 10.0)
            .steering(line, gain)
            .until(2)
            .with_reaction(REACTION),
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, VALLEY_SPEED, 0.0]), 3.0),
    ];
    (start, script)
}

/// One valley demonstration per entry of `sides`, seeded `seed`,
/// `seed + 1`, ...
pub fn valley_demos(world: &ContactWorld, sides: &[f64], seed: u64) -> Result<Vec<LabeledDemo>> {
    demos_from(world, sides.iter().map(|&s| valley_script(s)), seed)
}

/// Steered demonstrations from the left and the right plate.
pub fn valley_steered_demos(world: &ContactWorld, seed: u64) -> Result<Vec<LabeledDemo>> {
    demos_from(world, [-1.0, 1.0].into_iter().map(valley_steered_script), seed)
}

fn demos_from(
    world: &ContactWorld,
    scripts: impl Iterator<Item = (DVector<f64>, Vec<ScriptSegment>)>,
    seed: u64,
) -> Result<Vec<LabeledDemo>> {
    scripts
        .enumerate()
        .map(|(i, (start, script))| generate_demo(world, &start, &script, DT, seed + i as u64, &PrimitiveConfig::default()))
        .collect()
}

pub fn hose_world() -> ContactWorld {
    let mut w = ContactWorld::new(Scenario::HoseCoupler);
    w.noise_pos = 1e-4;
    w.noise_force = 0.05;
    w
}

/// Pose `(x, y, z, rx, ry, rz)` script: down onto the coupler face, then
/// turn about z while pressing lightly.
pub fn hose_script() -> (DVector<f64>, Vec<ScriptSegment>) {
    let start = DVector::from_vec(vec![0.0, 0.0, 0.06, 0.0, 0.0, 0.0]);
    let script = vec![
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, 0.0, -0.02, 0.0, 0.0, 0.0]), 3.0),
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, 0.0, -0.002, 0.0, 0.0, 0.17]), 3.0),
    ];
    (start, script)
}

/// Wrench centres of the three regimes used by [`three_phase_model`].
pub fn regime_centres() -> [[f64; 2]; 3] {
    [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]
}

/// A known three-phase model with two-dimensional state and wrench:
/// contracting dynamics with distinct fixed points, and transitions that
/// pick the regime whose wrench centre is nearest, with a sticky bias.
pub fn three_phase_model() -> HmmModel {
    let a = [
        [0.9, 0.05, -0.05, 0.9],
        [0.8, -0.1, 0.1, 0.85],
        [0.95, 0.0, 0.05, 0.7],
    ];
    let b = [
        [0.02, 0.0, 0.1, 0.0, 0.02, -0.1],
        [0.01, 0.03, -0.2, -0.02, 0.0, 0.1],
        [0.0, -0.01, 0.05, 0.03, 0.01, 0.2],
    ];
    let dynamics = (0..3)
        .map(|j| {
            PhaseDynamics::new(
                DMatrix::from_row_slice(2, 2, &a[j]),
                DMatrix::from_row_slice(2, 3, &b[j]),
                DMatrix::from_diagonal_element(2, 2, 1e-4),
            )
            .expect("valid dynamics")
        })
        .collect();
    let beta = 2.0;
    let centres = regime_centres();
    let logits = DMatrix::from_fn(3, 3, |j, c| {
        let ctr = centres[j];
        if c < 2 {
            beta * ctr[c]
        } else {
            -beta * (ctr[0] * ctr[0] + ctr[1] * ctr[1]) / 2.0
        }
    });
    let transition = (0..3)
        .map(|i| {
            let mut w = logits.clone();
            w[(i, 2)] += 2.0;
            w
        })
        .collect();
    let weights = TransitionWeights::new(logits, transition).expect("valid weights");
    HmmModel::new(dynamics, weights, FeatureFn::Identity).expect("valid model")
}

/// Wrench sequence that stays `lengths[k]` samples in regime `k`, with
/// Gaussian scatter around each centre.
pub fn regime_wrenches(lengths: &[usize], seed: u64) -> Vec<DVector<f64>> {
    let centres = regime_centres();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid scale");
    lengths
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k % centres.len(), n))
        .map(|k| DVector::from_fn(2, |i, _| centres[k][i] + noise.sample(&mut rng)))
        .collect()
}
