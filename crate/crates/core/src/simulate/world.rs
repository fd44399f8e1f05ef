use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Two inclined plates meeting in a valley line along the y axis.
    Valley,
    /// A flat coupler face that resists rotation about z once touched.
    HoseCoupler,
    FreeSpace,
}

impl Scenario {
    pub fn id(&self) -> &'static str {
        match self {
            Scenario::Valley => "valley",
            Scenario::HoseCoupler => "hose",
            Scenario::FreeSpace => "free",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "valley" => Some(Scenario::Valley),
            "hose" => Some(Scenario::HoseCoupler),
            "free" => Some(Scenario::FreeSpace),
            _ => None,
        }
    }

    /// Smallest state dimension the scenario can act on.
    pub fn min_state_dim(&self) -> usize {
        match self {
            Scenario::Valley => 3,
            Scenario::HoseCoupler => 6,
            Scenario::FreeSpace => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Inclination of each valley plate from the horizontal.
    pub plate_angle_deg: f64,
    /// The valley line runs along y through `(apex_x, *, apex_z)`.
    pub apex_x: f64,
    pub apex_z: f64,
    /// Height of the coupler face.
    pub coupler_height: f64,
    /// Lever arm turning face friction into a torque about z.
    pub coupler_radius: f64,
    /// Torque needed to turn the coupler past its detent, N m.
    pub detent_torque: f64,
    /// Rotation about z at which the coupler locks.
    pub interlock_deg: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            plate_angle_deg: 45.0,
            apex_x: 0.0,
            apex_z: 0.0,
            coupler_height: 0.0,
            coupler_radius: 0.03,
            detent_torque: 0.3,
            interlock_deg: 30.0,
        }
    }
}

/// Quasi-static penalty-contact world.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactWorld {
    pub scenario: Scenario,
    pub geometry: Geometry,
    /// Penalty stiffness of every surface, N/m.
    pub stiffness_env: f64,
    pub friction_mu: f64,
    /// Standard deviation of measured wrench noise.
    pub noise_force: f64,
    /// Standard deviation of measured position noise.
    pub noise_pos: f64,
    /// Per-step standard deviation of the demonstrator's hand jitter. It
    /// accumulates in the setpoint while generating demonstrations, and
    /// contact absorbs it along constrained directions.
    pub tremor: f64,
    /// Penetration beyond this depth is reported as an instability.
    pub max_penetration: f64,
}

impl ContactWorld {
    pub fn new(scenario: Scenario) -> Self {
        ContactWorld {
            scenario,
            geometry: Geometry::default(),
            stiffness_env: 1e4,
            friction_mu: 0.2,
            noise_force: 0.0,
            noise_pos: 0.0,
            tremor: 0.0,
            max_penetration: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.plate_angle_deg > 0.0 && g.plate_angle_deg < 90.0) {
            return Err(Error::Config(format!(
                "plate angle {} must lie strictly between 0 and 90 degrees",
                g.plate_angle_deg
            )));
        }
        let nonneg = [
            ("stiffness_env", self.stiffness_env),
            ("friction_mu", self.friction_mu),
            ("noise_force", self.noise_force),
            ("noise_pos", self.noise_pos),
            ("tremor", self.tremor),
            ("coupler_radius", g.coupler_radius),
            ("detent_torque", g.detent_torque),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.stiffness_env > 0.0) {
            return Err(Error::Config("stiffness_env must be positive".into()));
        }
        if !(self.max_penetration > 0.0) {
            return Err(Error::Config("max_penetration must be positive".into()));
        }
        if !(g.interlock_deg > 0.0 && g.interlock_deg.is_finite()) {
            return Err(Error::Config("interlock angle must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn planes(&self) -> Vec<Plane> {
        let g = &self.geometry;
        match self.scenario {
            Scenario::Valley => {
                let t = g.plate_angle_deg.to_radians().tan();
                let apex = Vector3::new(g.apex_x, 0.0, g.apex_z);
                [t, -t]
                    .into_iter()
                    .map(|s| {
                        let normal = Vector3::new(s, 0.0, 1.0).normalize();
                        Plane {
                            normal,
                            offset: normal.dot(&apex),
                        }
                    })
                    .collect()
            }
            Scenario::HoseCoupler => vec![Plane {
                normal: Vector3::z(),
                offset: g.coupler_height,
            }],
            Scenario::FreeSpace => Vec::new(),
        }
    }

    /// Quasi-static equilibrium of a robot held by the diagonal stiffness
    /// `stiffness` at `x_star`, starting from the previous pose `x_prev`.
    pub fn settle(&self, x_star: &DVector<f64>, x_prev: &DVector<f64>, stiffness: &DVector<f64>) -> Result<Settled> {
        let m = x_star.len();
        if m < self.scenario.min_state_dim() || x_prev.len() != m || stiffness.len() != m {
            return Err(Error::Dimension(format!(
                "{} world needs matching state vectors of length >= {}",
                self.scenario.id(),
                self.scenario.min_state_dim()
            )));
        }
        let mut x = x_star.clone();
        let planes = self.planes();
        let mut regime = 0;
        if !planes.is_empty() {
            let k = Vector3::new(stiffness[0], stiffness[1], stiffness[2]);
            let p_star = Vector3::new(x_star[0], x_star[1], x_star[2]);
            let p_prev = Vector3::new(x_prev[0], x_prev[1], x_prev[2]);
            let sol = solve_translation(&planes, &k, &p_star, &p_prev, self.stiffness_env, self.friction_mu);
            let depth = sol.active.iter().map(|&i| planes[i].penetration(&sol.p)).fold(0.0, f64::max);
            if depth > self.max_penetration {
                return Err(Error::Instability {
                    penetration: depth,
                    limit: self.max_penetration,
                });
            }
            x.rows_mut(0, 3).copy_from(&sol.p);
            regime = sol.active.len();
            if self.scenario == Scenario::HoseCoupler && regime > 0 {
                let g = &self.geometry;
                let resist = g.detent_torque + self.friction_mu * sol.normal_force * g.coupler_radius;
                x[5] = coupler_angle(x_star[5], x_prev[5], stiffness[5], resist, g.interlock_deg.to_radians());
            }
        }
        let wrench = (&x - x_star).component_mul(stiffness);
        Ok(Settled { x, wrench, regime })
    }
}

/// Equilibrium pose of one step: `wrench` is the contact wrench acting on
/// the robot, which balances the controller spring.
#[derive(Debug, Clone, PartialEq)]
pub struct Settled {
    pub x: DVector<f64>,
    pub wrench: DVector<f64>,
    /// Number of surfaces in contact.
    pub regime: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Plane {
    pub normal: Vector3<f64>,
    /// Free side is `normal . p >= offset`.
    pub offset: f64,
}

impl Plane {
    pub fn penetration(&self, p: &Vector3<f64>) -> f64 {
        self.offset - self.normal.dot(p)
    }
}

// penetration below this is rounding noise, not contact
const CONTACT_EPS: f64 = 1e-12;

pub(crate) struct Translation {
    pub p: Vector3<f64>,
    pub active: Vec<usize>,
    pub normal_force: f64,
}

fn system(planes: &[Plane], active: &[usize], k: &Vector3<f64>, p_star: &Vector3<f64>, k_env: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let mut m = Matrix3::from_diagonal(k);
    let mut rhs = k.component_mul(p_star);
    for &i in active {
        let n = planes[i].normal;
        m += k_env * n * n.transpose();
        rhs += k_env * planes[i].offset * n;
    }
    (m, rhs)
}

fn solve3(m: &Matrix3<f64>, rhs: &Vector3<f64>) -> Vector3<f64> {
    m.lu().solve(rhs).expect("stiffness plus penalty terms is positive definite")
}

fn normal_force(planes: &[Plane], active: &[usize], p: &Vector3<f64>, k_env: f64) -> f64 {
    active.iter().map(|&i| k_env * planes[i].penetration(p).max(0.0)).sum()
}

/// Penalty contact against `planes` with Coulomb friction in the tangent
/// space of the active set.
pub(crate) fn solve_translation(
    planes: &[Plane],
    k: &Vector3<f64>,
    p_star: &Vector3<f64>,
    p_prev: &Vector3<f64>,
    k_env: f64,
    mu: f64,
) -> Translation {
    let penetrating =
        |p: &Vector3<f64>| -> Vec<usize> { (0..planes.len()).filter(|&i| planes[i].penetration(p) > CONTACT_EPS).collect() };
    let mut active = penetrating(p_star);
    let mut p = *p_star;
    for _ in 0..(2 * planes.len() + 2) {
        let (m, rhs) = system(planes, &active, k, p_star, k_env);
        p = solve3(&m, &rhs);
        let next = penetrating(&p);
        if next == active {
            break;
        }
        active = next;
    }
    if active.is_empty() || mu == 0.0 {
        let normal_force = normal_force(planes, &active, &p, k_env);
        return Translation { p, active, normal_force };
    }

    let (m, rhs) = system(planes, &active, k, p_star, k_env);
    let normals = DMatrix::from_fn(3, active.len(), |r, c| planes[active[c]].normal[r]);
    let gram = (normals.transpose() * &normals).try_inverse().expect("independent contact normals");
    let proj_n = &normals * gram * normals.transpose();
    let proj_t = Matrix3::identity() - Matrix3::from_fn(|r, c| proj_n[(r, c)]);

    // sticking: tangential position frozen, normal position balanced
    let base = proj_t * p_prev;
    let mdyn = DMatrix::from_fn(3, 3, |r, c| m[(r, c)]);
    let lhs = normals.transpose() * &mdyn * &normals;
    let resid = rhs - m * base;
    let q_rhs = normals.transpose() * DVector::from_column_slice(resid.as_slice());
    if let Some(q) = lhs.lu().solve(&q_rhs) {
        let nq = &normals * q;
        let p_stick = base + Vector3::new(nq[0], nq[1], nq[2]);
        let still_active = active.iter().all(|&i| planes[i].penetration(&p_stick) > 0.0);
        let tangential = proj_t * k.component_mul(&(p_star - p_stick));
        let n_stick = normal_force(planes, &active, &p_stick, k_env);
        if still_active && tangential.norm() <= mu * n_stick {
            return Translation {
                p: p_stick,
                active,
                normal_force: n_stick,
            };
        }
        // isotropic spring: normal and tangential balance decouple, so the
        // slide is a return onto the friction cone along the trial force
        if still_active && k.max() - k.min() <= 1e-12 * k.max() {
            let slip = tangential * ((1.0 - mu * n_stick / tangential.norm()) / k[0]);
            return Translation {
                p: p_stick + slip,
                active,
                normal_force: n_stick,
            };
        }
    }

    // sliding: friction opposes the tangential motion
    for _ in 0..100 {
        let motion = proj_t * (p - p_prev);
        let norm = motion.norm();
        if norm == 0.0 {
            break;
        }
        let friction = mu * normal_force(planes, &active, &p, k_env) * motion / norm;
        let next = solve3(&m, &(rhs - friction));
        let done = (next - p).norm() <= 1e-15 * (1.0 + p.norm());
        p = next;
        if done {
            break;
        }
    }
    let normal_force = normal_force(planes, &active, &p, k_env);
    Translation { p, active, normal_force }
}

/// Rotation about z of an engaged coupler: it sticks until the spring
/// torque exceeds `resist`, then lags the command by `resist / k` and
/// stops at `limit`.
fn coupler_angle(theta_star: f64, theta_prev: f64, k: f64, resist: f64, limit: f64) -> f64 {
    let drive = k * (theta_star - theta_prev);
    let theta = if drive.abs() <= resist || k == 0.0 {
        theta_prev
    } else {
        theta_star - drive.signum() * resist / k
    };
    theta.clamp(-limit, limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3(v: f64) -> DVector<f64> {
        DVector::from_element(3, v)
    }

    #[test]
    fn free_space_tracks_exactly() {
        let w = ContactWorld::new(Scenario::FreeSpace);
        let xs = DVector::from_vec(vec![0.3, -0.2, 1.0]);
        let s = w.settle(&xs, &DVector::zeros(3), &k3(500.0)).unwrap();
        assert_eq!(s.x, xs);
        assert_eq!(s.wrench.amax(), 0.0);
        assert_eq!(s.regime, 0);
    }

    #[test]
    fn frictionless_plate_balance() {
        // spring pulls straight down onto the left plate; the analytic
        // equilibrium balances k (x* - x) against k_env * depth * n
        let mut w = ContactWorld::new(Scenario::Valley);
        w.friction_mu = 0.0;
        let k = 500.0;
        let xs = DVector::from_vec(vec![-0.04, 0.0, 0.03]);
        let s = w.settle(&xs, &xs, &k3(k)).unwrap();
        let n = Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        let ps = Vector3::new(-0.04, 0.0, 0.03);
        // depth of x* below the plate, scaled by the series stiffness
        let depth_star = -n.dot(&ps);
        let depth = depth_star * k / (k + w.stiffness_env);
        let expect = ps + n * (depth_star - depth);
        let p = Vector3::new(s.x[0], s.x[1], s.x[2]);
        assert!((p - expect).norm() < 1e-12);
        let f = Vector3::new(s.wrench[0], s.wrench[1], s.wrench[2]);
        assert!((f - n * w.stiffness_env * depth).norm() < 1e-9);
        assert_eq!(s.regime, 1);
    }

    #[test]
    fn friction_holds_shallow_drive() {
        let w = ContactWorld::new(Scenario::HoseCoupler);
        let prev = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // small sideways pull while pressed into the face
        let xs = DVector::from_vec(vec![0.001, 0.0, -0.02, 0.0, 0.0, 0.0]);
        let k = DVector::from_vec(vec![500.0, 500.0, 500.0, 10.0, 10.0, 10.0]);
        let s = w.settle(&xs, &prev, &k).unwrap();
        assert_eq!(s.x[0], 0.0);
        assert!(s.wrench[0] < 0.0);
    }

    #[test]
    fn sliding_friction_lags_command() {
        let w = ContactWorld::new(Scenario::HoseCoupler);
        let prev = DVector::zeros(6);
        let xs = DVector::from_vec(vec![0.05, 0.0, -0.02, 0.0, 0.0, 0.0]);
        let k = DVector::from_vec(vec![500.0, 500.0, 500.0, 10.0, 10.0, 10.0]);
        let s = w.settle(&xs, &prev, &k).unwrap();
        let normal = s.wrench[2];
        assert!(normal > 0.0);
        // friction equals mu N and opposes the motion
        assert!((s.wrench[0] + w.friction_mu * normal).abs() < 1e-9);
        assert!(s.x[0] > 0.0 && s.x[0] < 0.05);
    }

    #[test]
    fn both_plates_at_the_valley_floor() {
        let w = ContactWorld::new(Scenario::Valley);
        let xs = DVector::from_vec(vec![0.0, 0.0, -0.05]);
        let s = w.settle(&xs, &DVector::from_vec(vec![0.0, 0.0, 0.0]), &k3(500.0)).unwrap();
        assert_eq!(s.regime, 2);
        assert!(s.x[0].abs() < 1e-12);
        assert!(s.wrench[2] > 0.0);
    }

    #[test]
    fn deep_penetration_is_unstable() {
        let w = ContactWorld::new(Scenario::Valley);
        let xs = DVector::from_vec(vec![0.0, 0.0, -5.0]);
        let err = w.settle(&xs, &xs, &k3(500.0)).unwrap_err();
        assert!(matches!(err, Error::Instability { .. }));
    }

    #[test]
    fn coupler_detent_and_interlock() {
        let limit = 30f64.to_radians();
        assert_eq!(coupler_angle(0.02, 0.0, 10.0, 0.3, limit), 0.0);
        assert!((coupler_angle(0.1, 0.0, 10.0, 0.3, limit) - 0.07).abs() < 1e-12);
        assert_eq!(coupler_angle(1.0, 0.4, 10.0, 0.3, limit), limit);
    }

    #[test]
    fn rejects_bad_angles() {
        let mut w = ContactWorld::new(Scenario::Valley);
        w.geometry.plate_angle_deg = 90.0;
        assert!(w.validate().is_err());
        w.geometry.plate_angle_deg = 45.0;
        w.noise_pos = -1.0;
        assert!(w.validate().is_err());
    }
}
