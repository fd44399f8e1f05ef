//! Run configuration: an optional TOML file overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use phaseseg_core::simulate::fixtures::{hose_world, valley_world};
use phaseseg_core::simulate::{ContactWorld, PrimitiveConfig, ReproduceConfig, Scenario};
use phaseseg_core::EmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    Valley,
    Hose,
    Free,
}

/// Which signal drives the phase transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Wrench,
    State,
}

/// Inclusive range of phase counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sweep {
    pub min: usize,
    pub max: usize,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once("..=")
            .or_else(|| s.split_once(".."))
            .ok_or_else(|| format!("expected MIN..MAX, got '{s}'"))?;
        let min: usize = a.trim().parse().map_err(|_| format!("bad lower bound in '{s}'"))?;
        let max: usize = b.trim().parse().map_err(|_| format!("bad upper bound in '{s}'"))?;
        if min == 0 || min > max {
            return Err(format!("sweep '{s}' must satisfy 1 <= MIN <= MAX"));
        }
        Ok(Sweep { min, max })
    }
}

impl<'de> Deserialize<'de> for Sweep {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Demonstration files (.csv or .jsonl).
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub demos: Vec<PathBuf>,
    #[arg(long, value_name = "N")]
    pub n_phases: Option<usize>,
    /// Range of phase counts for model selection, e.g. 1..6.
    #[arg(long, value_name = "MIN..MAX")]
    pub sweep: Option<Sweep>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub world: Option<WorldKind>,
    #[arg(long, value_enum)]
    pub feature: Option<FeatureMode>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Step size of the transition-weight gradient descent.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Count every dynamics parameter in the BIC penalty.
    #[arg(long)]
    pub full_bic: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    demos: Option<Vec<PathBuf>>,
    n_phases: Option<usize>,
    sweep: Option<Sweep>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    world: Option<WorldKind>,
    feature: Option<FeatureMode>,
    full_bic: Option<bool>,
    #[serde(default)]
    em: EmSection,
    #[serde(default)]
    world_params: WorldSection,
    #[serde(default)]
    primitive: PrimitiveSection,
    #[serde(default)]
    reproduce: ReproduceSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmSection {
    max_iters: Option<usize>,
    loglik_tol: Option<f64>,
    lr: Option<f64>,
    lr_iters: Option<usize>,
    ridge: Option<f64>,
    split_merge_rounds: Option<usize>,
    split_merge_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldSection {
    stiffness_env: Option<f64>,
    friction_mu: Option<f64>,
    noise_force: Option<f64>,
    noise_pos: Option<f64>,
    tremor: Option<f64>,
    max_penetration: Option<f64>,
    plate_angle_deg: Option<f64>,
    apex_x: Option<f64>,
    apex_z: Option<f64>,
    coupler_height: Option<f64>,
    coupler_radius: Option<f64>,
    detent_torque: Option<f64>,
    interlock_deg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveSection {
    translational_stiffness: Option<f64>,
    rotational_stiffness: Option<f64>,
    damping: Option<f64>,
    min_mass: Option<f64>,
    max_lead: Option<f64>,
    press: Option<f64>,
    contact_force: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReproduceSection {
    dt: Option<f64>,
    max_steps: Option<usize>,
    dwell: Option<f64>,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub demos: Vec<PathBuf>,
    pub n_phases: Option<usize>,
    pub sweep: Option<Sweep>,
    pub seed: u64,
    pub out: PathBuf,
    pub world_kind: WorldKind,
    pub world: ContactWorld,
    pub feature: FeatureMode,
    pub full_bic: bool,
    pub em: EmConfig,
    pub primitive: PrimitiveConfig,
    pub reproduce: ReproduceConfig,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Base world of each kind before configuration overrides.
pub fn base_world(kind: WorldKind) -> ContactWorld {
    match kind {
        WorldKind::Valley => valley_world(),
        WorldKind::Hose => hose_world(),
        WorldKind::Free => {
            let mut w = ContactWorld::new(Scenario::FreeSpace);
            w.noise_pos = 1e-5;
            w.noise_force = 0.1;
            w
        }
    }
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };

        let demos = if args.demos.is_empty() {
            file.demos.unwrap_or_default().into_iter().map(|p| base.join(p)).collect()
        } else {
            args.demos.clone()
        };
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let world_kind = args.world.or(file.world).unwrap_or(WorldKind::Valley);

        let mut em = EmConfig::new(seed);
        let e = file.em;
        set(&mut em.max_iters, args.max_iters.or(e.max_iters));
        set(&mut em.loglik_tol, e.loglik_tol);
        set(&mut em.lr_lambda, args.lr.or(e.lr));
        set(&mut em.lr_iters, e.lr_iters);
        set(&mut em.ridge, args.ridge.or(e.ridge));
        set(&mut em.split_merge_rounds, e.split_merge_rounds);
        set(&mut em.split_merge_iters, e.split_merge_iters);
        em.validate()?;

        let mut world = base_world(world_kind);
        let w = file.world_params;
        set(&mut world.stiffness_env, w.stiffness_env);
        set(&mut world.friction_mu, w.friction_mu);
        set(&mut world.noise_force, w.noise_force);
        set(&mut world.noise_pos, w.noise_pos);
        set(&mut world.tremor, w.tremor);
        set(&mut world.max_penetration, w.max_penetration);
        let g = &mut world.geometry;
        set(&mut g.plate_angle_deg, w.plate_angle_deg);
        set(&mut g.apex_x, w.apex_x);
        set(&mut g.apex_z, w.apex_z);
        set(&mut g.coupler_height, w.coupler_height);
        set(&mut g.coupler_radius, w.coupler_radius);
        set(&mut g.detent_torque, w.detent_torque);
        set(&mut g.interlock_deg, w.interlock_deg);
        world.validate()?;

        let mut primitive = PrimitiveConfig::default();
        let p = file.primitive;
        set(&mut primitive.translational_stiffness, p.translational_stiffness);
        set(&mut primitive.rotational_stiffness, p.rotational_stiffness);
        set(&mut primitive.min_mass, p.min_mass);
        set(&mut primitive.contact_force, p.contact_force);
        if p.damping.is_some() {
            primitive.damping = p.damping;
        }
        if p.max_lead.is_some() {
            primitive.max_lead = p.max_lead;
        }
        if p.press.is_some() {
            primitive.press = p.press;
        }

        let mut reproduce = ReproduceConfig { seed, ..ReproduceConfig::default() };
        let r = file.reproduce;
        set(&mut reproduce.dt, r.dt);
        set(&mut reproduce.max_steps, r.max_steps);
        set(&mut reproduce.dwell, r.dwell);

        Ok(RunConfig {
            demos,
            n_phases: args.n_phases.or(file.n_phases),
            sweep: args.sweep.or(file.sweep),
            seed,
            out: args.out.clone().or(file.out.map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from(".")),
            world_kind,
            world,
            feature: args.feature.or(file.feature).unwrap_or(FeatureMode::Wrench),
            full_bic: args.full_bic || file.full_bic.unwrap_or(false),
            em,
            primitive,
            reproduce,
        })
    }

    /// The phase count of a fitting command; a sweep is not allowed.
    pub fn require_n_phases(&self) -> Result<usize> {
        match (self.n_phases, self.sweep) {
            (Some(_), Some(_)) => bail!("give either --n-phases or --sweep, not both"),
            (Some(0), None) => bail!("--n-phases must be at least 1"),
            (Some(n), None) => Ok(n),
            (None, _) => bail!("--n-phases is required"),
        }
    }

    pub fn require_sweep(&self) -> Result<Sweep> {
        match (self.n_phases, self.sweep) {
            (Some(_), Some(_)) => bail!("give either --n-phases or --sweep, not both"),
            (None, Some(s)) => Ok(s),
            (_, None) => bail!("--sweep is required"),
        }
    }

    pub fn require_demos(&self) -> Result<&[PathBuf]> {
        if self.demos.is_empty() {
            bail!("--demos is required");
        }
        Ok(&self.demos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_syntax() {
        assert_eq!("1..6".parse::<Sweep>().unwrap(), Sweep { min: 1, max: 6 });
        assert_eq!("2..=4".parse::<Sweep>().unwrap(), Sweep { min: 2, max: 4 });
        assert!("0..3".parse::<Sweep>().is_err());
        assert!("5..3".parse::<Sweep>().is_err());
        assert!("3".parse::<Sweep>().is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 4\nn_phases = 2\ndemos = [\"a.csv\"]\n[em]\nmax_iters = 7\nlr = 0.5\n[world_params]\nnoise_pos = 0.001\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(path),
            seed: Some(9),
            ..RunArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.em.seed, 9);
        assert_eq!(cfg.em.max_iters, 7);
        assert_eq!(cfg.em.lr_lambda, 0.5);
        assert_eq!(cfg.world.noise_pos, 0.001);
        assert_eq!(cfg.demos, vec![dir.path().join("a.csv")]);
        assert_eq!(cfg.require_n_phases().unwrap(), 2);
        assert!(cfg.require_sweep().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "n_phase = 2\n").unwrap();
        let args = RunArgs { config: Some(path), ..RunArgs::default() };
        assert!(RunConfig::resolve(&args).is_err());
    }
}
