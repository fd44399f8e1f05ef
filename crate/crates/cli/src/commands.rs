//! The subcommands. Every data output is a pure function of the inputs
//! and the seed; progress goes to the log and a one-line summary to
//! stdout.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use phaseseg_core::inference::{count_switches, forward_messages};
use phaseseg_core::learning::{e_step, em_fit_with_feature, segment};
use phaseseg_core::selection::bic_sweep;
use phaseseg_core::simulate::fixtures::{hose_script, valley_script, valley_steered_script, DT};
use phaseseg_core::simulate::{
    compare_feature_modes, extract_primitives, generate_demo, reproduce, LabeledDemo, ModeReport, ScriptSegment,
};
use phaseseg_core::{DVector, Demonstration, EmReport, FeatureFn, HmmModel, ParamCount};

use crate::config::{FeatureMode, RunConfig, WorldKind};
use crate::io::{self, ingest_all, state_names, wrench_names, write_json, write_labels, Format, Tidy};
use crate::model_file;

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn stems(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if !seen.insert(stem.clone()) {
                bail!("two demonstrations are named '{stem}'; output files would collide");
            }
            Ok(stem)
        })
        .collect()
}

fn mean_state(demos: &[Demonstration], pick: impl Fn(&Demonstration) -> &DVector<f64>) -> DVector<f64> {
    let sum = demos.iter().map(&pick).fold(DVector::zeros(demos[0].state_dim()), |acc, s| acc + s);
    sum / demos.len() as f64
}

/// The transition feature for a mode: the wrench itself, or the state
/// relative to the mean final demonstrated state.
fn feature_fn(mode: FeatureMode, demos: &[Demonstration]) -> FeatureFn {
    match mode {
        FeatureMode::Wrench => FeatureFn::Identity,
        FeatureMode::State => FeatureFn::RelativeState {
            target: mean_state(demos, |d| d.state(d.len() - 1)),
        },
    }
}

#[derive(Serialize)]
struct ReportOut {
    n_phases: usize,
    best_loglik: f64,
    loglik_trace: Vec<f64>,
    iterations_run: usize,
    converged: bool,
    accepted_moves: usize,
}

impl ReportOut {
    fn new(n_phases: usize, r: &EmReport) -> Self {
        ReportOut {
            n_phases,
            best_loglik: r.best_loglik(),
            loglik_trace: r.loglik_trace.clone(),
            iterations_run: r.iterations_run,
            converged: r.converged,
            accepted_moves: r.accepted_moves,
        }
    }
}

fn write_segmentations(model: &HmmModel, demos: &[Demonstration], stems: &[String], out: &Path) -> Result<()> {
    for (demo, stem) in demos.iter().zip(stems) {
        let labels = segment(model, demo)?;
        write_labels(demo, &labels, &out.join(format!("{stem}.segment.csv")))?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n_phases()?;
    let paths = cfg.require_demos()?;
    let names = stems(paths)?;
    let demos = ingest_all(paths)?;
    let feature = feature_fn(cfg.feature, &demos);
    info!("fitting {n} phases to {} demonstrations", demos.len());
    let (model, report) = em_fit_with_feature(&demos, n, &feature, &cfg.em)?;
    let out = prepare_out(cfg)?;
    model_file::save(&model, &out.join("model.json"))?;
    write_json(&ReportOut::new(n, &report), &out.join("report.json"))?;
    write_segmentations(&model, &demos, &names, out)?;
    println!(
        "trained {n} phases: loglik {:.3} after {} iterations (converged: {})",
        report.best_loglik(),
        report.iterations_run,
        report.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct Failure {
    n_phases: usize,
    error: String,
}

#[derive(Serialize)]
struct Selection {
    selected: usize,
    param_count: &'static str,
    failures: Vec<Failure>,
}

pub fn select(cfg: &RunConfig) -> Result<()> {
    let sweep = cfg.require_sweep()?;
    let paths = cfg.require_demos()?;
    let names = stems(paths)?;
    let demos = ingest_all(paths)?;
    let feature = feature_fn(cfg.feature, &demos);
    let count = if cfg.full_bic { ParamCount::Full } else { ParamCount::Compact };
    let result = bic_sweep(&demos, sweep.min..=sweep.max, &feature, &cfg.em, count)?;
    let best = result.best().context("every fit in the sweep failed")?;
    let out = prepare_out(cfg)?;

    let mut w = csv::Writer::from_path(out.join("bic.csv"))?;
    w.write_record(["n_phases", "loglik", "n_params", "n_samples", "bic", "iterations", "converged"])?;
    for r in &result.results {
        w.write_record([
            r.n_phases.to_string(),
            io::num(r.loglik),
            r.n_params.to_string(),
            r.n_samples.to_string(),
            io::num(r.bic),
            r.report.iterations_run.to_string(),
            r.report.converged.to_string(),
        ])?;
    }
    w.flush()?;
    let selection = Selection {
        selected: best.n_phases,
        param_count: if cfg.full_bic { "full" } else { "compact" },
        failures: result
            .failures
            .iter()
            .map(|f| Failure { n_phases: f.n_phases, error: f.error.clone() })
            .collect(),
    };
    write_json(&selection, &out.join("selection.json"))?;
    model_file::save(&best.model, &out.join("model.json"))?;
    write_segmentations(&best.model, &demos, &names, out)?;
    println!("selected {} phases (BIC {:.3})", best.n_phases, best.bic);
    Ok(())
}

pub fn segment_cmd(cfg: &RunConfig, model_path: &Path) -> Result<()> {
    let model = model_file::load(model_path)?;
    let paths = cfg.require_demos()?;
    let names = stems(paths)?;
    let demos = ingest_all(paths)?;
    let out = prepare_out(cfg)?;
    for (demo, stem) in demos.iter().zip(&names) {
        let fwd = forward_messages(&model, demo)?;
        let labels = segment(&model, demo)?;
        write_labels(demo, &labels, &out.join(format!("{stem}.segment.csv")))?;
        let alpha = fwd.normalized_alpha();
        let mut tidy = Tidy::create(&out.join(format!("{stem}.alpha.csv")))?;
        for (t, row) in alpha.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                tidy.row(demo.points()[t].t, &format!("phase{}", j + 1), *v)?;
            }
        }
        tidy.finish()?;
        println!("{stem}: {} switches, loglik {:.3}", count_switches(&labels), fwd.loglik);
    }
    Ok(())
}

/// Options of `generate` beyond the shared run flags.
pub struct GenerateOptions {
    pub count: Option<usize>,
    pub steered: bool,
    pub format: Format,
}

fn free_script() -> (DVector<f64>, Vec<ScriptSegment>) {
    let start = DVector::zeros(3);
    let script = vec![
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.02, 0.0, 0.0]), 2.0),
        ScriptSegment::from_velocity(DVector::from_vec(vec![0.0, 0.02, -0.01]), 2.0),
    ];
    (start, script)
}

pub fn generate(cfg: &RunConfig, opts: &GenerateOptions) -> Result<()> {
    let count = opts.count.unwrap_or(if cfg.world_kind == WorldKind::Valley { 2 } else { 1 });
    if count == 0 {
        bail!("--count must be at least 1");
    }
    let out = prepare_out(cfg)?;
    for k in 0..count {
        // valley demonstrations alternate between the left and right plate
        let side = if k % 2 == 0 { -1.0 } else { 1.0 };
        let (start, script) = match cfg.world_kind {
            WorldKind::Valley if opts.steered => valley_steered_script(side),
            WorldKind::Valley => valley_script(side),
            WorldKind::Hose => hose_script(),
            WorldKind::Free => free_script(),
        };
        let seed = cfg.seed.wrapping_add(k as u64);
        let LabeledDemo { demo, labels } = generate_demo(&cfg.world, &start, &script, DT, seed, &cfg.primitive)?;
        let path = out.join(format!("demo_{}.{}", k + 1, opts.format.extension()));
        io::write_demo(&demo, &path, opts.format)?;
        write_labels(&demo, &labels, &io::labels_path(&path))?;
        println!("{}: {} samples", path.display(), demo.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct Switch {
    t: f64,
    phase: usize,
}

#[derive(Serialize)]
struct ReproductionSummary {
    steps: usize,
    duration: f64,
    phase_sequence: Vec<usize>,
    switch_times: Vec<Switch>,
    start: Vec<f64>,
    final_state: Vec<f64>,
    /// Mean final state of the demonstrations.
    goal: Vec<f64>,
    final_pose_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    valley_line_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rotation_z_deg: Option<f64>,
    low_confidence_phases: Vec<usize>,
}

fn parse_start(text: &str, m: usize) -> Result<DVector<f64>> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad start component '{v}'")))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != m {
        bail!("start has {} components, the model state has {m}", values.len());
    }
    Ok(DVector::from_vec(values))
}

pub fn reproduce_cmd(cfg: &RunConfig, model_path: &Path, start: Option<&str>) -> Result<()> {
    let model = model_file::load(model_path)?;
    let demos = ingest_all(cfg.require_demos()?)?;
    let posts = e_step(&model, &demos)?;
    let prims = extract_primitives(&model, &demos, &posts, &cfg.primitive)?;
    let m = model.state_dim();
    let start = match start {
        Some(s) => parse_start(s, m)?,
        None => mean_state(&demos, |d| d.state(0)),
    };
    let trace = reproduce(&model, &prims, &cfg.world, &start, &cfg.reproduce)?;
    let out = prepare_out(cfg)?;

    let (s_names, w_names) = (state_names(m), wrench_names(m));
    let mut tidy = Tidy::create(&out.join("trace.csv"))?;
    for step in &trace.steps {
        for (i, name) in s_names.iter().enumerate() {
            tidy.row(step.t, name, step.x[i])?;
        }
        for (i, name) in s_names.iter().enumerate() {
            tidy.row(step.t, &format!("{name}_star"), step.x_star[i])?;
        }
        for (i, name) in w_names.iter().enumerate() {
            tidy.row(step.t, name, step.wrench[i])?;
        }
        tidy.row(step.t, "phase", (step.phase + 1) as f64)?;
        tidy.row(step.t, "primitive", (step.primitive + 1) as f64)?;
    }
    tidy.finish()?;

    let fin = trace.final_state();
    let goal = mean_state(&demos, |d| d.state(d.len() - 1));
    let g = &cfg.world.geometry;
    let summary = ReproductionSummary {
        steps: trace.steps.len(),
        duration: trace.steps.last().map_or(0.0, |s| s.t),
        phase_sequence: trace.phase_sequence().iter().map(|p| p + 1).collect(),
        switch_times: trace.switch_times().into_iter().map(|(t, p)| Switch { t, phase: p + 1 }).collect(),
        start: start.iter().copied().collect(),
        final_state: fin.iter().copied().collect(),
        final_pose_error: (fin - &goal).norm(),
        goal: goal.iter().copied().collect(),
        valley_line_distance: (cfg.world_kind == WorldKind::Valley)
            .then(|| (fin[0] - g.apex_x).hypot(fin[2] - g.apex_z)),
        rotation_z_deg: (cfg.world_kind == WorldKind::Hose && m >= 6).then(|| (fin[5] - start[5]).to_degrees()),
        low_confidence_phases: prims.iter().enumerate().filter(|(_, p)| p.low_confidence()).map(|(j, _)| j + 1).collect(),
    };
    write_json(&summary, &out.join("summary.json"))?;
    println!(
        "reproduced {} steps, phases {:?}, final pose error {:.4}",
        summary.steps, summary.phase_sequence, summary.final_pose_error
    );
    Ok(())
}

#[derive(Serialize)]
struct ModeOut {
    feature: &'static str,
    accuracy: f64,
    spurious_switches: usize,
}

impl ModeOut {
    fn new(r: &ModeReport) -> Self {
        ModeOut {
            feature: r.feature.id(),
            accuracy: r.accuracy,
            spurious_switches: r.spurious_switches,
        }
    }
}

#[derive(Serialize)]
struct Comparison {
    n_phases: usize,
    wrench: ModeOut,
    state: ModeOut,
}

pub fn compare(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n_phases()?;
    let paths = cfg.require_demos()?;
    let names = stems(paths)?;
    let demos = ingest_all(paths)?;
    let labeled = paths
        .iter()
        .zip(demos)
        .map(|(p, demo)| {
            let sidecar = io::labels_path(p);
            let labels = io::read_labels(&sidecar).with_context(|| format!("ground truth for {}", p.display()))?;
            if labels.len() != demo.len() {
                bail!("{}: {} labels for {} samples", sidecar.display(), labels.len(), demo.len());
            }
            Ok(LabeledDemo { demo, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = compare_feature_modes(&labeled, n, &cfg.em)?;
    let out = prepare_out(cfg)?;
    for (k, (l, stem)) in labeled.iter().zip(&names).enumerate() {
        write_labels(&l.demo, &result.wrench.labels[k], &out.join(format!("{stem}.wrench.csv")))?;
        write_labels(&l.demo, &result.state.labels[k], &out.join(format!("{stem}.state.csv")))?;
    }
    let report = Comparison {
        n_phases: n,
        wrench: ModeOut::new(&result.wrench),
        state: ModeOut::new(&result.state),
    };
    write_json(&report, &out.join("comparison.json"))?;
    println!(
        "wrench: accuracy {:.3}, {} spurious switches; state: accuracy {:.3}, {} spurious switches",
        report.wrench.accuracy, report.wrench.spurious_switches, report.state.accuracy, report.state.spurious_switches
    );
    Ok(())
}
