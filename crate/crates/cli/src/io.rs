//! Demonstration files and tidy CSV exports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use phaseseg_core::{DVector, Demonstration, TrajectoryPoint};

const POSITION: [&str; 3] = ["x", "y", "z"];
const ROTATION: [&str; 3] = ["rx", "ry", "rz"];
const FORCE: [&str; 3] = ["fx", "fy", "fz"];
const TORQUE: [&str; 3] = ["tx", "ty", "tz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("jsonl") => Ok(Format::Jsonl),
            _ => bail!("{}: unknown demonstration format, expected .csv or .jsonl", path.display()),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

/// One JSONL line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sample {
    t: f64,
    state: Vec<f64>,
    wrench: Vec<f64>,
}

fn label_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "demo".into())
}

/// Reads and validates a demonstration; the format follows the extension.
pub fn ingest(path: &Path) -> Result<Demonstration> {
    let points = match Format::from_path(path)? {
        Format::Csv => read_csv(path)?,
        Format::Jsonl => read_jsonl(path)?,
    };
    let dt = match (points.first(), points.last()) {
        (Some(a), Some(b)) if points.len() > 1 => (b.t - a.t) / (points.len() - 1) as f64,
        _ => 0.0,
    };
    Demonstration::validated(points, dt, label_of(path)).with_context(|| format!("{}", path.display()))
}

pub fn ingest_all(paths: &[PathBuf]) -> Result<Vec<Demonstration>> {
    paths.iter().map(|p| ingest(p)).collect()
}

/// Column layout of a pose-wrench CSV header.
struct Columns {
    t: usize,
    state: Vec<usize>,
    wrench: Vec<usize>,
    names: Vec<String>,
}

fn locate(names: &[String], wanted: &[&str], optional: bool, path: &Path) -> Result<Vec<usize>> {
    let found: Vec<Option<usize>> = wanted.iter().map(|w| names.iter().position(|n| n == w)).collect();
    if optional && found.iter().all(Option::is_none) {
        return Ok(Vec::new());
    }
    found
        .iter()
        .zip(wanted)
        .map(|(f, w)| f.ok_or_else(|| anyhow!("{}: header is missing column '{w}'", path.display())))
        .collect()
}

fn columns(header: &csv::StringRecord, path: &Path) -> Result<Columns> {
    let names: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let known: Vec<&str> = ["t"].iter().chain(&POSITION).chain(&ROTATION).chain(&FORCE).chain(&TORQUE).copied().collect();
    for (i, n) in names.iter().enumerate() {
        if !known.contains(&n.as_str()) {
            bail!("{}: unknown column '{n}'", path.display());
        }
        if names[..i].contains(n) {
            bail!("{}: duplicate column '{n}'", path.display());
        }
    }
    let t = locate(&names, &["t"], false, path)?[0];
    let mut state = locate(&names, &POSITION, false, path)?;
    state.extend(locate(&names, &ROTATION, true, path)?);
    let mut wrench = locate(&names, &FORCE, false, path)?;
    wrench.extend(locate(&names, &TORQUE, true, path)?);
    Ok(Columns { t, state, wrench, names })
}

fn read_csv(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let cols = columns(reader.headers()?, path)?;
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // data rows are numbered from 1, the header is row 0
        let row = i + 1;
        let record = record.with_context(|| format!("{}: row {row}", path.display()))?;
        let field = |c: usize| -> Result<f64> {
            let name = &cols.names[c];
            let raw = record
                .get(c)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| anyhow!("{}: row {row} has no value for '{name}'", path.display()))?;
            raw.parse::<f64>()
                .map_err(|_| anyhow!("{}: row {row}: '{raw}' in column '{name}' is not a number", path.display()))
        };
        if record.len() > cols.names.len() {
            bail!("{}: row {row} has {} fields, the header has {}", path.display(), record.len(), cols.names.len());
        }
        let t = field(cols.t)?;
        let state = cols.state.iter().map(|&c| field(c)).collect::<Result<Vec<_>>>()?;
        let wrench = cols.wrench.iter().map(|&c| field(c)).collect::<Result<Vec<_>>>()?;
        points.push(TrajectoryPoint::new(t, DVector::from_vec(state), DVector::from_vec(wrench)));
    }
    Ok(points)
}

fn read_jsonl(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut points = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        points.push(TrajectoryPoint::new(s.t, DVector::from_vec(s.state), DVector::from_vec(s.wrench)));
    }
    Ok(points)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Shortest text that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_header(m: usize, dw: usize) -> Result<Vec<&'static str>> {
    let mut h = vec!["t"];
    match m {
        3 => h.extend(POSITION),
        6 => h.extend(POSITION.iter().chain(&ROTATION)),
        _ => bail!("CSV holds 3-D or 6-D states, not {m}-D; use JSONL"),
    }
    match dw {
        3 => h.extend(FORCE),
        6 => h.extend(FORCE.iter().chain(&TORQUE)),
        _ => bail!("CSV holds 3-D or 6-D wrenches, not {dw}-D; use JSONL"),
    }
    Ok(h)
}

pub fn write_demo(demo: &Demonstration, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let header = csv_header(demo.state_dim(), demo.wrench_dim())?;
            let mut w = csv::Writer::from_writer(create(path)?);
            w.write_record(&header)?;
            for p in demo.points() {
                let row: Vec<String> =
                    std::iter::once(p.t).chain(p.state.iter().copied()).chain(p.wrench.iter().copied()).map(num).collect();
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let mut w = create(path)?;
            for p in demo.points() {
                let s = Sample {
                    t: p.t,
                    state: p.state.iter().copied().collect(),
                    wrench: p.wrench.iter().copied().collect(),
                };
                serde_json::to_writer(&mut w, &s)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Ground-truth or estimated labels next to a demonstration file.
pub fn labels_path(demo: &Path) -> PathBuf {
    demo.with_extension("labels.csv")
}

/// `t,phase` with one-based phases.
pub fn write_labels(demo: &Demonstration, labels: &[usize], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "phase"])?;
    for (p, l) in demo.points().iter().zip(labels) {
        w.write_record([num(p.t), (l + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one-based labels back as zero-based phase indices.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h.trim() == "phase")
        .ok_or_else(|| anyhow!("{}: no 'phase' column", path.display()))?;
    reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            let r = r?;
            let raw = r.get(col).unwrap_or("").trim();
            match raw.parse::<usize>() {
                Ok(p) if p >= 1 => Ok(p - 1),
                _ => bail!("{}: row {}: phase '{raw}' is not a positive integer", path.display(), i + 1),
            }
        })
        .collect()
}

/// Long-format `t,series,value` writer.
pub struct Tidy {
    w: csv::Writer<BufWriter<File>>,
}

impl Tidy {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["t", "series", "value"])?;
        Ok(Tidy { w })
    }

    pub fn row(&mut self, t: f64, series: &str, value: f64) -> Result<()> {
        self.w.write_record([num(t).as_str(), series, num(value).as_str()])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Names of the state components, `x, y, z, rx, ry, rz` where they fit.
pub fn state_names(m: usize) -> Vec<String> {
    if m == 3 || m == 6 {
        POSITION.iter().chain(&ROTATION).take(m).map(|s| s.to_string()).collect()
    } else {
        (1..=m).map(|i| format!("s{i}")).collect()
    }
}

pub fn wrench_names(dw: usize) -> Vec<String> {
    if dw == 3 || dw == 6 {
        FORCE.iter().chain(&TORQUE).take(dw).map(|s| s.to_string()).collect()
    } else {
        (1..=dw).map(|i| format!("w{i}")).collect()
    }
}
