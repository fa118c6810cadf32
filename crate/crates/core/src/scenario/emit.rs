//! CSV, manifest and plot output of a scenario run.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::decide;
use crate::error::{Error, Result};
use crate::lti::SystemDocument;
use crate::watermark::LqgCost;

use super::{ConvergenceProbe, RunArtifacts, ScenarioConfig};

/// Everything needed to re-run a scenario, plus a summary of what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub config: ScenarioConfig,
    pub system: SystemDocument,
    pub master_seed: u64,
    pub replica_seeds: Vec<u64>,
    pub zeta: f64,
    pub cost: LqgCost,
    pub probes: Vec<ConvergenceProbe>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmittedFiles {
    pub runs: Vec<PathBuf>,
    pub u_error: PathBuf,
    pub detection_rate: PathBuf,
    pub manifest: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn write_run(path: &Path, g: &[f64], zeta: f64, mode: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "g", "alarm", "mode"])?;
    for (k, &value) in g.iter().enumerate() {
        let alarm = if decide(value, zeta) { "1" } else { "0" };
        w.write_record([
            k.to_string(),
            value.to_string(),
            alarm.to_string(),
            mode.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_pairs<K: ToString>(
    path: &Path,
    header: [&str; 2],
    rows: impl Iterator<Item = (K, f64)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a per-run CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RunRow {
    pub k: u64,
    pub g: f64,
    pub alarm: u8,
    pub mode: String,
}

pub fn read_run_csv(path: impl AsRef<Path>) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<RunRow>, _>>()?)
}

/// Writes `runs/run_NNNN.csv` (k, g, alarm, mode) per replica, `u_error.csv`,
/// `detection_rate.csv`, optional SVG plots and finally `manifest.json`.
pub fn emit(
    artifacts: &RunArtifacts,
    cfg: &ScenarioConfig,
    out_dir: impl AsRef<Path>,
) -> Result<EmittedFiles> {
    let out = out_dir.as_ref();
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mode = artifacts.mode.label();
    let mut files = EmittedFiles::default();
    for (r, replica) in artifacts.replicas.iter().enumerate() {
        let path = runs_dir.join(format!("run_{r:04}.csv"));
        write_run(&path, &replica.g, artifacts.zeta, mode)?;
        files.runs.push(path);
    }
    files.u_error = out.join("u_error.csv");
    write_pairs(
        &files.u_error,
        ["k", "frobenius_error"],
        artifacts.u_error.iter().cloned(),
    )?;
    files.detection_rate = out.join("detection_rate.csv");
    write_pairs(
        &files.detection_rate,
        ["k", "rate"],
        artifacts.detection_rate.iter().cloned().enumerate(),
    )?;
    if cfg.plots {
        files.plots = plot_all(artifacts, out)?;
    }
    let relative = |p: &PathBuf| {
        p.strip_prefix(out)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut listed: Vec<String> = files.runs.iter().map(relative).collect();
    listed.push(relative(&files.u_error));
    listed.push(relative(&files.detection_rate));
    listed.extend(files.plots.iter().map(relative));
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        system: artifacts.system.clone(),
        master_seed: cfg.seed,
        replica_seeds: artifacts.replicas.iter().map(|r| r.seed).collect(),
        zeta: artifacts.zeta,
        cost: artifacts.cost,
        probes: artifacts.probes.clone(),
        files: listed,
    };
    files.manifest = out.join("manifest.json");
    fs::write(&files.manifest, serde_json::to_string_pretty(&manifest)?)?;
    Ok(files)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn line_plot(path: &Path, title: &str, series: &[(f64, f64)], level: Option<f64>) -> Result<()> {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .cloned()
        .filter(|(_, y)| y.is_finite())
        .collect();
    let (x0, x1) = finite
        .iter()
        .fold((0.0f64, 1.0f64), |(a, b), (x, _)| (a.min(*x), b.max(*x)));
    let mut ys: Vec<f64> = finite.iter().map(|(_, y)| *y).collect();
    ys.extend(level);
    let lo = ys.iter().cloned().fold(0.0f64, f64::min);
    let hi = ys.iter().cloned().fold(1e-12f64, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-12);
    let root = SVGBackend::new(path, (800, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().draw().map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(finite, &BLUE))
        .map_err(plot_err)?;
    if let Some(z) = level {
        chart
            .draw_series(LineSeries::new(vec![(x0, z), (x1, z)], &RED))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_all(artifacts: &RunArtifacts, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let g: Vec<(f64, f64)> = artifacts
        .g_trace()
        .iter()
        .map(|(k, g, _)| (*k as f64, *g))
        .collect();
    let path = dir.join("g_trace.svg");
    line_plot(
        &path,
        "detector statistic (replica 0)",
        &g,
        Some(artifacts.zeta),
    )?;
    written.push(path);
    let rate: Vec<(f64, f64)> = artifacts
        .detection_rate
        .iter()
        .enumerate()
        .map(|(k, r)| (k as f64, *r))
        .collect();
    let path = dir.join("detection_rate.svg");
    line_plot(&path, "detection rate", &rate, None)?;
    written.push(path);
    if !artifacts.u_error.is_empty() {
        let err: Vec<(f64, f64)> = artifacts
            .u_error
            .iter()
            .map(|(k, e)| (*k as f64, *e))
            .collect();
        let path = dir.join("u_error.svg");
        line_plot(&path, "watermark covariance error", &err, None)?;
        written.push(path);
    }
    Ok(written)
}
