use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{reference_solutions, Dataset};
use super::sampling::{FieldGrid, SourceSampler};
use super::train::{train, LossRecord, TrainingState};
use crate::error::{Error, Result};
use crate::geometry::Side;
use crate::metrics::{broken_norm, epsilon_norm, error_cell_samples, relative_errors, ErrorReport, SampleError, Stats};
use crate::physics_loss::Discretization;
use crate::reconstruction::{evaluation_points, PiecewiseSolution};
use crate::reference::{reference_resolution_1d, solve_fd1d_extrapolated, Oracle};

/// Aggregate written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub benchmark: String,
    pub mode: String,
    pub n_samples: usize,
    pub train_resolution: [usize; 2],
    pub test_resolution: [usize; 2],
    pub rel_l2: Stats,
    pub rel_linf: Stats,
}

/// Errors of sample-major coefficients against the dataset references.
/// Also returns predictions on the evaluation grid for the first `keep`
/// samples.
pub fn evaluate_coefficients(disc: &Discretization, data: &Dataset, coeffs: &[f64], keep: usize) -> Result<(ErrorReport, Vec<Vec<f64>>)> {
    let k = disc.n_coeffs();
    if coeffs.len() != k * data.len() {
        return Err(Error::ShapeMismatch { expected: k * data.len(), got: coeffs.len() });
    }
    data.reference.as_ref().ok_or(Error::MissingReference)?;
    let points = evaluation_points(&disc.spec, data.header.test_resolution);
    let rows: Vec<(SampleError, Option<Vec<f64>>)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let f = data.source(i)?;
            let sol = PiecewiseSolution::new(&disc.mesh, &disc.basis, &coeffs[i * k..(i + 1) * k], &f)?;
            let pred = sol.sample(&points)?;
            let (rel_l2, rel_linf) = relative_errors(&pred, data.reference_row(i)?)?;
            Ok((SampleError { sample: i, rel_l2, rel_linf }, (i < keep).then_some(pred)))
        })
        .collect::<Result<_>>()?;
    let (errs, preds): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok((ErrorReport::new(errs), preds.into_iter().flatten().collect()))
}

/// Plot data: one row per evaluation point.
pub fn profile_csv(points: &[([f64; 2], Option<Side>)], reference: &[f64], prediction: &[f64]) -> String {
    let mut out = String::from("x,y,side,reference,prediction,error\n");
    for ((p, side), (r, u)) in points.iter().zip(reference.iter().zip(prediction)) {
        let s = match side {
            Some(Side::Minus) => "minus",
            Some(Side::Plus) => "plus",
            None => "",
        };
        let _ = writeln!(out, "{},{},{s},{:e},{:e},{:e}", p[0], p[1], r, u, u - r);
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a, E: Serialize> {
    tool: String,
    command: &'a str,
    config: &'a RunConfig,
    derived: E,
}

/// Records the full configuration and derived settings of a run.
pub fn write_manifest<E: Serialize>(dir: &Path, command: &str, config: &RunConfig, derived: E) -> Result<()> {
    let m = Manifest { tool: format!("tfponet {}", env!("CARGO_PKG_VERSION")), command, config, derived };
    write_json(&dir.join("manifest.json"), &m)
}

/// Reads a run configuration, or the configuration stored in a manifest.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let inner = match value.get("config") {
        Some(c) if value.get("command").is_some() => c.clone(),
        _ => value,
    };
    let c: RunConfig = serde_json::from_value(inner).map_err(|e| Error::Config(e.to_string()))?;
    c.validate()?;
    Ok(c)
}

fn write_report(dir: &Path, mode: &str, config: &RunConfig, data: &Dataset, report: &ErrorReport, preds: &[Vec<f64>]) -> Result<Summary> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("errors.csv"), report.to_csv(&config.benchmark))?;
    let summary = Summary {
        benchmark: config.benchmark.clone(),
        mode: mode.into(),
        n_samples: report.samples.len(),
        train_resolution: config.train_resolution,
        test_resolution: data.header.test_resolution,
        rel_l2: report.rel_l2,
        rel_linf: report.rel_linf,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let points = evaluation_points(&data.header.problem, data.header.test_resolution);
    for (i, p) in preds.iter().enumerate() {
        std::fs::write(dir.join(format!("profile_{i}.csv")), profile_csv(&points, data.reference_row(i)?, p))?;
    }
    Ok(summary)
}

/// Trains on a dataset file and writes `checkpoint.tfpo`, `loss.csv` and
/// the manifest into `dir`.
pub fn run_train(config: &RunConfig, train_path: &Path, dir: &Path) -> Result<(TrainingState, Vec<LossRecord>)> {
    let data = Dataset::read(train_path)?;
    std::fs::create_dir_all(dir)?;
    let (state, trace) = train(config, &data, Some(dir))?;
    state.save(&dir.join("checkpoint.tfpo"))?;
    let mut csv = String::from("step,loss,lr\n");
    for r in &trace {
        let _ = writeln!(csv, "{},{:e},{:e}", r.step, r.loss, r.lr);
    }
    std::fs::write(dir.join("loss.csv"), csv)?;
    #[derive(Serialize)]
    struct Derived<'a> {
        dataset: &'a Path,
        dataset_seed: u64,
        n_parameters: usize,
        output_shift: &'a [f64],
        output_scale: &'a [f64],
        final_loss: Option<f64>,
    }
    let derived = Derived {
        dataset: train_path,
        dataset_seed: data.header.seed,
        n_parameters: state.net.params().len(),
        output_shift: &state.map.shift,
        output_scale: &state.map.scale,
        final_loss: trace.last().map(|r| r.loss),
    };
    write_manifest(dir, "train", config, derived)?;
    Ok((state, trace))
}

/// Evaluates a checkpoint on a test file.
pub fn run_eval(checkpoint: &Path, test_path: &Path, dir: &Path) -> Result<Summary> {
    let state = TrainingState::load(checkpoint)?;
    let data = Dataset::read(test_path)?;
    let config = &state.config;
    data.check_against(config)?;
    data.reference.as_ref().ok_or(Error::MissingReference)?;
    let disc = Discretization::new(&config.problem()?, config.train_resolution, config.points_per_edge, config.quad_order)?;
    let grid = data.header.field_grid;
    let inputs: Vec<f64> = (0..data.len()).map(|i| grid.sensor_values(&disc.mesh, data.field(i))).collect::<Result<Vec<_>>>()?.concat();
    let coeffs = state.predict(&inputs, data.len())?;
    let (report, preds) = evaluate_coefficients(&disc, &data, &coeffs, config.plot_samples)?;
    let summary = write_report(dir, "eval", config, &data, &report, &preds)?;
    write_manifest(dir, "eval", config, serde_json::json!({ "checkpoint": checkpoint, "dataset": test_path }))?;
    Ok(summary)
}

/// Least-squares coefficients in place of the network.
pub fn oracle_report(config: &RunConfig, data: &Dataset) -> Result<(ErrorReport, Vec<Vec<f64>>)> {
    data.check_against(config)?;
    data.reference.as_ref().ok_or(Error::MissingReference)?;
    let disc = Discretization::new(&config.problem()?, config.train_resolution, config.points_per_edge, config.quad_order)?;
    let oracle = Oracle::new(&disc, &config.loss_weights, config.reduction)?;
    let coeffs = super::dataset::oracle_coefficients(&disc, &oracle, data)?;
    evaluate_coefficients(&disc, data, &coeffs, config.plot_samples)
}

pub fn run_oracle(config: &RunConfig, test_path: &Path, dir: &Path) -> Result<Summary> {
    let data = Dataset::read(test_path)?;
    let (report, preds) = oracle_report(config, &data)?;
    let summary = write_report(dir, "oracle", config, &data, &report, &preds)?;
    write_manifest(dir, "oracle", config, serde_json::json!({ "dataset": test_path }))?;
    Ok(summary)
}

/// Solves the references of a dataset file and writes the file with them
/// attached.
pub fn run_reference(config: &RunConfig, data_path: &Path, out: &Path) -> Result<PathBuf> {
    let mut data = Dataset::read(data_path)?;
    data.check_against(config)?;
    let (r, solve) = reference_solutions(&data.header.problem, &data, data.header.test_resolution, config.reference_refine)?;
    data.reference = Some(r);
    data.header.reference_solve_resolution = Some(solve);
    data.write(out)?;
    Ok(out.to_path_buf())
}

/// Norm measured by the convergence driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorNorm {
    /// Cell-wise norm with derivatives up to `order`.
    Broken { order: usize },
    /// `(ε ‖e‖*₁² + ‖e‖*₀²)^{1/2}` with ε the diffusion coefficient.
    Epsilon { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub benchmark: String,
    pub norm: ErrorNorm,
    pub resolutions: Vec<usize>,
    /// Per resolution, the error norm over samples.
    pub errors: Vec<Stats>,
    /// Least-squares slope of log median error against log h.
    pub slope: f64,
    pub reference_resolution: usize,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Smallest reference grid of convergence studies; the reference is
/// Richardson-extrapolated from it and its doubling.
const MIN_CONVERGENCE_REFERENCE: usize = 16384;

/// Oracle error norms of a 1D benchmark over a ladder of cell counts,
/// against one fine finite-difference reference per sample.
pub fn convergence(config: &RunConfig, ladder: &[usize], n_samples: usize, norm: ErrorNorm) -> Result<ConvergenceReport> {
    config.validate()?;
    let spec = config.problem()?;
    if spec.dim() != 1 || ladder.is_empty() || n_samples == 0 {
        return Err(Error::Config("convergence needs a 1D benchmark, a nonempty ladder and samples".into()));
    }
    let finest = *ladder.iter().max().expect("nonempty");
    let base = (2 * finest).max(config.test_resolution[0] * config.reference_refine).max(MIN_CONVERGENCE_REFERENCE).next_power_of_two();
    let n_ref = reference_resolution_1d(&spec, base, 1)?;
    if ladder.iter().any(|&m| m == 0 || n_ref % (2 * m) != 0) {
        return Err(Error::Config(format!("ladder {ladder:?} does not divide the reference grid {n_ref}")));
    }
    let grid = FieldGrid::for_spec(&spec);
    let sampler = SourceSampler::new(grid, config.length_scale)?;
    let setups = ladder
        .iter()
        .map(|&m| {
            let disc = Discretization::new(&spec, [m, 1], config.points_per_edge, config.quad_order)?;
            let oracle = Oracle::new(&disc, &config.loss_weights, config.reduction)?;
            Ok((disc, oracle))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_sample: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let f = grid.interpolant(&sampler.sample(config.seed, super::dataset::TEST_STREAM_OFFSET + i))?;
            let fd = solve_fd1d_extrapolated(&spec, &f, n_ref)?;
            setups
                .iter()
                .map(|(disc, oracle)| {
                    let c = oracle.solve(&disc.offsets(&f)?)?;
                    let sol = PiecewiseSolution::new(&disc.mesh, &disc.basis, &c, &f)?;
                    let cells = error_cell_samples(&spec, &disc.mesh, &fd, &f, &sol)?;
                    match norm {
                        ErrorNorm::Broken { order } => broken_norm(&cells, order),
                        ErrorNorm::Epsilon { epsilon } => epsilon_norm(&cells, epsilon),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let errors: Vec<Stats> = (0..ladder.len()).map(|j| Stats::of(&per_sample.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
    let h: Vec<f64> = ladder.iter().map(|&m| spec.domain.measure() / m as f64).collect();
    let med: Vec<f64> = errors.iter().map(|s| s.median).collect();
    let slope = if ladder.len() > 1 { log_log_slope(&h, &med) } else { f64::NAN };
    Ok(ConvergenceReport { benchmark: config.benchmark.clone(), norm, resolutions: ladder.to_vec(), errors, slope, reference_resolution: n_ref })
}

pub fn run_convergence(config: &RunConfig, ladder: &[usize], n_samples: usize, norm: ErrorNorm, dir: &Path) -> Result<ConvergenceReport> {
    let report = convergence(config, ladder, n_samples, norm)?;
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("cells,h,median,mean,min,max\n");
    for (m, s) in report.resolutions.iter().zip(&report.errors) {
        let _ = writeln!(csv, "{m},{:e},{:e},{:e},{:e},{:e}", 1.0 / *m as f64, s.median, s.mean, s.min, s.max);
    }
    std::fs::write(dir.join("convergence.csv"), csv)?;
    write_json(&dir.join("summary.json"), &report)?;
    write_manifest(dir, "convergence", config, serde_json::json!({ "ladder": ladder, "samples": n_samples, "norm": norm }))?;
    Ok(report)
}

/// Generates both splits and writes them with a manifest.
pub fn run_gen_data(config: &RunConfig, dir: &Path, with_oracle: bool) -> Result<(PathBuf, PathBuf)> {
    let paths = super::dataset::gen_data(config, dir, with_oracle)?;
    write_manifest(dir, "gen-data", config, serde_json::json!({ "train": paths.0, "test": paths.1, "oracle": with_oracle }))?;
    Ok(paths)
}
