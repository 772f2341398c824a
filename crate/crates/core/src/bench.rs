//! Metrics, seeded experiment runs, convergence curves, sweeps and CSV output.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{run_parareal, run_picard, run_sequential, BaselineResult};
use crate::config::{Method, RunConfig, X0Spec};
use crate::drift::GaussianMixture;
use crate::engine::{run_chords, ChordsOptions, Executor, Termination};
use crate::error::{Error, Result};
use crate::grid::nominal_speedup;
use crate::rng::{seeded, split_seed, standard_normal};
use crate::scalar::{rms_diff, Scalar};

/// `sqrt(mean((a - b)^2))`.
pub fn latent_rmse<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("rmse of vectors with dimensions {} and {}", a.len(), b.len())));
    }
    Ok(rms_diff(a, b))
}

/// Mean absolute elementwise difference.
pub fn l1_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("l1 of vectors with dimensions {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(T::zero());
    }
    let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(s / T::from_count(a.len()))
}

/// Mean negative log-density of `samples` under `mix`.
pub fn mixture_nll<T: Scalar>(samples: &[Vec<T>], mix: &GaussianMixture<T>) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::invalid("mixture_nll needs at least one sample"));
    }
    let mut total = T::zero();
    for x in samples {
        if x.len() != mix.dim() {
            return Err(Error::invalid(format!("sample has dimension {}, mixture has {}", x.len(), mix.dim())));
        }
        total -= mix.log_density(x);
    }
    Ok(total / T::from_count(samples.len()))
}

/// One emitted output of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputRow {
    pub core: usize,
    pub sequential_passes: usize,
    pub total_evals: u64,
    pub wall_ms: f64,
    pub rmse: f64,
    pub nominal_speedup: f64,
    #[serde(skip)]
    pub latent: Vec<f64>,
}

/// Everything measured for one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub field: String,
    pub n: usize,
    /// Cores for the sampler, window for Picard, coarse points for parareal, 1 for sequential.
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<OutputRow>,
    /// SHA-256 of the sequential reference latent (little-endian `f64` bytes), hex.
    pub reference_digest: String,
    #[serde(skip)]
    pub reference: Vec<f64>,
}

impl RunRecord {
    /// The output that ended the run.
    pub fn terminal(&self) -> &OutputRow {
        self.rows.last().expect("records hold at least one row")
    }

    /// Copy with every wall-clock field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.wall_ms = 0.0;
        }
        r
    }
}

pub fn digest(latent: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in latent {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Starting latent for repeat `repeat` of `cfg`, with the derived run seed.
pub fn initial_latent(cfg: &RunConfig, dim: usize, repeat: usize) -> (u64, Vec<f64>) {
    let seed = split_seed(cfg.seed, repeat as u64);
    let x0 = match &cfg.x0 {
        X0Spec::Noise => standard_normal(&mut seeded(seed), dim),
        X0Spec::Value(v) => v.clone(),
    };
    (seed, x0)
}

/// Runs every repeat of `cfg` in order.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    (0..cfg.repeats).map(|r| run_repeat(cfg, r)).collect()
}

fn baseline_row(n: usize, reference: &[f64], r: BaselineResult<f64>) -> Result<OutputRow> {
    Ok(OutputRow {
        core: 1,
        sequential_passes: r.sequential_passes,
        total_evals: r.total_evals,
        wall_ms: r.wall_ms,
        rmse: latent_rmse(&r.latent, reference)?,
        nominal_speedup: n as f64 / r.sequential_passes as f64,
        latent: r.latent,
    })
}

/// One seeded run: sequential reference, then the configured method.
pub fn run_repeat(cfg: &RunConfig, repeat: usize) -> Result<RunRecord> {
    let field = cfg.build_field()?;
    let grid = cfg.build_grid()?;
    let n = grid.steps();
    let (seed, x0) = initial_latent(cfg, field.dim(), repeat);
    let reference = run_sequential(&*field, &grid, &x0)?;
    let (k, rows) = match cfg.method {
        Method::Sequential => (1, vec![baseline_row(n, &reference.latent, reference.clone())?]),
        Method::Picard => {
            let p = cfg.picard;
            let workers = cfg.workers.unwrap_or(p.window);
            let r = run_picard(&*field, &grid, &x0, p.window, p.tol, workers)?;
            (p.window, vec![baseline_row(n, &reference.latent, r)?])
        }
        Method::Parareal => {
            let m = cfg.coarse_points(n);
            let iters = cfg.parareal.iterations.unwrap_or(1);
            let workers = cfg.workers.unwrap_or(m);
            let r = run_parareal(&*field, &grid, &x0, m, iters, workers)?;
            (m, vec![baseline_row(n, &reference.latent, r)?])
        }
        Method::Chords => {
            let seq = cfg.build_sequence()?;
            let kk = seq.cores();
            let mut opts = ChordsOptions::new(cfg.chords.termination(kk))
                .with_executor(Executor::from_workers(cfg.workers.unwrap_or(kk)));
            opts.verify_executors = cfg.chords.verify_executors;
            let run = run_chords(&*field, &grid, &seq, &x0, &opts)?;
            let rows = run
                .outputs
                .into_iter()
                .map(|o| {
                    Ok(OutputRow {
                        core: o.core,
                        sequential_passes: o.sequential_passes,
                        total_evals: o.total_evals,
                        wall_ms: o.wall_ms,
                        rmse: latent_rmse(&o.latent, &reference.latent)?,
                        nominal_speedup: nominal_speedup(&grid, &seq, o.core)?,
                        latent: o.latent,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (kk, rows)
        }
    };
    Ok(RunRecord {
        method: cfg.method.name().to_string(),
        field: field.label().to_string(),
        n,
        k,
        seed,
        rows,
        reference_digest: digest(&reference.latent),
        reference: reference.latent,
    })
}

/// `(sequential_passes, l1 distance to the final output)` for one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub seed: u64,
    pub points: Vec<(usize, f64)>,
}

impl Curve {
    /// Trapezoid area over sequential passes.
    pub fn area(&self) -> f64 {
        curve_area(&self.points)
    }
}

pub fn curve_area(points: &[(usize, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 as f64 - w[0].0 as f64) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Convergence of the streamed outputs toward the slowest core's output, one
/// curve per repeat. The run is forced to continue until the slowest core emits.
pub fn convergence_curves(cfg: &RunConfig) -> Result<Vec<Curve>> {
    if cfg.method != Method::Chords {
        return Err(Error::config("method", "convergence curves need method \"chords\""));
    }
    match cfg.chords.termination {
        None | Some(Termination::FixedCore { core: 1 }) => {}
        Some(_) => {
            return Err(Error::config(
                "chords.termination",
                "convergence curves need fixed-core termination on core 1",
            ))
        }
    }
    let mut full = cfg.clone();
    full.chords.termination = Some(Termination::exhaustive());
    run_experiment(&full)?
        .into_iter()
        .map(|rec| {
            let last = rec.terminal().latent.clone();
            let points = rec
                .rows
                .iter()
                .map(|r| Ok((r.sequential_passes, l1_distance(&r.latent, &last)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Curve {
                seed: rec.seed,
                points,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config_id: usize,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_speedup: f64,
    pub sd_speedup: f64,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summarizes the terminating output of each record.
pub fn summarize(config_id: usize, records: &[RunRecord]) -> Result<SummaryRow> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("cannot summarize an empty record list"))?;
    let speedups: Vec<f64> = records.iter().map(|r| r.terminal().nominal_speedup).collect();
    let rmses: Vec<f64> = records.iter().map(|r| r.terminal().rmse).collect();
    let (mean_speedup, sd_speedup) = mean_sd(&speedups);
    let (mean_rmse, sd_rmse) = mean_sd(&rmses);
    Ok(SummaryRow {
        config_id,
        method: first.method.clone(),
        k: first.k,
        n: first.n,
        mean_speedup,
        sd_speedup,
        mean_rmse,
        sd_rmse,
    })
}

/// Runs every configuration (concurrently) and returns records and summaries in config order.
pub fn sweep(configs: &[RunConfig]) -> Result<(Vec<Vec<RunRecord>>, Vec<SummaryRow>)> {
    if configs.is_empty() {
        return Err(Error::invalid("sweep needs at least one configuration"));
    }
    let records = configs
        .par_iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>>>()?;
    let summary = records
        .iter()
        .enumerate()
        .map(|(i, r)| summarize(i, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((records, summary))
}

#[derive(Serialize)]
struct RunCsvRow<'a> {
    method: &'a str,
    field: &'a str,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    core: usize,
    sequential_passes: usize,
    total_evals: u64,
    wall_ms: f64,
    rmse: f64,
    nominal_speedup: f64,
}

pub fn write_runs_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in records {
        for row in &rec.rows {
            w.serialize(RunCsvRow {
                method: &rec.method,
                field: &rec.field,
                n: rec.n,
                k: rec.k,
                seed: rec.seed,
                core: row.core,
                sequential_passes: row.sequential_passes,
                total_evals: row.total_evals,
                wall_ms: row.wall_ms,
                rmse: row.rmse,
                nominal_speedup: row.nominal_speedup,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveCsvRow {
    config_id: usize,
    seed: u64,
    sequential_passes: usize,
    l1_to_final: f64,
}

pub fn write_curve_csv(path: &Path, curves: &[(usize, Curve)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, c) in curves {
        for &(p, d) in &c.points {
            w.serialize(CurveCsvRow {
                config_id: *id,
                seed: c.seed,
                sequential_passes: p,
                l1_to_final: d,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
