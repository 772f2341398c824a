use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chords::bench::{self, RunRecord};
use chords::config::RunConfig;
use chords::verify::{run_checks, Fault};
use chords::{discretize_sequence, optimal_continuous_sequence, reward_with, ContinuousInitSequence, InitMode, TimeGrid};
use clap::{Parser, Subcommand, ValueEnum};

const OUT_ENV: &str = "CHORDS_OUT_DIR";

#[derive(Parser)]
#[command(name = "chords", version, about = "Parallel-in-time ODE sampling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration; writes runs.csv and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a JSON array of configurations; writes runs.csv and summary.csv.
    Sweep {
        configs: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convergence of streamed outputs toward the final one; writes curve.csv.
    Curve {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the reward-optimal start times for a speedup and core count.
    OptimalSeq {
        #[arg(long)]
        speedup: f64,
        #[arg(long)]
        cores: usize,
        /// Also discretize onto a uniform grid with this many steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print reward and speedup of a comma-separated list of start times.
    Reward {
        sequence: String,
        #[arg(long, value_enum, default_value_t = InitArg::Chained)]
        init: InitArg,
    },
    /// Run the fast self-checks.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(clap::Args)]
struct Common {
    /// Output directory (overrides the environment and the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 1 selects the single-threaded reference executor.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Chained,
    SingleJump,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn config(err: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, err: err.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<chords::Error>() {
            Some(e) if e.is_config() => 2,
            _ => 1,
        };
        Self { code, err }
    }
}

impl From<chords::Error> for Failure {
    fn from(err: chords::Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Run { config, common } => cmd_run(&config, &common),
        Command::Sweep { configs, common } => cmd_sweep(&configs, &common),
        Command::Curve { config, common } => cmd_curve(&config, &common),
        Command::OptimalSeq { speedup, cores, steps } => cmd_optimal_seq(speedup, cores, steps),
        Command::Reward { sequence, init } => cmd_reward(&sequence, init),
        Command::Verify { inject_fault } => cmd_verify(inject_fault.as_deref()),
    }
}

fn load(path: &Path, common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Flag, then environment, then config, then `./chords-out`.
fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> anyhow::Result<PathBuf> {
    let dir = common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("chords-out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn print_records(records: &[RunRecord]) {
    for r in records {
        let t = r.terminal();
        println!(
            "{} {} N={} K={} seed={}: core {} after {} passes (speedup {:.4}), rmse {:.3e}",
            r.method, r.field, r.n, r.k, r.seed, t.core, t.sequential_passes, t.nominal_speedup, t.rmse
        );
    }
}

fn cmd_run(path: &Path, common: &Common) -> CliResult {
    let cfg = load(path, common)?;
    let records = bench::run_experiment(&cfg)?;
    let dir = out_dir(common, Some(&cfg))?;
    bench::write_runs_csv(&dir.join("runs.csv"), &records)?;
    let summary: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            let t = r.terminal();
            serde_json::json!({
                "method": r.method,
                "field": r.field,
                "N": r.n,
                "K": r.k,
                "seed": r.seed,
                "core": t.core,
                "sequential_passes": t.sequential_passes,
                "total_evals": t.total_evals,
                "speedup": t.nominal_speedup,
                "rmse": t.rmse,
                "reference_digest": r.reference_digest,
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?;
    std::fs::write(dir.join("summary.json"), text).map_err(anyhow::Error::from)?;
    print_records(&records);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(path: &Path, common: &Common) -> CliResult {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::config)?;
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text)
        .with_context(|| format!("{}: expected a JSON array of run configurations", path.display()))
        .map_err(Failure::config)?;
    let mut configs = Vec::with_capacity(raw.len());
    for (i, v) in raw.iter().enumerate() {
        let mut cfg = RunConfig::from_json(&v.to_string())
            .with_context(|| format!("configuration [{i}]"))?;
        if let Some(w) = common.workers {
            cfg.workers = Some(w);
        }
        configs.push(cfg);
    }
    if configs.is_empty() {
        return Err(Failure::config(anyhow!("sweep needs at least one configuration")));
    }
    let (records, summary) = bench::sweep(&configs)?;
    let dir = out_dir(common, Some(&configs[0]))?;
    let flat: Vec<RunRecord> = records.into_iter().flatten().collect();
    bench::write_runs_csv(&dir.join("runs.csv"), &flat)?;
    bench::write_summary_csv(&dir.join("summary.csv"), &summary)?;
    for s in &summary {
        println!(
            "[{}] {} K={} N={}: speedup {:.4} ± {:.4}, rmse {:.3e} ± {:.3e}",
            s.config_id, s.method, s.k, s.n, s.mean_speedup, s.sd_speedup, s.mean_rmse, s.sd_rmse
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_curve(path: &Path, common: &Common) -> CliResult {
    let cfg = load(path, common)?;
    let curves = bench::convergence_curves(&cfg)?;
    let dir = out_dir(common, Some(&cfg))?;
    let tagged: Vec<_> = curves.iter().cloned().map(|c| (0, c)).collect();
    bench::write_curve_csv(&dir.join("curve.csv"), &tagged)?;
    for c in &curves {
        println!("seed {}: {} points, area {:.6e}", c.seed, c.points.len(), c.area());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn cmd_optimal_seq(speedup: f64, cores: usize, steps: Option<usize>) -> CliResult {
    let cont = optimal_continuous_sequence(speedup, cores).map_err(Failure::config)?;
    let list: Vec<String> = cont.starts().iter().map(|&t| short(t)).collect();
    println!("{}", list.join(", "));
    if let Some(n) = steps {
        let grid = TimeGrid::uniform(n).map_err(Failure::config)?;
        let seq = discretize_sequence(&cont, &grid).map_err(Failure::config)?;
        let idx: Vec<String> = seq.indices().iter().map(|i| i.to_string()).collect();
        println!("indices (N = {n}): {}", idx.join(", "));
    }
    Ok(())
}

/// `x` with 12 significant digits, trailing zeros dropped.
fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (11 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn cmd_reward(text: &str, init: InitArg) -> CliResult {
    let starts = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("not a number: `{s}`")))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(Failure::config)?;
    let cont = ContinuousInitSequence::new(starts).map_err(Failure::config)?;
    let mode = match init {
        InitArg::Chained => InitMode::Chained,
        InitArg::SingleJump => InitMode::SingleJump,
    };
    let trace = reward_with(&cont, mode);
    println!("R = {}", sig12(trace.reward));
    println!("S = {}", sig12(cont.speedup()));
    Ok(())
}

fn cmd_verify(fault: Option<&str>) -> CliResult {
    let fault = fault.map(str::parse::<Fault>).transpose().map_err(Failure::config)?;
    let report = run_checks(fault);
    for c in &report {
        println!("{c}");
    }
    let failed: Vec<&str> = report.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            err: anyhow!("failed checks: {}", failed.join(", ")),
        })
    }
}
