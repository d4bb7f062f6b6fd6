//! `lrb` command line: run scenario configs, verify property suites, sweep
//! tuning grids and evaluate bounds from JSON.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lrb_core::bounds::{evaluate, BoundInputs};
use lrb_core::config::{RecordFormat, RunConfig};
use lrb_core::experiments::{run_scenario, run_sweep, write_records_csv, ScenarioSummary, SweepRow, VerdictKind};
use lrb_core::verify::{run_verify, VerifyOptions};
use lrb_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lrb", version, about = "Lasso vs Lasso-Ridge refinement: risk-dominance certification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Worker threads (falls back to LRB_THREADS, then the config, then all cores).
    #[arg(long, env = "LRB_THREADS")]
    pub threads: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Master seed applied to every scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-rep record format.
    #[arg(long, value_parser = ["csv", "json"])]
    pub format: Option<String>,
    /// Progress messages on stderr.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every scenario of a config and certify the bounds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated scenario ids to keep.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Override the replication count of every scenario.
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the property suites.
    Verify {
        /// Comma-separated suite names.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Random instances per instance-based suite.
        #[arg(long)]
        instances: Option<usize>,
        /// Monte Carlo draws per estimate.
        #[arg(long)]
        mc_reps: Option<usize>,
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Grid over lambda_L (multiples of the universal rate) and c.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        lambda_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "3")]
        c_grid: Vec<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate every bound from a JSON object (or array) of bound inputs.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Error classified by exit code.
enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAIL
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Run { config, only, reps, common } => {
            let cfg = load_config(&config, &only, reps, &common)?;
            let pool = make_pool(threads(&common, &cfg))?;
            cmd_run(&cfg, &pool, out, err)
        }
        Command::Verify { only, instances, mc_reps, inject_fault, common } => {
            let mut opts = VerifyOptions { inject_fault, ..VerifyOptions::default() };
            if let Some(i) = instances {
                opts.instances = i;
            }
            if let Some(m) = mc_reps {
                opts.mc_reps = m;
            }
            if let Some(s) = common.seed {
                opts.seed = s;
            }
            if let Some(bad) = only.iter().find(|n| !lrb_core::verify::SUITES.contains(&n.as_str())) {
                return Err(Failure::Config(format!(
                    "unknown suite `{bad}` (known: {})",
                    lrb_core::verify::SUITES.join(", ")
                )));
            }
            let pool = make_pool(common.threads)?;
            cmd_verify(&only, &opts, &common, &pool, out)
        }
        Command::Sweep { config, only, lambda_grid, c_grid, reps, common } => {
            if lambda_grid.is_empty() || c_grid.is_empty() {
                return Err(Failure::Config("sweep grids must be non-empty".into()));
            }
            let cfg = load_config(&config, &only, reps, &common)?;
            let pool = make_pool(threads(&common, &cfg))?;
            cmd_sweep(&cfg, &lambda_grid, &c_grid, &pool, out, err)
        }
        Command::Bounds { config, out_dir } => cmd_bounds(&config, out_dir.as_deref(), out),
    }
}

fn load_config(path: &Path, only: &[String], reps: Option<usize>, common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if !only.is_empty() {
        cfg.retain_scenarios(only)?;
    }
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(r) = reps {
        cfg.override_replications(r);
    }
    if let Some(dir) = &common.out_dir {
        cfg.output.out_dir = dir.clone();
    }
    if let Some(f) = &common.format {
        cfg.output.format = f.parse()?;
    }
    cfg.verbosity = cfg.verbosity.max(common.verbose);
    cfg.validate()?;
    Ok(cfg)
}

fn threads(common: &Common, cfg: &RunConfig) -> Option<usize> {
    common.threads.or(cfg.threads)
}

fn make_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if threads == Some(0) {
        return Err(Failure::Config("--threads must be >= 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    Ok(builder.build().context("building the worker pool")?)
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

fn cmd_run(
    cfg: &RunConfig,
    pool: &rayon::ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let dir = &cfg.output.out_dir;
    prepare_dir(dir)?;
    let mut summaries: Vec<ScenarioSummary> = Vec::new();
    for s in &cfg.scenarios {
        if cfg.verbosity > 0 {
            let _ = writeln!(err, "running {} ({} reps)", s.id, s.replications);
        }
        let (summary, records) = pool.install(|| run_scenario(s)).with_context(|| format!("scenario `{}`", s.id))?;
        match cfg.output.format {
            RecordFormat::Csv => {
                let path = dir.join(format!("{}_records.csv", s.id));
                let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_records_csv(std::io::BufWriter::new(f), &s.id, summary.lambda_l, &records)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            RecordFormat::Json => write_json(&dir.join(format!("{}_records.json", s.id)), &records)?,
        }
        write_json(&dir.join(format!("{}_summary.json", s.id)), &summary)?;
        summaries.push(summary);
    }
    write_json(&dir.join("summary.json"), &summaries)?;
    print_table(&summaries, out);
    let failed = summaries.iter().any(ScenarioSummary::any_fail);
    Ok(if failed { EXIT_FAIL } else { EXIT_OK })
}

fn print_table(summaries: &[ScenarioSummary], out: &mut dyn Write) {
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:<15} {:>13} {:>13} {:>11} {:>13}  verdict",
        "scenario", "c", "check", "bound", "estimate", "se", "margin"
    );
    for s in summaries {
        for v in &s.verdicts {
            let c = v.c.map_or("-".to_string(), |c| format!("{c}"));
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:<15} {:>13} {:>13} {:>11} {:>13}  {}{}",
                s.scenario_id,
                c,
                v.check,
                fmt_num(v.bound),
                fmt_num(v.estimate),
                fmt_num(v.se),
                fmt_num(v.margin),
                v.verdict,
                v.detail.as_ref().map_or(String::new(), |d| format!(" ({d})")),
            );
        }
    }
    let fails = summaries.iter().flat_map(|s| &s.verdicts).filter(|v| v.verdict == VerdictKind::Fail).count();
    let _ = writeln!(out, "{} scenario(s), {fails} failing check(s)", summaries.len());
}

fn cmd_verify(
    only: &[String],
    opts: &VerifyOptions,
    common: &Common,
    pool: &rayon::ThreadPool,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let reports = pool.install(|| run_verify(only, opts))?;
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<16} {verdict}  ({} checks, {} failures)", r.name, r.checks, r.failures);
        for n in &r.notes {
            let _ = writeln!(out, "    {n}");
        }
    }
    if let Some(dir) = &common.out_dir {
        prepare_dir(dir)?;
        write_json(&dir.join("verify.json"), &reports)?;
    }
    Ok(if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_FAIL })
}

fn write_sweep_csv(path: &Path, id: &str, rows: &[SweepRow]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    w.write_record([
        "scenario_id",
        "lambda_multiple",
        "lambda_L",
        "c",
        "dmse_hat",
        "se",
        "bound_kind",
        "bound",
        "verdict",
        "p_nonempty_hat",
        "positivity_threshold",
        "universal",
    ])
    .context("writing sweep header")?;
    for r in rows {
        w.write_record([
            id.to_string(),
            format!("{:?}", r.lambda_multiple),
            format!("{:?}", r.lambda_l),
            format!("{:?}", r.c),
            format!("{:?}", r.dmse_hat),
            format!("{:?}", r.se),
            r.bound_kind.clone().unwrap_or_default(),
            opt(r.bound),
            r.verdict.map_or(String::new(), |v| v.to_string()),
            format!("{:?}", r.p_nonempty_hat),
            opt(r.positivity_threshold),
            u8::from(r.universal).to_string(),
        ])
        .context("writing sweep row")?;
    }
    w.flush().context("flushing sweep CSV")?;
    Ok(())
}

fn cmd_sweep(
    cfg: &RunConfig,
    lambda_grid: &[f64],
    c_grid: &[f64],
    pool: &rayon::ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let dir = &cfg.output.out_dir;
    prepare_dir(dir)?;
    let mut failed = false;
    let _ = writeln!(
        out,
        "{:<24} {:>8} {:>11} {:>6} {:>13} {:>11} {:>13}  verdict",
        "scenario", "lambda_x", "lambda_L", "c", "dmse_hat", "se", "bound"
    );
    for s in &cfg.scenarios {
        if cfg.verbosity > 0 {
            let _ = writeln!(err, "sweeping {}", s.id);
        }
        let rows =
            pool.install(|| run_sweep(s, lambda_grid, c_grid)).with_context(|| format!("scenario `{}`", s.id))?;
        for r in &rows {
            failed |= r.verdict == Some(VerdictKind::Fail);
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>11} {:>6} {:>13} {:>11} {:>13}  {}{}",
                s.id,
                format!("{}x", r.lambda_multiple),
                fmt_num(r.lambda_l),
                r.c,
                fmt_num(r.dmse_hat),
                fmt_num(r.se),
                r.bound.map_or("-".into(), fmt_num),
                r.verdict.map_or("-".into(), |v| v.to_string()),
                if r.universal { "  <- universal rate" } else { "" },
            );
        }
        match cfg.output.format {
            RecordFormat::Csv => write_sweep_csv(&dir.join(format!("{}_sweep.csv", s.id)), &s.id, &rows)?,
            RecordFormat::Json => write_json(&dir.join(format!("{}_sweep.json", s.id)), &rows)?,
        }
    }
    Ok(if failed { EXIT_FAIL } else { EXIT_OK })
}

fn cmd_bounds(path: &Path, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("config error at line {}: {e}", e.line())))?;
    let many = value.is_array();
    let inputs: Vec<BoundInputs> =
        if many { serde_json::from_value(value) } else { serde_json::from_value(value).map(|one| vec![one]) }
            .map_err(|e| Failure::Config(format!("invalid bound inputs: {e}")))?;
    let reports = inputs
        .iter()
        .map(|i| evaluate(i).map_err(|e| Failure::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let text = if many { serde_json::to_string_pretty(&reports) } else { serde_json::to_string_pretty(&reports[0]) }
        .context("serializing bound report")?;
    let _ = writeln!(out, "{text}");
    if let Some(dir) = out_dir {
        prepare_dir(dir)?;
        fs::write(dir.join("bounds.json"), text + "\n").context("writing bounds.json")?;
    }
    Ok(EXIT_OK)
}
