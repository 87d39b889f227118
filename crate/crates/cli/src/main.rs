//! `qst`: run simulations, figure scans and the cross-check report.
//!
//! Exit status: 0 on success, 1 for configuration errors, 2 for numerical
//! failures or disagreement between engines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qst_core::analytics::ReportConfig;
use qst_core::harness::{
    run_report, run_scan_fig1, run_scan_fig2, run_scan_fig3, run_simulate, to_csv, ExperimentConfig, Fig1Config,
    Fig2Config, Fig3Config, ScanRecord,
};
use qst_core::Error;

#[derive(Parser)]
#[command(name = "qst", version, about = "Noisy state transfer on fully connected XY networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "QST_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One configuration, one CSV row per time point.
    Simulate(Common),
    /// F(t, eta) surface for four nodes with noise on edge 3-4.
    Fig1(Common),
    /// Delta(t) for n in a range with m = n - 2.
    Fig2(Common),
    /// Delta(t) at n = 10 for m in a range.
    Fig3(Common),
    /// Cross-checks between engines and printed closed forms (JSON).
    Report(Common),
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericFailure { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = read(p)?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn read(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Config(format!("cannot write to stdout: {e}"))),
    }
}

/// Writes `<out>.meta.json` next to a figure CSV.
fn emit_meta(out: &Option<PathBuf>, meta: serde_json::Value) -> Result<(), Failure> {
    if let Some(p) = out {
        let mut name = p.as_os_str().to_owned();
        name.push(".meta.json");
        let text = serde_json::to_string_pretty(&meta).expect("metadata serialises") + "\n";
        fs::write(&name, text).map_err(|e| Failure::Config(format!("cannot write metadata: {e}")))?;
    }
    Ok(())
}

fn csv(records: Result<Vec<ScanRecord>, Error>) -> Result<String, Failure> {
    Ok(to_csv(&records?))
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate(c) => {
            let path = c
                .config
                .as_ref()
                .ok_or_else(|| Failure::Config("simulate needs --config".into()))?;
            let mut cfg = ExperimentConfig::from_json(&read(path)?)?;
            if let Some(s) = c.seed {
                cfg.master_seed = s;
            }
            emit(&c.out, &csv(run_simulate(&cfg))?)
        }
        Command::Fig1(c) => {
            let cfg: Fig1Config = read_config(&c.config)?;
            emit(&c.out, &csv(run_scan_fig1(&cfg))?)?;
            emit_meta(
                &c.out,
                json!({ "figure": "fig1", "n": 4, "noisy_edge": [3, 4], "config": cfg }),
            )
        }
        Command::Fig2(c) => {
            let cfg: Fig2Config = read_config(&c.config)?;
            emit(&c.out, &csv(run_scan_fig2(&cfg))?)?;
            emit_meta(
                &c.out,
                json!({ "figure": "fig2", "time_axis": "t_k = k t_max / t_steps, k = 1..t_steps", "config": cfg }),
            )
        }
        Command::Fig3(c) => {
            let cfg: Fig3Config = read_config(&c.config)?;
            emit(&c.out, &csv(run_scan_fig3(&cfg))?)?;
            emit_meta(
                &c.out,
                json!({ "figure": "fig3", "time_axis": "t_k = k t_max / t_steps, k = 1..t_steps", "config": cfg }),
            )
        }
        Command::Report(c) => {
            let mut cfg: ReportFile = read_config(&c.config)?;
            if let Some(s) = c.seed {
                cfg.master_seed = s;
            }
            let report = run_report(&cfg.into())?;
            emit(&c.out, &(report.to_json() + "\n"))?;
            eprint!("{}", report.to_text());
            if report.has_engine_mismatch() {
                return Err(Failure::Numeric("engines disagree; see the mismatch rows".into()));
            }
            Ok(())
        }
    }
}

/// On-disk form of [`ReportConfig`].
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReportFile {
    n_traj: usize,
    dt: f64,
    master_seed: u64,
    zeno_eta: f64,
}

impl Default for ReportFile {
    fn default() -> Self {
        let d = ReportConfig::default();
        Self {
            n_traj: d.n_traj,
            dt: d.dt,
            master_seed: d.master_seed,
            zeno_eta: d.zeno_eta,
        }
    }
}

impl From<ReportFile> for ReportConfig {
    fn from(f: ReportFile) -> Self {
        ReportConfig {
            n_traj: f.n_traj,
            dt: f.dt,
            master_seed: f.master_seed,
            zeno_eta: f.zeno_eta,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Simulate(c) | Command::Fig1(c) | Command::Fig2(c) | Command::Fig3(c) | Command::Report(c) => c.threads,
    };
    if let Some(k) = threads {
        if k == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
