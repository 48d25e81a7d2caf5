//! `lendaudit`: profit-based fair-lending audits from the command line.
//!
//! Exit codes: 0 success, 1 `diff` found differences, 2 invalid input or
//! configuration, 3 numerical failure. `LENDAUDIT_THREADS` sets the worker
//! thread count; results do not depend on it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lendaudit::pipeline::{self, Overrides, RunConfig};
use lendaudit::report::{diff_reports, AuditReport};
use lendaudit::AuditError;

#[derive(Parser)]
#[command(name = "lendaudit", version, about = "Profit-based fair-lending audit toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every enabled stage and write the report.
    Audit(RunArgs),
    /// Generate a synthetic market from the `[market]` table.
    Simulate(RunArgs),
    /// Fit the blind and aware risk models; write calibration tables and scores.
    Calibrate(RunArgs),
    /// Counterfactual tables from a prior `calibrate` run.
    Counterfactual {
        #[command(flatten)]
        run: RunArgs,
        /// Score artifact, or the directory holding it. Defaults to the output directory.
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Compare two reports cell by cell.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Largest absolute difference treated as equal.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// `weighted` or `argmax`.
    #[arg(long)]
    group_scheme: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, AuditError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            group_scheme: self.group_scheme.clone(),
            seed: self.seed,
            // a flag path is relative to the working directory, not the config
            output_dir: self.out.as_ref().map(|p| std::path::absolute(p).unwrap_or_else(|_| p.clone())),
        })?;
        Ok(cfg)
    }
}

fn threads() -> Result<(), AuditError> {
    let Ok(v) = std::env::var("LENDAUDIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| AuditError::Config(format!("LENDAUDIT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AuditError::Config(format!("cannot start {n} worker threads: {e}")))
}

fn summary(r: &AuditReport, dir: &std::path::Path) {
    println!(
        "wrote {} table(s) to {} ({} warning(s))",
        r.tables.len(),
        dir.display(),
        r.warnings.len()
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<u8, AuditError> {
    threads()?;
    match cli.command {
        Command::Audit(a) => {
            let cfg = a.load()?;
            let r = pipeline::audit(&cfg)?;
            summary(&r, &cfg.output_dir()?);
        }
        Command::Calibrate(a) => {
            let cfg = a.load()?;
            let r = pipeline::calibrate(&cfg)?;
            summary(&r, &cfg.output_dir()?);
        }
        Command::Counterfactual { run, artifact } => {
            let cfg = run.load()?;
            let dir = cfg.output_dir()?;
            let r = pipeline::counterfactual(&cfg, artifact.as_deref().unwrap_or(&dir))?;
            summary(&r, &dir);
        }
        Command::Simulate(a) => {
            let cfg = a.load()?;
            let m = pipeline::simulate(&cfg)?;
            println!(
                "wrote {} applications and {} loans to {}",
                m.dataset.applications.len(),
                m.dataset.loans.len(),
                cfg.output_dir()?.display()
            );
        }
        Command::Diff { a, b, tolerance } => {
            let d = diff_reports(&AuditReport::read(&a)?, &AuditReport::read(&b)?, tolerance)?;
            println!("{}", serde_json::to_string_pretty(&d).expect("diff is plain data"));
            return Ok(if d.is_empty() { 0 } else { 1 });
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
