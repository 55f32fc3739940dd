use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rirl_harness::config::parse_seed_range;
use rirl_harness::plots::emit_plots;
use rirl_harness::runner::{self, read_rows, ResultRow, Study};
use rirl_harness::stats::summarize;
use rirl_harness::{ExperimentConfig, HarnessError};

/// Robust IRL experiments: noise sweeps, penetration trials and the Gibbs
/// convergence study.
#[derive(Parser, Debug)]
#[command(name = "rirl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seeds to run, `a..b` with `b` excluded (overrides the config).
    #[arg(long, global = true)]
    seed_range: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// ILE against noise level for each method.
    Sweep,
    /// Penetration success rate for each method (patrol domain).
    Attack,
    /// ILE and wall time against the Gibbs stopping threshold.
    Convergence,
    /// Charts for every results CSV in the output directory.
    Plot,
    /// Checks the config and prints it with its hash.
    ValidateConfig,
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(r) = &common.seed_range {
        cfg.set_seed_range(parse_seed_range(r)?)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(rows: &[ResultRow]) {
    println!("method,x,n,failed,mean_ile,success_rate,mean_wall_time_s");
    for g in summarize(rows) {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        println!(
            "{},{},{},{},{},{},{:.3}",
            g.method,
            g.x,
            g.n,
            g.failed,
            opt(g.mean_ile),
            opt(g.success_rate),
            g.mean_wall_time
        );
    }
}

fn run(cli: &Cli) -> Result<ExitCode, HarnessError> {
    let cfg = load(&cli.common)?;
    let study = match cli.command {
        Command::Sweep => Study::Sweep,
        Command::Attack => Study::Attack,
        Command::Convergence => Study::Convergence,
        Command::ValidateConfig => {
            println!("# config_hash={}", cfg.hash());
            print!(
                "{}",
                toml::to_string(&cfg).map_err(|e| HarnessError::Validation(e.to_string()))?
            );
            return Ok(ExitCode::SUCCESS);
        }
        Command::Plot => {
            let mut rows = Vec::new();
            for entry in std::fs::read_dir(&cfg.output)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "csv") {
                    rows.extend(read_rows(&path)?.1);
                }
            }
            for path in emit_plots(&rows, &cfg.output)? {
                println!("{}", path.display());
            }
            return Ok(ExitCode::SUCCESS);
        }
    };
    let rows = match study {
        Study::Sweep => runner::run_noise_sweep(&cfg)?,
        Study::Attack => runner::run_success_rate(&cfg)?,
        Study::Convergence => runner::run_convergence_study(&cfg)?,
    };
    print_summary(&rows);
    emit_plots(&rows, &cfg.output)?;
    let failed: Vec<&ResultRow> = rows.iter().filter(|r| !r.is_ok()).collect();
    for r in &failed {
        eprintln!("{} σ={} seed={}: {}", r.method, r.sigma, r.seed, r.status);
    }
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e @ HarnessError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
