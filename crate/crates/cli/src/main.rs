use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use polsbe_cli::bench::{run_bench, BenchSpec};
use polsbe_cli::config::{base_dir, load, ExperimentConfig, SweepSpec};
use polsbe_cli::{cli_gen_env, cli_run, cli_sweep, cli_validate, format_check, with_jobs, CliError};
use polsbe_core::envgen::GeneratorSpec;
use polsbe_core::validation::SuiteOptions;

#[derive(Parser)]
#[command(name = "polsbe", version, about = "Policy optimization with least-squares bonus exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config (experiment, sweep, generator or bench spec, by subcommand)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir, then $POLSBE_OUT_DIR, then ./polsbe-out
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    DisableClipping,
}

#[derive(Subcommand)]
enum Command {
    /// Run the agent and baselines for every configured seed
    Run,
    /// Aggregate final regret over a grid of K and/or gamma
    Sweep,
    /// Run the identity and lemma suite
    Validate {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// Write a generated environment to environment.json
    GenEnv,
    /// Time the MGR and OLSPE kernels
    Bench,
}

fn require_config(path: Option<&Path>) -> Result<&Path, CliError> {
    path.ok_or_else(|| CliError::Config("--config PATH is required".into()))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Run => {
            let path = require_config(cli.config.as_deref())?;
            let config: ExperimentConfig = load(path)?;
            let manifest = cli_run(&config, &base_dir(path), cli.seed, out)?;
            for r in &manifest.runs {
                println!("{:<20} seed {:<6} final regret {:.6}", r.agent, r.seed, r.final_regret);
            }
        }
        Command::Sweep => {
            let path = require_config(cli.config.as_deref())?;
            let spec: SweepSpec = load(path)?;
            for r in cli_sweep(&spec, &base_dir(path), cli.seed, out)? {
                println!(
                    "{:<20} K {:<7} gamma {:<8} mean {:.6} std {:.6}",
                    r.agent,
                    r.episodes,
                    r.gamma.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
                    r.mean_cum_regret,
                    r.std_cum_regret
                );
            }
        }
        Command::Validate {
            instances,
            trials,
            inject_fault,
        } => {
            let options = SuiteOptions {
                instances: *instances,
                coverage_trials: *trials,
                seed: cli.seed.unwrap_or(0),
                disable_clipping: matches!(inject_fault, Some(Fault::DisableClipping)),
            };
            let report = cli_validate(&options, out)?;
            for c in &report.checks {
                println!("{}", format_check(c));
            }
            if !report.all_pass {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                return Err(CliError::Validation(failed.join(", ")));
            }
        }
        Command::GenEnv => {
            let path = require_config(cli.config.as_deref())?;
            let spec: GeneratorSpec = load(path)?;
            println!("{}", cli_gen_env(&spec, cli.seed, out)?.display());
        }
        Command::Bench => {
            let spec: BenchSpec = match cli.config.as_deref() {
                Some(p) => load(p)?,
                None => BenchSpec::default(),
            };
            for r in run_bench(&spec, cli.seed.unwrap_or(0))? {
                println!("{:<6} {:>12.2} µs/call over {} calls", r.kernel, r.mean_micros, r.repeats);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_jobs(cli.jobs, || dispatch(&cli)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
