//! Experiment harness behind the `polsbe` binary.

pub mod bench;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use polsbe_core::agent::{dataset_independence, run_agent, AgentConfig, RegretReport, RunOptions, SampleCounts, Variant};
use polsbe_core::baselines::{best_in_hindsight_baseline, known_dynamics_omd_baseline, uniform_baseline};
use polsbe_core::envgen::{make_adversary, random_linmdp, AdversaryKind, GeneratorSpec};
use polsbe_core::model::LinearMdpModel;
use polsbe_core::olspe::ClipRule;
use polsbe_core::validation::{run_suite, CheckResult, SuiteOptions};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use config::{BaselineKind, ExperimentConfig, SweepSpec};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "POLSBE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "polsbe-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Config(_) | Self::Io { .. } => 2,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Output directory: explicit flag, then config, then the environment
/// variable, then `polsbe-out`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Runs `f` on a pool of `jobs` threads (0 picks the rayon default).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// One finished `(agent, seed)` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub agent: String,
    pub seed: u64,
    pub csv: String,
    pub final_regret: f64,
    pub samples: SampleCounts,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub report: RegretReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvironmentSummary {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub agent_config: AgentConfig,
    pub environment: EnvironmentSummary,
    pub adversary_kind: AdversaryKind,
    pub adversary_oblivious: bool,
    pub runs: Vec<RunRecord>,
}

fn agent_label(config: &AgentConfig) -> &'static str {
    match config.variant {
        Variant::Blocking => "polsbe_blocking",
        Variant::Simulator => "polsbe_simulator",
    }
}

fn record(agent: &str, seed: u64, report: RegretReport, flags: Vec<String>) -> RunRecord {
    RunRecord {
        agent: agent.to_string(),
        seed,
        csv: format!("{agent}_seed{seed}.csv"),
        final_regret: report.final_regret(),
        samples: report.samples.clone(),
        flags,
        report,
    }
}

/// Runs the agent and baselines for every seed, in memory.
pub fn execute(config: &ExperimentConfig, model: &LinearMdpModel<f64>) -> Result<(AgentConfig, Vec<RunRecord>), CliError> {
    config.check()?;
    let agent_config = config.agent_config(model)?;
    agent_config
        .resolve(model.feature_dim(), model.horizon())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let label = agent_label(&agent_config);
    let options = RunOptions {
        diagnostics: config.diagnostics,
        clip: ClipRule::Standard,
    };
    let per_seed: Vec<Vec<RunRecord>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let adversary = make_adversary(&config.adversary_for_seed(seed), model)
                .map_err(|e| CliError::Config(format!("adversary: {e}")))?;
            let out = run_agent(model, &adversary, config.episodes, &agent_config, seed, options)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let fresh = agent_config.variant == Variant::Simulator;
            dataset_independence(&out.dataset_sources, fresh)
                .map_err(|e| CliError::Validation(format!("seed {seed}: {e}")))?;
            let mut flags = out.report.flags.clone();
            flags.push(format!(
                "datasets {}",
                if fresh { "fresh per episode" } else { "from the opposite half-block" }
            ));
            let mut records = vec![record(label, seed, out.report, flags)];
            for &b in &config.baselines {
                let report = match b {
                    BaselineKind::Uniform => uniform_baseline(model, &adversary, config.episodes).report,
                    BaselineKind::KnownDynamicsOmd => {
                        let eta = config.baseline_eta.unwrap_or(agent_config.eta);
                        known_dynamics_omd_baseline(model, &adversary, config.episodes, eta).report
                    }
                    BaselineKind::BestInHindsightOracle => {
                        best_in_hindsight_baseline(model, &adversary, config.episodes)
                            .expect("checked oblivious")
                            .report
                    }
                };
                records.push(record(b.label(), seed, report, Vec::new()));
            }
            Ok(records)
        })
        .collect::<Result<_, CliError>>()?;
    Ok((agent_config, per_seed.into_iter().flatten().collect()))
}

/// CSV text for one report. Decomposition columns appear when present.
pub fn report_csv(report: &RegretReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let dec = report.decomposition.as_ref();
    let mut header = vec!["k", "value_pik", "value_pistar", "cum_regret"];
    if dec.is_some() {
        header.extend(["bias1", "bias2", "omd", "exploration"]);
    }
    w.write_record(&header).expect("in-memory write");
    for k in 0..report.episodes() {
        let mut row = vec![
            (k + 1).to_string(),
            report.value_pik[k].to_string(),
            report.value_pistar[k].to_string(),
            report.cumulative_regret[k].to_string(),
        ];
        if let Some(d) = dec {
            row.extend([d.bias1[k], d.bias2[k], d.omd[k], d.exploration[k]].map(|x| x.to_string()));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(contents))
        .map_err(CliError::io(path))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// `run`: executes the experiment and writes one CSV per `(agent, seed)`
/// plus `manifest.json`.
pub fn cli_run(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: Option<u64>,
    out_flag: Option<&Path>,
) -> Result<Manifest, CliError> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.seeds = vec![s];
    }
    let model = config.load_model(base_dir)?;
    let (agent_config, runs) = execute(&config, &model)?;
    let out = resolve_out_dir(out_flag, config.output_dir.as_deref());
    create_dir(&out)?;
    for r in &runs {
        write_file(&out.join(&r.csv), report_csv(&r.report).as_bytes())?;
    }
    let manifest = Manifest {
        environment: EnvironmentSummary {
            num_states: model.num_states(),
            num_actions: model.num_actions(),
            horizon: model.horizon(),
            feature_dim: model.feature_dim(),
        },
        adversary_kind: config.adversary.kind,
        adversary_oblivious: config.adversary.is_oblivious(),
        agent_config,
        config,
        runs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// Per-cell statistics of the final cumulative regret.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub agent: String,
    pub episodes: usize,
    pub gamma: Option<f64>,
    pub replications: usize,
    pub mean_cum_regret: f64,
    pub std_cum_regret: f64,
    pub se_cum_regret: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Runs every cell of the sweep (cells in parallel) and aggregates.
pub fn sweep_rows(spec: &SweepSpec, base_dir: &Path, base_seed: u64) -> Result<Vec<SweepRow>, CliError> {
    spec.check()?;
    let model = spec.experiment.load_model(base_dir)?;
    let cells: Vec<Vec<SweepRow>> = spec
        .cells()
        .par_iter()
        .map(|&cell| {
            let exp = spec.cell_experiment(cell, base_seed);
            let (agent_config, runs) = execute(&exp, &model)?;
            let mut labels = vec![agent_label(&agent_config).to_string()];
            labels.extend(exp.baselines.iter().map(|b| b.label().to_string()));
            Ok(labels
                .into_iter()
                .map(|agent| {
                    let finals: Vec<f64> = runs.iter().filter(|r| r.agent == agent).map(|r| r.final_regret).collect();
                    let (mean, std) = mean_std(&finals);
                    SweepRow {
                        agent,
                        episodes: cell.episodes,
                        gamma: cell.gamma,
                        replications: finals.len(),
                        mean_cum_regret: mean,
                        std_cum_regret: std,
                        se_cum_regret: std / (finals.len() as f64).sqrt(),
                    }
                })
                .collect())
        })
        .collect::<Result<_, CliError>>()?;
    Ok(cells.into_iter().flatten().collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "agent",
        "episodes",
        "gamma",
        "replications",
        "mean_cum_regret",
        "std_cum_regret",
        "se_cum_regret",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.agent.clone(),
            r.episodes.to_string(),
            r.gamma.map(|g| g.to_string()).unwrap_or_default(),
            r.replications.to_string(),
            r.mean_cum_regret.to_string(),
            r.std_cum_regret.to_string(),
            r.se_cum_regret.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// `sweep`: writes `sweep.csv`.
pub fn cli_sweep(spec: &SweepSpec, base_dir: &Path, seed: Option<u64>, out_flag: Option<&Path>) -> Result<Vec<SweepRow>, CliError> {
    let rows = sweep_rows(spec, base_dir, seed.unwrap_or(0))?;
    let out = resolve_out_dir(out_flag, spec.experiment.output_dir.as_deref());
    create_dir(&out)?;
    write_file(&out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub options: SuiteOptions,
    pub all_pass: bool,
    pub checks: Vec<CheckResult>,
}

pub fn format_check(c: &CheckResult) -> String {
    let ci = c.ci.map(|x| format!(" ± {x:.3e}")).unwrap_or_default();
    format!(
        "{} {:<32} observed {:>11.4e}  bound {:>11.4e}{ci}  {}",
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.observed,
        c.bound,
        c.detail
    )
}

/// `validate`: runs the suite, writes `validation_report.json`, and fails
/// if any check fails.
pub fn cli_validate(options: &SuiteOptions, out_flag: Option<&Path>) -> Result<ValidationReport, CliError> {
    let checks = run_suite(options).map_err(|e| CliError::Validation(e.to_string()))?;
    let report = ValidationReport {
        options: *options,
        all_pass: checks.iter().all(|c| c.pass),
        checks,
    };
    let out = resolve_out_dir(out_flag, None);
    create_dir(&out)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out.join("validation_report.json"), text.as_bytes())?;
    Ok(report)
}

/// `gen-env`: builds a model from a generator spec and writes
/// `environment.json`.
pub fn cli_gen_env(spec: &GeneratorSpec, seed: Option<u64>, out_flag: Option<&Path>) -> Result<PathBuf, CliError> {
    let mut spec = spec.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let model: LinearMdpModel<f64> = random_linmdp(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let out = resolve_out_dir(out_flag, None);
    create_dir(&out)?;
    let path = out.join("environment.json");
    write_file(&path, model.to_json().as_bytes())?;
    Ok(path)
}
