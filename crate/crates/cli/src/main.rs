use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use steady_core::analysis::{agreement_report, correlation_report, AgreementReport, CorrelationReport};
use steady_core::env::Session;
use steady_core::feedback::{write_csv, FeedbackLog};
use steady_core::harness::{
    cohort, ingest_log, prepare, record_session, run_on_logs, simulate_logs, train_oracle, ExperimentConfig,
};
use steady_core::oracle::{value_iteration, QTable};
use steady_core::teachers::{verify_calibration, CalibrationReport};

#[derive(Parser)]
#[command(name = "steady", version, about = "Scalar feedback stabilization experiments")]
struct Cli {
    /// Experiment config as JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train the oracle Q-table and write it out.
    TrainOracle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Train the behavior checkpoint and record the 200-clip session pair.
    GenSessions {
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the teacher cohort and write its feedback CSV.
    SimulateTeachers {
        #[arg(long)]
        out: PathBuf,
        /// Also write the drawn teacher profiles as JSON.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Train and evaluate one model per teacher and condition.
    RunExperiment {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Feedback CSV to use instead of simulated teachers.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Self-agreement, bias and correlation statistics of a feedback log.
    Analyze {
        #[arg(long)]
        out: PathBuf,
        /// Feedback CSV to analyze instead of simulated teachers.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Run the HTTP teaching service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.master_seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn greedy_agreement(q: &QTable, gamma: f64, config: &ExperimentConfig) -> Result<f64> {
    let env = steady_core::Env::new(config.env.clone())?;
    let vi = value_iteration(&env, gamma, 1e-10);
    let states: Vec<_> = steady_core::env::enumerate_states()
        .into_iter()
        .filter(|s| !env.is_terminal(*s))
        .collect();
    let same = states.iter().filter(|&&s| {
        let best = vi.value(s);
        (vi.q(s, q.greedy(s)) - best).abs() < 1e-9
    });
    Ok(same.count() as f64 / states.len() as f64)
}

#[derive(Serialize)]
struct SessionFile<'a> {
    master_seed: u64,
    checkpoint_episodes: usize,
    checkpoint_success_rate: f64,
    checkpoint_in_band: bool,
    session: &'a Session,
}

#[derive(Serialize)]
struct AnalysisFile {
    master_seed: u64,
    agreement: AgreementReport,
    calibration: Option<CalibrationReport>,
    correlations: Vec<CorrelationReport>,
}

fn logs_or_simulate(config: &ExperimentConfig, logs: Option<&Path>) -> Result<(steady_core::harness::Prepared, Vec<FeedbackLog>)> {
    let prepared = prepare(config)?;
    let logs = match logs {
        Some(p) => ingest_log(p)?,
        None => simulate_logs(config, &prepared),
    };
    Ok((prepared, logs))
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::TrainOracle { out, format } => {
            let q = train_oracle(&config)?;
            let mut w = create(&out)?;
            match format {
                Format::Csv => q.values.write_csv(&mut w)?,
                Format::Json => w.write_all(q.values.to_json()?.as_bytes())?,
            }
            w.flush()?;
            let agree = greedy_agreement(&q, config.oracle.gamma, &config)?;
            eprintln!("greedy policy matches value iteration on {:.1}% of states", 100.0 * agree);
        }
        Command::GenSessions { out } => {
            let (_, checkpoint, session) = record_session(&config)?;
            write_json(
                &out,
                &SessionFile {
                    master_seed: config.master_seed,
                    checkpoint_episodes: checkpoint.episodes,
                    checkpoint_success_rate: checkpoint.success_rate,
                    checkpoint_in_band: checkpoint.in_band,
                    session: &session,
                },
            )?;
            eprintln!(
                "checkpoint after {} episodes, behavior success rate {:.3}",
                checkpoint.episodes, checkpoint.success_rate
            );
        }
        Command::SimulateTeachers { out, profiles } => {
            let prepared = prepare(&config)?;
            let logs = simulate_logs(&config, &prepared);
            let mut w = create(&out)?;
            write_csv(&logs, &mut w)?;
            w.flush()?;
            if let Some(p) = profiles {
                write_json(&p, &cohort(&config))?;
            }
            eprintln!("wrote {} teacher logs", logs.len());
        }
        Command::RunExperiment { out, format, logs } => {
            let (prepared, logs) = logs_or_simulate(&config, logs.as_deref())?;
            let table = run_on_logs(&config, &prepared, &logs)?;
            let mut w = create(&out)?;
            match format {
                Format::Csv => table.write_csv(&mut w)?,
                Format::Json => {
                    w.write_all(table.to_json()?.as_bytes())?;
                    w.write_all(b"\n")?;
                }
            }
            w.flush()?;
            for s in &table.summary {
                eprintln!("{:<20} n={:<3} mean={:>7.3} sd={:>7.3}", s.condition.name(), s.n, s.mean, s.sd);
            }
        }
        Command::Analyze { out, logs } => {
            let (prepared, logs) = logs_or_simulate(&config, logs.as_deref())?;
            if logs.is_empty() {
                bail!("no feedback logs to analyze");
            }
            let agreement = agreement_report(&logs)?;
            let calibration = verify_calibration(&logs).ok();
            let correlations = logs
                .iter()
                .map(|l| correlation_report(l, &prepared.oracle, &prepared.session.clips))
                .collect::<Result<Vec<_>, _>>()?;
            write_json(
                &out,
                &AnalysisFile {
                    master_seed: config.master_seed,
                    agreement,
                    calibration,
                    correlations,
                },
            )?;
        }
        Command::Serve { port } => {
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on 127.0.0.1:{port}");
            rt.block_on(steady_serve::serve(config, port))?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
