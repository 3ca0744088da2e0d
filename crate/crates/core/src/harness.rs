//! End-to-end comparison of feedback transforms.
//!
//! One master seed fixes the oracle, the behavior checkpoint, the recorded
//! session pair and the teacher cohort. Every teacher log is turned into a
//! reward sequence by each condition's transform, a fresh TAMER table learns
//! it once in clip order, and the greedy policy is scored over `eval_runs`
//! noisy rollouts. Scalar teacher `i`, binary teacher `i` and ceiling model
//! `i` share evaluation seeds.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::mean_sd;
use crate::baselines::{self, BaselineError, WindowState};
use crate::env::{Env, EnvConfig, EnvError, Session, SessionParams, Transition};
use crate::feedback::{self, FeedbackError, FeedbackLog, FeedbackValue, Modality};
use crate::oracle::{train_partial, train_q, EpsilonGreedy, OracleError, PartialCheckpoint, PartialCriterion, QParams, QTable};
use crate::rng::{derive_seed, seeded};
use crate::steady::{SteadyConfig, SteadyError, SteadyState};
use crate::tamer::{evaluate, train_from_log, DEFAULT_ALPHA};
use crate::teachers::{generate_cohort, generate_log, CohortParams, TeacherProfile};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const COHORT_MEAN_ID: &str = "__cohort_mean__";
pub const COHORT_SD_ID: &str = "__cohort_sd__";

const TAG_ORACLE: u64 = 1;
const TAG_PARTIAL: u64 = 2;
const TAG_SESSION: u64 = 3;
const TAG_COHORT: u64 = 4;
const TAG_EVAL: u64 = 5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Steady(#[from] SteadyError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("condition {condition} needs {modality} feedback but teacher {teacher} is {found}")]
    WrongModality {
        condition: Condition,
        modality: Modality,
        teacher: String,
        found: Modality,
    },
    #[error("results table is empty")]
    EmptyResults,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Binary,
    RawScalar,
    Midpoint,
    SlidingWindow,
    Steady,
    EnvRewardCeiling,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Binary,
        Condition::RawScalar,
        Condition::Midpoint,
        Condition::SlidingWindow,
        Condition::Steady,
        Condition::EnvRewardCeiling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Binary => "binary",
            Condition::RawScalar => "raw_scalar",
            Condition::Midpoint => "midpoint",
            Condition::SlidingWindow => "sliding_window",
            Condition::Steady => "steady",
            Condition::EnvRewardCeiling => "env_reward_ceiling",
        }
    }

    /// Modality of the logs the condition consumes; `None` for the ceiling.
    pub fn modality(self) -> Option<Modality> {
        match self {
            Condition::Binary => Some(Modality::Binary),
            Condition::EnvRewardCeiling => None,
            _ => Some(Modality::Scalar),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub oracle: QParams,
    /// Learning parameters of the behavior checkpoint.
    pub behavior: QParams,
    pub partial: PartialCriterion,
    pub session: SessionParams,
    pub cohort: CohortParams,
    pub steady: SteadyConfig,
    pub window: usize,
    pub alpha: f64,
    pub conditions: Vec<Condition>,
    pub eval_runs: usize,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            oracle: QParams::default(),
            behavior: QParams::behavior(),
            partial: PartialCriterion::default(),
            session: SessionParams::default(),
            cohort: CohortParams::default(),
            steady: SteadyConfig::default(),
            window: 20,
            alpha: DEFAULT_ALPHA,
            conditions: Condition::ALL.to_vec(),
            eval_runs: 10,
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        self.oracle.validate()?;
        self.behavior.validate()?;
        if self.conditions.is_empty() {
            return Err(HarnessError::Config("at least one condition is required".into()));
        }
        if self.eval_runs == 0 {
            return Err(HarnessError::Config("eval_runs must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(HarnessError::Config("alpha must lie in (0, 1]".into()));
        }
        if self.window == 0 {
            return Err(HarnessError::Config("window must be positive".into()));
        }
        Ok(())
    }
}

/// Everything derived from the master seed before any teacher is simulated.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub env: Env,
    pub oracle: QTable,
    pub checkpoint: PartialCheckpoint,
    pub session: Session,
}

pub fn train_oracle(config: &ExperimentConfig) -> Result<QTable, HarnessError> {
    let env = Env::new(config.env.clone())?;
    Ok(train_q(&env, &config.oracle, &mut seeded(derive_seed(config.master_seed, TAG_ORACLE)))?)
}

/// Behavior checkpoint and the recorded session pair, without the oracle.
pub fn record_session(config: &ExperimentConfig) -> Result<(Env, PartialCheckpoint, Session), HarnessError> {
    config.validate()?;
    let env = Env::new(config.env.clone())?;
    let checkpoint = train_partial(
        &env,
        &config.behavior,
        &config.partial,
        &mut seeded(derive_seed(config.master_seed, TAG_PARTIAL)),
    )?;
    let behavior = EpsilonGreedy {
        q: &checkpoint.q,
        epsilon: config.partial.behavior_epsilon,
    };
    let session = env.generate_session(
        &behavior,
        &config.session,
        &mut seeded(derive_seed(config.master_seed, TAG_SESSION)),
    )?;
    Ok((env, checkpoint, session))
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    let (env, checkpoint, session) = record_session(config)?;
    let oracle = train_oracle(config)?;
    Ok(Prepared {
        env,
        oracle,
        checkpoint,
        session,
    })
}

pub fn cohort(config: &ExperimentConfig) -> Vec<TeacherProfile> {
    generate_cohort(&config.cohort, derive_seed(config.master_seed, TAG_COHORT))
}

pub fn simulate_logs(config: &ExperimentConfig, prepared: &Prepared) -> Vec<FeedbackLog> {
    cohort(config)
        .par_iter()
        .map(|p| generate_log(p, &prepared.session, &prepared.oracle))
        .collect()
}

/// Reward sequence a condition derives from one teacher's log.
pub fn condition_signals(
    condition: Condition,
    log: &FeedbackLog,
    steady: &SteadyConfig,
    window: usize,
) -> Result<Vec<f64>, HarnessError> {
    let expected = condition.modality();
    if expected != Some(log.modality) {
        return Err(HarnessError::WrongModality {
            condition,
            modality: expected.unwrap_or(Modality::Scalar),
            teacher: log.teacher_id.clone(),
            found: log.modality,
        });
    }
    let values = log.events.iter().map(|e| e.value);
    let scalar = |v: FeedbackValue| v.numeric();
    let out = match condition {
        Condition::Binary => values
            .map(|v| baselines::binary_passthrough(&v.to_string()).map(|l| l.sign()))
            .collect::<Result<_, _>>()?,
        Condition::RawScalar => values.map(|v| baselines::raw_offset(scalar(v))).collect::<Result<_, _>>()?,
        Condition::Midpoint => values
            .map(|v| baselines::midpoint_classify(scalar(v)).map(|l| l.sign()))
            .collect::<Result<_, _>>()?,
        Condition::SlidingWindow => {
            let mut w = WindowState::new(window);
            values.map(|v| w.classify(scalar(v)).map(|l| l.sign())).collect::<Result<_, _>>()?
        }
        Condition::Steady => {
            let mut s = SteadyState::new(steady.clone());
            values
                .map(|v| s.process(scalar(v)).map(|o| o.shaped_reward))
                .collect::<Result<_, _>>()?
        }
        Condition::EnvRewardCeiling => unreachable!("ceiling has no teacher log"),
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: Condition,
    pub teacher_id: String,
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub schema_version: u32,
    pub master_seed: u64,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<ConditionSummary>,
}

impl ResultsTable {
    pub fn new(master_seed: u64, mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(|a, b| a.condition.cmp(&b.condition).then_with(|| a.teacher_id.cmp(&b.teacher_id)));
        let mut summary = Vec::new();
        for c in Condition::ALL {
            let xs: Vec<f64> = rows.iter().filter(|r| r.condition == c).map(|r| r.mean_return).collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, sd) = mean_sd(&xs);
            summary.push(ConditionSummary {
                condition: c,
                n: xs.len(),
                mean,
                sd,
            });
        }
        Self {
            schema_version: RESULTS_SCHEMA_VERSION,
            master_seed,
            rows,
            summary,
        }
    }

    pub fn cohort_mean(&self, c: Condition) -> Option<f64> {
        self.summary.iter().find(|s| s.condition == c).map(|s| s.mean)
    }

    /// Per-teacher returns for one condition, in teacher order.
    pub fn returns(&self, c: Condition) -> Vec<f64> {
        self.rows.iter().filter(|r| r.condition == c).map(|r| r.mean_return).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        if self.rows.is_empty() {
            return Err(HarnessError::EmptyResults);
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["condition", "teacher_id", "mean_return"])?;
        for r in &self.rows {
            wtr.write_record([r.condition.name(), &r.teacher_id, &r.mean_return.to_string()])?;
        }
        for s in &self.summary {
            wtr.write_record([s.condition.name(), COHORT_MEAN_ID, &s.mean.to_string()])?;
            wtr.write_record([s.condition.name(), COHORT_SD_ID, &s.sd.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        if self.rows.is_empty() {
            return Err(HarnessError::EmptyResults);
        }
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scalar and binary logs paired by their position within each modality.
fn split_by_modality(logs: &[FeedbackLog]) -> (Vec<&FeedbackLog>, Vec<&FeedbackLog>) {
    let scalar = logs.iter().filter(|l| l.modality == Modality::Scalar).collect();
    let binary = logs.iter().filter(|l| l.modality == Modality::Binary).collect();
    (scalar, binary)
}

fn check_alignment(log: &FeedbackLog, clips: &[Transition]) -> Result<(), HarnessError> {
    log.validate(true)?;
    for (e, t) in log.events.iter().zip(clips) {
        if e.transition_id != t.id {
            return Err(HarnessError::Config(format!(
                "teacher {} clip {}: transition {} does not match session transition {}",
                log.teacher_id, e.clip_index, e.transition_id, t.id
            )));
        }
    }
    Ok(())
}

enum Job<'a> {
    Teacher(Condition, &'a FeedbackLog, usize),
    Ceiling(usize),
}

/// Train and evaluate every (condition, teacher) cell for the given logs.
pub fn run_on_logs(
    config: &ExperimentConfig,
    prepared: &Prepared,
    logs: &[FeedbackLog],
) -> Result<ResultsTable, HarnessError> {
    config.validate()?;
    let clips = &prepared.session.clips;
    for log in logs {
        check_alignment(log, clips)?;
    }
    let (scalar, binary) = split_by_modality(logs);
    let pairs = scalar.len().max(binary.len());
    let mut jobs = Vec::new();
    for &c in &config.conditions {
        match c.modality() {
            Some(Modality::Scalar) => jobs.extend(scalar.iter().enumerate().map(|(i, l)| Job::Teacher(c, l, i))),
            Some(Modality::Binary) => jobs.extend(binary.iter().enumerate().map(|(i, l)| Job::Teacher(c, l, i))),
            None => jobs.extend((0..pairs).map(Job::Ceiling)),
        }
    }
    let eval_seed = |i: usize| derive_seed(derive_seed(config.master_seed, TAG_EVAL), i as u64);
    let rows = jobs
        .par_iter()
        .map(|job| {
            let (condition, teacher_id, signals, pair) = match job {
                Job::Teacher(c, log, i) => (
                    *c,
                    log.teacher_id.clone(),
                    condition_signals(*c, log, &config.steady, config.window)?,
                    *i,
                ),
                Job::Ceiling(i) => (
                    Condition::EnvRewardCeiling,
                    format!("env-{i:02}"),
                    clips.iter().map(|t| t.env_reward).collect(),
                    *i,
                ),
            };
            let h = train_from_log(clips.iter().zip(signals), config.alpha);
            let ev = evaluate(&h, &prepared.env, config.eval_runs, &mut seeded(eval_seed(pair)));
            Ok(ResultRow {
                condition,
                teacher_id,
                mean_return: ev.mean,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ResultsTable::new(config.master_seed, rows))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable, HarnessError> {
    let prepared = prepare(config)?;
    let logs = simulate_logs(config, &prepared);
    run_on_logs(config, &prepared, &logs)
}

/// Complete 200-clip logs from a canonical feedback CSV.
pub fn ingest_log(path: &Path) -> Result<Vec<FeedbackLog>, HarnessError> {
    let file = std::fs::File::open(path)?;
    Ok(feedback::read_csv(std::io::BufReader::new(file), true)?)
}

/// Like [`ingest_log`] but accepts logs that stop before clip 200, as
/// exported from an unfinished teaching session.
pub fn ingest_partial_log(path: &Path) -> Result<Vec<FeedbackLog>, HarnessError> {
    let file = std::fs::File::open(path)?;
    Ok(feedback::read_csv(std::io::BufReader::new(file), false)?)
}
