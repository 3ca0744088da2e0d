//! One teaching session: a cursor over 200 steps with strict step/feedback
//! turn-taking.
//!
//! Replay sessions walk the recorded clip script. Live sessions let a TAMER
//! table pick each action greedily; every rating is filtered (STEADY for
//! scalar, passthrough for binary) and learned before the next action.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use steady_core::baselines;
use steady_core::env::{Env, GridPose, Session, Transition, GRID_X, GRID_Y, GRID_Z};
use steady_core::feedback::{FeedbackEvent, FeedbackLog, FeedbackValue, Modality};
use steady_core::rng::{seeded, SimRng};
use steady_core::steady::{LabeledFeedback, SteadyConfig, SteadyError, SteadyState};
use steady_core::tamer::HTable;

pub const SCALE_BINS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Replay,
    Live,
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("session is complete; no step awaits feedback")]
    NoPendingStep,
    #[error("{0} feedback sent to a {1} session")]
    WrongModality(Modality, Modality),
    #[error("{0}")]
    InvalidValue(String),
    #[error("session has no feedback to export")]
    Empty,
    #[error(transparent)]
    Steady(#[from] SteadyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub transition_id: u64,
    pub before: GridPose,
    pub after: GridPose,
    pub action: String,
    pub env_reward: f64,
    pub outcome: String,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub x: u8,
    pub y: u8,
    pub z: u8,
    pub button: GridPose,
    pub start: GridPose,
}

/// Counts of the filter's samples per integer scale value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub initialized: bool,
    pub processed: usize,
    pub warmup: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
    pub positive_mean: Option<f64>,
    pub negative_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub session_id: String,
    pub modality: Modality,
    pub mode: Mode,
    pub index: usize,
    pub total: usize,
    pub done: bool,
    pub grid: GridInfo,
    pub step: Option<StepPayload>,
    pub histograms: Option<Histograms>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub accepted: bool,
    pub index: usize,
    pub done: bool,
    /// Reward handed to the learner (live mode).
    pub signal: Option<f64>,
    /// STEADY output for scalar live sessions.
    pub labeled: Option<LabeledFeedback>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub session_id: String,
    pub modality: Modality,
    pub mode: Mode,
    pub cursor: usize,
    pub total: usize,
    pub done: bool,
    pub events: usize,
    pub mean_value: Option<f64>,
    pub episodes: usize,
    pub anomalies: Option<usize>,
    pub last: Option<LabeledFeedback>,
}

struct Live {
    h: HTable,
    steady: Option<SteadyState>,
    pose: GridPose,
    episode_steps: u32,
    episodes: usize,
    rng: SimRng,
}

impl Live {
    fn next_transition(&mut self, env: &Env, id: u64) -> Transition {
        let action = self.h.act(self.pose);
        let mut t = env.step(self.pose, action, &mut self.rng).expect("live pose is never terminal");
        t.id = id;
        self.episode_steps += 1;
        if t.terminal || self.episode_steps >= env.config().step_cap {
            self.pose = env.start();
            self.episode_steps = 0;
            self.episodes += 1;
        } else {
            self.pose = t.next_state;
        }
        t
    }
}

pub struct TeachSession {
    id: String,
    modality: Modality,
    mode: Mode,
    env: Env,
    script: Vec<Transition>,
    live: Option<Live>,
    pending: Option<Transition>,
    cursor: usize,
    events: Vec<FeedbackEvent>,
    last: Option<LabeledFeedback>,
    created: Instant,
}

impl TeachSession {
    /// Replay the recorded 200-clip script.
    pub fn replay(id: String, modality: Modality, env: Env, script: &Session) -> Self {
        let clips = script.clips.clone();
        let pending = clips.first().copied();
        Self::build(id, modality, Mode::Replay, env, clips, None, pending)
    }

    /// A fresh agent acting greedily from an all-zero table.
    pub fn live(id: String, modality: Modality, env: Env, steady: SteadyConfig, alpha: f64, seed: u64) -> Self {
        let mut live = Live {
            h: HTable::new(alpha),
            steady: (modality == Modality::Scalar).then(|| SteadyState::new(steady)),
            pose: env.start(),
            episode_steps: 0,
            episodes: 0,
            rng: seeded(seed),
        };
        let first = live.next_transition(&env, 0);
        Self::build(id, modality, Mode::Live, env, Vec::new(), Some(live), Some(first))
    }

    fn build(
        id: String,
        modality: Modality,
        mode: Mode,
        env: Env,
        script: Vec<Transition>,
        live: Option<Live>,
        pending: Option<Transition>,
    ) -> Self {
        Self {
            id,
            modality,
            mode,
            env,
            script,
            live,
            pending,
            cursor: 0,
            events: Vec::new(),
            last: None,
            created: Instant::now(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn total(&self) -> usize {
        match self.mode {
            Mode::Replay => self.script.len(),
            Mode::Live => Session::TOTAL_CLIPS,
        }
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn h_table(&self) -> Option<&HTable> {
        self.live.as_ref().map(|l| &l.h)
    }

    /// Unchanged until feedback for the pending step arrives.
    pub fn step_view(&self) -> StepView {
        let cfg = self.env.config();
        StepView {
            session_id: self.id.clone(),
            modality: self.modality,
            mode: self.mode,
            index: self.cursor,
            total: self.total(),
            done: self.is_done(),
            grid: GridInfo {
                x: GRID_X,
                y: GRID_Y,
                z: GRID_Z,
                button: cfg.button_pose,
                start: cfg.start_pose,
            },
            step: self.pending.map(|t| StepPayload {
                transition_id: t.id,
                before: t.state,
                after: t.next_state,
                action: t.action.name().to_string(),
                env_reward: t.env_reward,
                outcome: t.outcome.name().to_string(),
                terminal: t.terminal,
            }),
            histograms: self.live.as_ref().and_then(|l| l.steady.as_ref()).map(histograms),
        }
    }

    /// Accept a rating given as the JSON `value` field.
    pub fn submit_json(&mut self, value: serde_json::Value) -> Result<FeedbackAck, SessionError> {
        let v = FeedbackValue::try_from(value).map_err(SessionError::InvalidValue)?;
        self.submit(v)
    }

    pub fn submit(&mut self, value: FeedbackValue) -> Result<FeedbackAck, SessionError> {
        let t = self.pending.ok_or(SessionError::NoPendingStep)?;
        if value.modality() != self.modality {
            return Err(SessionError::WrongModality(value.modality(), self.modality));
        }
        let mut signal = None;
        let mut labeled = None;
        if let Some(live) = self.live.as_mut() {
            let s = match live.steady.as_mut() {
                Some(st) => {
                    let out = st.process(value.numeric())?;
                    labeled = Some(out);
                    out.shaped_reward
                }
                None => baselines::binary_passthrough(&value.to_string())
                    .map_err(|e| SessionError::InvalidValue(e.to_string()))?
                    .sign(),
            };
            live.h.update(&t, s);
            signal = Some(s);
        }
        let clip_index = self.cursor as u32;
        self.events.push(FeedbackEvent {
            teacher_id: self.teacher_id(),
            modality: self.modality,
            clip_index,
            session: FeedbackEvent::session_for_clip(clip_index),
            transition_id: t.id,
            value,
            timestamp_ms: self.created.elapsed().as_millis() as u64,
        });
        if labeled.is_some() {
            self.last = labeled;
        }
        self.cursor += 1;
        self.pending = if self.cursor >= self.total() {
            None
        } else {
            match self.live.as_mut() {
                Some(live) => Some(live.next_transition(&self.env, self.cursor as u64)),
                None => Some(self.script[self.cursor]),
            }
        };
        Ok(FeedbackAck {
            accepted: true,
            index: self.cursor,
            done: self.is_done(),
            signal,
            labeled,
        })
    }

    pub fn teacher_id(&self) -> String {
        format!("session-{}", self.id)
    }

    pub fn log(&self) -> FeedbackLog {
        FeedbackLog {
            teacher_id: self.teacher_id(),
            modality: self.modality,
            events: self.events.clone(),
        }
    }

    pub fn export_csv(&self) -> Result<String, SessionError> {
        if self.events.is_empty() {
            return Err(SessionError::Empty);
        }
        let mut buf = Vec::new();
        steady_core::feedback::write_csv(&[self.log()], &mut buf).expect("in-memory csv write");
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn metrics(&self) -> Metrics {
        let mean_value = (!self.events.is_empty())
            .then(|| self.events.iter().map(|e| e.value.numeric()).sum::<f64>() / self.events.len() as f64);
        Metrics {
            session_id: self.id.clone(),
            modality: self.modality,
            mode: self.mode,
            cursor: self.cursor,
            total: self.total(),
            done: self.is_done(),
            events: self.events.len(),
            mean_value,
            episodes: self.live.as_ref().map_or(0, |l| l.episodes),
            anomalies: self.live.as_ref().and_then(|l| l.steady.as_ref()).map(|s| s.anomalies()),
            last: self.last,
        }
    }
}

fn bins(values: impl IntoIterator<Item = f64>) -> Vec<u32> {
    let mut out = vec![0; SCALE_BINS];
    for v in values {
        let i = (v.round().max(0.0) as usize).min(SCALE_BINS - 1);
        out[i] += 1;
    }
    out
}

fn histograms(s: &SteadyState) -> Histograms {
    let snap = s.snapshot();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    Histograms {
        initialized: snap.initialized,
        processed: snap.processed,
        warmup: bins(snap.init_buffer.iter().copied()),
        positive_mean: mean(&snap.positive),
        negative_mean: mean(&snap.negative),
        positive: bins(snap.positive),
        negative: bins(snap.negative),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use steady_core::env::EnvConfig;

    fn env() -> Env {
        Env::new(EnvConfig::default()).unwrap()
    }

    fn live(modality: Modality) -> TeachSession {
        TeachSession::live("1".into(), modality, env(), SteadyConfig::default(), 0.5, 9)
    }

    #[test]
    fn live_starts_at_start_pose() {
        let s = live(Modality::Scalar);
        let v = s.step_view();
        assert_eq!(v.index, 0);
        assert_eq!(v.step.unwrap().before, EnvConfig::default().start_pose);
        assert!(v.histograms.is_some());
        assert!(live(Modality::Binary).step_view().histograms.is_none());
    }

    #[test]
    fn modality_and_range_errors_leave_cursor() {
        let mut s = live(Modality::Scalar);
        assert_eq!(
            s.submit(FeedbackValue::Good),
            Err(SessionError::WrongModality(Modality::Binary, Modality::Scalar))
        );
        assert!(matches!(s.submit_json(serde_json::json!(11)), Err(SessionError::InvalidValue(_))));
        assert!(matches!(s.submit_json(serde_json::json!(2.5)), Err(SessionError::InvalidValue(_))));
        assert_eq!(s.cursor(), 0);
        let mut b = live(Modality::Binary);
        assert!(matches!(b.submit_json(serde_json::json!(3)), Err(SessionError::WrongModality(..))));
    }

    #[test]
    fn binary_live_learns_unit_rewards() {
        let mut s = live(Modality::Binary);
        let first = s.step_view().step.unwrap();
        let ack = s.submit(FeedbackValue::Bad).unwrap();
        assert_eq!(ack.signal, Some(-1.0));
        assert!(ack.labeled.is_none());
        let action: steady_core::env::Action = first.action.parse().unwrap();
        assert_eq!(s.h_table().unwrap().get(first.before, action), -0.5);
    }

    #[test]
    fn live_session_ends_after_200() {
        let mut s = live(Modality::Scalar);
        for i in 0..Session::TOTAL_CLIPS {
            s.submit(FeedbackValue::Scalar((i % 11) as u8)).unwrap();
        }
        assert!(s.is_done());
        assert_eq!(s.submit(FeedbackValue::Scalar(5)), Err(SessionError::NoPendingStep));
        assert_eq!(s.metrics().events, 200);
        s.log().validate(true).unwrap();
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(bins([0.0, 10.0, 10.0, 4.6]), vec![1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 2]);
    }
}
