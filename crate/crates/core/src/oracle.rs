//! Tabular Q-learning oracle.
//!
//! The fully trained table supplies correlation targets (advantage,
//! normalized Q, action rank); a partially trained checkpoint, run
//! epsilon-greedily, supplies the behavior shown to teachers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{enumerate_states, Action, Env, GridPose, Outcome, Policy, NUM_ACTIONS, NUM_STATES};
use crate::rng::SimRng;
use crate::table::ActionTable;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("Q-values at {0} sum to zero; normalized Q is undefined")]
    DegenerateState(GridPose),
    #[error("invalid Q-learning parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QParams {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Start each episode from a uniformly drawn non-terminal pose.
    pub exploring_starts: bool,
    /// Per-pair step size is `alpha / (1 + visits)^alpha_decay`.
    pub alpha_decay: f64,
}

impl Default for QParams {
    fn default() -> Self {
        Self {
            episodes: 300_000,
            alpha: 1.0,
            gamma: 0.9,
            epsilon: 1.0,
            exploring_starts: true,
            alpha_decay: 0.7,
        }
    }
}

impl QParams {
    /// Constant-step, start-pose-only learning used for the behavior checkpoint.
    pub fn behavior() -> Self {
        Self {
            episodes: 0,
            alpha: 0.2,
            gamma: 0.9,
            epsilon: 0.2,
            exploring_starts: false,
            alpha_decay: 0.0,
        }
    }
}

impl QParams {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::InvalidParams(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.alpha_decay) {
            return bad("alpha_decay must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: ActionTable,
    pub visits: Vec<u64>,
}

impl Default for QTable {
    fn default() -> Self {
        Self {
            values: ActionTable::zeros(),
            visits: vec![0; NUM_STATES * NUM_ACTIONS],
        }
    }
}

impl QTable {
    pub fn q(&self, s: GridPose, a: Action) -> f64 {
        self.values.get(s, a)
    }

    /// V(s) = max_a Q(s, a).
    pub fn value(&self, s: GridPose) -> f64 {
        self.values.max_value(s)
    }

    pub fn greedy(&self, s: GridPose) -> Action {
        self.values.greedy(s)
    }

    pub fn visit_count(&self, s: GridPose, a: Action) -> u64 {
        self.visits[s.index() * NUM_ACTIONS + a.index()]
    }
}

/// Deterministic greedy policy over a Q-table.
pub struct Greedy<'a>(pub &'a QTable);

impl Policy for Greedy<'_> {
    fn act(&self, pose: GridPose, _rng: &mut SimRng) -> Action {
        self.0.greedy(pose)
    }
}

pub struct EpsilonGreedy<'a> {
    pub q: &'a QTable,
    pub epsilon: f64,
}

impl Policy for EpsilonGreedy<'_> {
    fn act(&self, pose: GridPose, rng: &mut SimRng) -> Action {
        epsilon_greedy(self.q, pose, self.epsilon, rng)
    }
}

fn epsilon_greedy(q: &QTable, s: GridPose, epsilon: f64, rng: &mut SimRng) -> Action {
    if rng.random::<f64>() < epsilon {
        Action::ALL[rng.random_range(0..NUM_ACTIONS)]
    } else {
        q.greedy(s)
    }
}

fn non_terminal_states(env: &Env) -> Vec<GridPose> {
    enumerate_states().into_iter().filter(|s| !env.is_terminal(*s)).collect()
}

pub fn continue_training(env: &Env, q: &mut QTable, params: &QParams, episodes: usize, rng: &mut SimRng) {
    let starts = non_terminal_states(env);
    let cap = env.config().step_cap;
    for _ in 0..episodes {
        let mut s = if params.exploring_starts {
            starts[rng.random_range(0..starts.len())]
        } else {
            env.start()
        };
        for _ in 0..cap {
            let a = epsilon_greedy(q, s, params.epsilon, rng);
            let t = env.step(s, a, rng).expect("episode never steps a terminal pose");
            let target = if t.terminal {
                t.env_reward
            } else {
                t.env_reward + params.gamma * q.value(t.next_state)
            };
            let slot = s.index() * NUM_ACTIONS + a.index();
            let old = q.values.get(s, a);
            let step = params.alpha / (1.0 + q.visits[slot] as f64).powf(params.alpha_decay);
            q.values.set(s, a, old + step * (target - old));
            q.visits[slot] += 1;
            if t.terminal {
                break;
            }
            s = t.next_state;
        }
    }
}

/// Standard one-step Q-learning with epsilon-greedy exploration.
/// Episodes truncated by the step cap bootstrap from the last pose.
pub fn train_q(env: &Env, params: &QParams, rng: &mut SimRng) -> Result<QTable, OracleError> {
    params.validate()?;
    let mut q = QTable::default();
    continue_training(env, &mut q, params, params.episodes, rng);
    Ok(q)
}

/// Exact Q* for the slip-noise MDP by synchronous value iteration.
pub fn value_iteration(env: &Env, gamma: f64, tol: f64) -> QTable {
    let slip = env.config().slip_prob;
    let states = non_terminal_states(env);
    let mut q = QTable::default();
    loop {
        let mut next = q.values.clone();
        let mut delta: f64 = 0.0;
        for &s in &states {
            let v_here = q.value(s);
            for a in Action::ALL {
                let (s2, r, outcome) = env.dynamics(s, a).expect("non-terminal");
                let future = if outcome == Outcome::None { gamma * q.value(s2) } else { 0.0 };
                let new = (1.0 - slip) * (r + future) + slip * gamma * v_here;
                delta = delta.max((new - q.q(s, a)).abs());
                next.set(s, a, new);
            }
        }
        q.values = next;
        if delta < tol {
            return q;
        }
    }
}

/// A(s, a) = Q(s, a) - max_b Q(s, b).
pub fn advantage(q: &QTable, s: GridPose, a: Action) -> f64 {
    q.q(s, a) - q.value(s)
}

/// Q(s, a) / sum_b Q(s, b).
pub fn normalized_q(q: &QTable, s: GridPose, a: Action) -> Result<f64, OracleError> {
    let sum: f64 = q.values.row(s).iter().sum();
    if sum == 0.0 {
        return Err(OracleError::DegenerateState(s));
    }
    Ok(q.q(s, a) / sum)
}

/// 0 for the largest Q(s, .), ties broken by action order.
pub fn action_rank(q: &QTable, s: GridPose, a: Action) -> usize {
    let row = q.values.row(s);
    let mine = row[a.index()];
    Action::ALL
        .iter()
        .filter(|b| {
            let v = row[b.index()];
            v > mine || (v == mine && b.index() < a.index())
        })
        .count()
}

/// Stopping rule for the behavior checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartialCriterion {
    pub success_band: (f64, f64),
    /// Exploration rate of the behavior policy the band is measured on.
    pub behavior_epsilon: f64,
    pub eval_rollouts: usize,
    pub chunk_episodes: usize,
    pub max_episodes: usize,
}

impl Default for PartialCriterion {
    fn default() -> Self {
        Self {
            success_band: (0.4, 0.6),
            behavior_epsilon: 0.25,
            eval_rollouts: 1000,
            chunk_episodes: 1,
            max_episodes: 5_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialCheckpoint {
    pub q: QTable,
    pub episodes: usize,
    pub success_rate: f64,
    pub in_band: bool,
}

pub fn success_rate<P: Policy + ?Sized>(env: &Env, policy: &P, rollouts: usize, rng: &mut SimRng) -> f64 {
    if rollouts == 0 {
        return 0.0;
    }
    let wins = (0..rollouts).filter(|_| env.generate_trajectory(policy, rng).success).count();
    wins as f64 / rollouts as f64
}

/// Train from the start pose in chunks and stop at the first checkpoint whose
/// epsilon-greedy behavior success rate falls inside the band. If the band is
/// skipped over, the checkpoint closest to its centre is returned.
pub fn train_partial(
    env: &Env,
    params: &QParams,
    criterion: &PartialCriterion,
    rng: &mut SimRng,
) -> Result<PartialCheckpoint, OracleError> {
    params.validate()?;
    if criterion.chunk_episodes == 0 {
        return Err(OracleError::InvalidParams("chunk_episodes must be positive".into()));
    }
    let (lo, hi) = criterion.success_band;
    let centre = 0.5 * (lo + hi);
    let mut q = QTable::default();
    let mut best: Option<PartialCheckpoint> = None;
    let mut episodes = 0;
    while episodes < criterion.max_episodes {
        continue_training(env, &mut q, params, criterion.chunk_episodes, rng);
        episodes += criterion.chunk_episodes;
        let policy = EpsilonGreedy {
            q: &q,
            epsilon: criterion.behavior_epsilon,
        };
        let rate = success_rate(env, &policy, criterion.eval_rollouts, rng);
        let in_band = (lo..=hi).contains(&rate);
        let closer = best
            .as_ref()
            .is_none_or(|b| (rate - centre).abs() < (b.success_rate - centre).abs());
        if in_band || closer {
            best = Some(PartialCheckpoint {
                q: q.clone(),
                episodes,
                success_rate: rate,
                in_band,
            });
        }
        if in_band {
            break;
        }
    }
    best.ok_or_else(|| OracleError::InvalidParams("max_episodes must be positive".into()))
}
