//! Button-pressing grid task.
//!
//! The gripper lives on a 10 x 10 x 7 lattice. Lateral actions move it in the
//! xy-plane, `Down` descends one layer. Descending onto the button column from
//! layer 1 presses the button; descending anywhere else ends the episode.
//!
//! Shaping rewards are potential based on the path distance
//! `|dx| + |dy| + z` to the button, so no loop of moves can earn a positive
//! net reward and the best achievable return from the default start is 14.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

pub const GRID_X: u8 = 10;
pub const GRID_Y: u8 = 10;
pub const GRID_Z: u8 = 7;
pub const NUM_STATES: usize = GRID_X as usize * GRID_Y as usize * GRID_Z as usize;
pub const NUM_ACTIONS: usize = 5;

pub const PRESS_REWARD: f64 = 10.0;
pub const WRONG_DOWN_REWARD: f64 = -1.0;
pub const MAX_SHAPING: f64 = 0.5;
pub const MIN_SHAPING: f64 = 0.4;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("pose ({x},{y},{z}) outside the 10x10x7 grid")]
    OutOfBounds { x: i64, y: i64, z: i64 },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("cannot step from terminal pose {0}")]
    TerminalState(GridPose),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("session quota (3 successes, 3 failures, 100 clips) not met after {0} trajectories")]
    QuotaUnreachable(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPose {
    pub x: u8,
    pub y: u8,
    pub z: u8,
}

impl GridPose {
    pub fn new(x: u8, y: u8, z: u8) -> Result<Self, EnvError> {
        if x >= GRID_X || y >= GRID_Y || z >= GRID_Z {
            return Err(EnvError::OutOfBounds {
                x: x.into(),
                y: y.into(),
                z: z.into(),
            });
        }
        Ok(Self { x, y, z })
    }

    /// Position in the x-major, then y, then z enumeration.
    pub fn index(self) -> usize {
        (self.x as usize * GRID_Y as usize + self.y as usize) * GRID_Z as usize + self.z as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= NUM_STATES {
            return None;
        }
        let z = index % GRID_Z as usize;
        let rest = index / GRID_Z as usize;
        let y = rest % GRID_Y as usize;
        let x = rest / GRID_Y as usize;
        Some(Self {
            x: x as u8,
            y: y as u8,
            z: z as u8,
        })
    }

    fn is_valid(self) -> bool {
        self.x < GRID_X && self.y < GRID_Y && self.z < GRID_Z
    }
}

impl fmt::Display for GridPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Backward,
    Forward,
    Down,
}

impl Action {
    /// Fixed order, also the tie-break order everywhere a greedy choice is made.
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Left,
        Action::Right,
        Action::Backward,
        Action::Forward,
        Action::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Backward => "backward",
            Action::Forward => "forward",
            Action::Down => "down",
        }
    }

    fn delta(self) -> (i64, i64, i64) {
        match self {
            Action::Left => (-1, 0, 0),
            Action::Right => (1, 0, 0),
            Action::Backward => (0, -1, 0),
            Action::Forward => (0, 1, 0),
            Action::Down => (0, 0, -1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EnvError::UnknownAction(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub button_pose: GridPose,
    pub start_pose: GridPose,
    pub step_cap: u32,
    pub slip_prob: f64,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    /// Path distance 3 + 3 + 3 from start to button: eight full-magnitude
    /// shaping steps plus the press gives 14; 100 steps at -0.5 gives -50.
    fn default() -> Self {
        Self {
            button_pose: GridPose { x: 4, y: 4, z: 0 },
            start_pose: GridPose { x: 1, y: 1, z: 3 },
            step_cap: 100,
            slip_prob: 0.1,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !self.button_pose.is_valid() || !self.start_pose.is_valid() {
            return bad("pose outside the grid");
        }
        if self.button_pose.z != 0 {
            return bad("button must sit on layer z = 0");
        }
        if self.start_pose.z == 0 {
            return bad("start pose must be above the table (z >= 1)");
        }
        if self.step_cap == 0 {
            return bad("step_cap must be positive");
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return bad("slip_prob must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn with_slip(mut self, slip_prob: f64) -> Self {
        self.slip_prob = slip_prob;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    None,
    Press,
    WrongDown,
    Cap,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::None => "none",
            Outcome::Press => "press",
            Outcome::WrongDown => "wrong_down",
            Outcome::Cap => "cap",
        }
    }
}

impl FromStr for Outcome {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Outcome::None),
            "press" => Ok(Outcome::Press),
            "wrong_down" => Ok(Outcome::WrongDown),
            "cap" => Ok(Outcome::Cap),
            other => Err(EnvError::InvalidConfig(format!("unknown outcome `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub id: u64,
    pub state: GridPose,
    pub action: Action,
    pub next_state: GridPose,
    pub env_reward: f64,
    pub terminal: bool,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub success: bool,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.env_reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Two identical 100-clip sessions built from six trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub trajectories: Vec<Trajectory>,
    pub clips: Vec<Transition>,
}

impl Session {
    pub const CLIPS_PER_SESSION: usize = 100;
    pub const TOTAL_CLIPS: usize = 200;
    pub const SUCCESSES: usize = 3;
    pub const FAILURES: usize = 3;

    /// The 100 distinct transitions shown in each session.
    pub fn unique_transitions(&self) -> &[Transition] {
        &self.clips[..Self::CLIPS_PER_SESSION]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionParams {
    pub max_clip_len: u32,
    pub max_trajectories: usize,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            max_clip_len: 30,
            max_trajectories: 5000,
        }
    }
}

/// Anything that picks an action for a pose. Stochastic policies draw from `rng`.
pub trait Policy {
    fn act(&self, pose: GridPose, rng: &mut SimRng) -> Action;
}

impl<F> Policy for F
where
    F: Fn(GridPose, &mut SimRng) -> Action,
{
    fn act(&self, pose: GridPose, rng: &mut SimRng) -> Action {
        self(pose, rng)
    }
}

#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    full_radius: u32,
    max_distance: u32,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let b = config.button_pose;
        let span = |c: u8, n: u8| u32::from(c.max(n - 1 - c));
        let max_distance = span(b.x, GRID_X) + span(b.y, GRID_Y) + u32::from(GRID_Z - 1);
        let mut env = Self {
            config,
            full_radius: 0,
            max_distance,
        };
        env.full_radius = env.distance(env.config.start_pose) + 1;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn start(&self) -> GridPose {
        self.config.start_pose
    }

    /// The pose reached by a successful press. It is the only terminal pose.
    pub fn press_pose(&self) -> GridPose {
        self.config.button_pose
    }

    pub fn is_terminal(&self, pose: GridPose) -> bool {
        pose == self.press_pose()
    }

    /// Path distance `|dx| + |dy| + z` to the button.
    pub fn distance(&self, pose: GridPose) -> u32 {
        let b = self.config.button_pose;
        u32::from(pose.x.abs_diff(b.x)) + u32::from(pose.y.abs_diff(b.y)) + u32::from(pose.z)
    }

    /// Shaping magnitude for the unit of distance between `d - 1` and `d`:
    /// 0.5 up to one cell beyond the start, then tapering linearly to 0.4 at
    /// the farthest pose.
    pub fn shaping_step(&self, d: u32) -> f64 {
        if d <= self.full_radius || self.max_distance <= self.full_radius {
            return MAX_SHAPING;
        }
        let frac = f64::from(d - self.full_radius) / f64::from(self.max_distance - self.full_radius);
        MAX_SHAPING - (MAX_SHAPING - MIN_SHAPING) * frac.clamp(0.0, 1.0)
    }

    /// Largest achievable return from the start pose.
    pub fn max_return(&self) -> f64 {
        let d = self.distance(self.start());
        (2..=d).map(|k| self.shaping_step(k)).sum::<f64>() + PRESS_REWARD
    }

    /// Return of a trajectory spending every step of the cap at -0.5.
    pub fn min_return(&self) -> f64 {
        -MAX_SHAPING * f64::from(self.config.step_cap)
    }

    /// Outcome of `action` at `pose` when the actuator does not slip.
    pub fn dynamics(&self, pose: GridPose, action: Action) -> Result<(GridPose, f64, Outcome), EnvError> {
        if self.is_terminal(pose) {
            return Err(EnvError::TerminalState(pose));
        }
        let b = self.config.button_pose;
        let aligned = pose.x == b.x && pose.y == b.y;
        if action == Action::Down {
            if !aligned || pose.z == 0 {
                let next = GridPose {
                    z: pose.z.saturating_sub(1),
                    ..pose
                };
                return Ok((next, WRONG_DOWN_REWARD, Outcome::WrongDown));
            }
            let next = GridPose { z: pose.z - 1, ..pose };
            if next.z == 0 {
                return Ok((next, PRESS_REWARD, Outcome::Press));
            }
            return Ok((next, self.shaping_step(self.distance(pose)), Outcome::None));
        }

        let (dx, dy, _) = action.delta();
        let nx = i64::from(pose.x) + dx;
        let ny = i64::from(pose.y) + dy;
        let blocked = nx < 0
            || ny < 0
            || nx >= i64::from(GRID_X)
            || ny >= i64::from(GRID_Y)
            // the button housing blocks sideways entry at table level
            || (pose.z == 0 && nx == i64::from(b.x) && ny == i64::from(b.y));
        if blocked {
            return Ok((pose, -MAX_SHAPING, Outcome::None));
        }
        let next = GridPose {
            x: nx as u8,
            y: ny as u8,
            z: pose.z,
        };
        let (d0, d1) = (self.distance(pose), self.distance(next));
        let reward = if d1 < d0 {
            self.shaping_step(d0)
        } else {
            -self.shaping_step(d1)
        };
        Ok((next, reward, Outcome::None))
    }

    /// One actuated step. A slip leaves the pose unchanged with zero reward.
    pub fn step(&self, state: GridPose, action: Action, rng: &mut SimRng) -> Result<Transition, EnvError> {
        if self.is_terminal(state) {
            return Err(EnvError::TerminalState(state));
        }
        let slip = rng.random::<f64>() < self.config.slip_prob;
        let (next_state, env_reward, outcome) = if slip {
            (state, 0.0, Outcome::None)
        } else {
            self.dynamics(state, action)?
        };
        Ok(Transition {
            id: 0,
            state,
            action,
            next_state,
            env_reward,
            terminal: outcome != Outcome::None,
            outcome,
        })
    }

    /// Roll `policy` out from the start pose until a terminal outcome or the
    /// step cap. A capped final transition is marked terminal with `Outcome::Cap`.
    pub fn generate_trajectory<P: Policy + ?Sized>(&self, policy: &P, rng: &mut SimRng) -> Trajectory {
        self.rollout(policy, self.config.step_cap, rng)
    }

    fn rollout<P: Policy + ?Sized>(&self, policy: &P, cap: u32, rng: &mut SimRng) -> Trajectory {
        let mut transitions = Vec::new();
        let mut pose = self.start();
        for id in 0..u64::from(cap) {
            let action = policy.act(pose, rng);
            let mut t = self
                .step(pose, action, rng)
                .expect("start pose and intermediate poses are non-terminal");
            t.id = id;
            pose = t.next_state;
            let done = t.terminal;
            transitions.push(t);
            if done {
                break;
            }
        }
        if let Some(last) = transitions.last_mut() {
            if !last.terminal {
                last.terminal = true;
                last.outcome = Outcome::Cap;
            }
        }
        let success = transitions.last().is_some_and(|t| t.outcome == Outcome::Press);
        Trajectory { transitions, success }
    }

    /// Sample trajectories until three successes and three failures fill
    /// exactly 100 clips, then repeat those 100 clips as the second session.
    /// Recorded trajectories are cut at `params.max_clip_len` clips; a cut
    /// trajectory ends with `Outcome::Cap` and counts as a failure.
    pub fn generate_session<P: Policy + ?Sized>(
        &self,
        policy: &P,
        params: &SessionParams,
        rng: &mut SimRng,
    ) -> Result<Session, EnvError> {
        const POOL_CAP: usize = 40;
        let cap = params.max_clip_len.min(self.config.step_cap);
        let mut successes: Vec<(usize, Trajectory)> = Vec::new();
        let mut failures: Vec<(usize, Trajectory)> = Vec::new();
        for n in 0..params.max_trajectories {
            let traj = self.rollout(policy, cap, rng);
            if traj.len() > Session::CLIPS_PER_SESSION {
                continue;
            }
            let pool = if traj.success { &mut successes } else { &mut failures };
            if pool.len() >= POOL_CAP {
                continue;
            }
            pool.push((n, traj));
            if let Some((s, f)) = find_quota(&successes, &failures) {
                let mut picked: Vec<&(usize, Trajectory)> =
                    s.iter().map(|&i| &successes[i]).chain(f.iter().map(|&i| &failures[i])).collect();
                picked.sort_by_key(|(order, _)| *order);
                let mut trajectories: Vec<Trajectory> = picked.into_iter().map(|(_, t)| t.clone()).collect();
                for (id, t) in trajectories.iter_mut().flat_map(|tr| tr.transitions.iter_mut()).enumerate() {
                    t.id = id as u64;
                }
                let first: Vec<Transition> = trajectories.iter().flat_map(|t| t.transitions.iter().copied()).collect();
                let mut clips = first.clone();
                clips.extend(first);
                return Ok(Session { trajectories, clips });
            }
        }
        Err(EnvError::QuotaUnreachable(params.max_trajectories))
    }
}

/// Earliest-sampled 3 + 3 combination whose lengths sum to 100 clips.
fn find_quota(successes: &[(usize, Trajectory)], failures: &[(usize, Trajectory)]) -> Option<([usize; 3], [usize; 3])> {
    if successes.len() < 3 || failures.len() < 3 {
        return None;
    }
    let triples = |pool: &[(usize, Trajectory)]| {
        let mut out: Vec<(usize, usize, [usize; 3])> = Vec::new();
        for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                for k in j + 1..pool.len() {
                    let len = pool[i].1.len() + pool[j].1.len() + pool[k].1.len();
                    out.push((len, pool[k].0, [i, j, k]));
                }
            }
        }
        out
    };
    let s = triples(successes);
    let f = triples(failures);
    let mut best: Option<(usize, [usize; 3], [usize; 3])> = None;
    for (ls, last_s, si) in &s {
        for (lf, last_f, fi) in &f {
            if ls + lf == Session::CLIPS_PER_SESSION {
                let key = *last_s.max(last_f);
                if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                    best = Some((key, *si, *fi));
                }
            }
        }
    }
    best.map(|(_, s, f)| (s, f))
}

/// All 700 poses, x-major then y then z.
pub fn enumerate_states() -> Vec<GridPose> {
    (0..NUM_STATES).filter_map(GridPose::from_index).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn env_noiseless() -> Env {
        Env::new(EnvConfig::default().with_slip(0.0)).unwrap()
    }

    #[test]
    fn state_space_cardinality() {
        let states = enumerate_states();
        assert_eq!(states.len(), 700);
        assert_eq!(states.len() * Action::ALL.len(), 3500);
        assert_eq!(states[0], GridPose { x: 0, y: 0, z: 0 });
        assert_eq!(states[1], GridPose { x: 0, y: 0, z: 1 });
        for (i, s) in states.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
    }

    #[test]
    fn press_above_button() {
        let env = env_noiseless();
        let mut rng = seeded(1);
        let t = env.step(GridPose::new(4, 4, 1).unwrap(), Action::Down, &mut rng).unwrap();
        assert_eq!(t.env_reward, 10.0);
        assert!(t.terminal);
        assert_eq!(t.outcome, Outcome::Press);
    }

    #[test]
    fn down_off_button_fails() {
        let env = env_noiseless();
        let mut rng = seeded(1);
        let t = env.step(GridPose::new(2, 4, 3).unwrap(), Action::Down, &mut rng).unwrap();
        assert_eq!(t.env_reward, -1.0);
        assert!(t.terminal);
        assert_eq!(t.outcome, Outcome::WrongDown);
    }

    #[test]
    fn slip_keeps_pose() {
        let cfg = EnvConfig {
            slip_prob: 0.999_999,
            ..EnvConfig::default()
        };
        let env = Env::new(cfg).unwrap();
        let mut rng = seeded(3);
        let s = env.start();
        let t = env.step(s, Action::Right, &mut rng).unwrap();
        assert_eq!(t.next_state, s);
        assert_eq!(t.env_reward, 0.0);
        assert!(!t.terminal);
    }

    #[test]
    fn stepping_terminal_is_an_error() {
        let env = env_noiseless();
        let mut rng = seeded(0);
        assert!(matches!(
            env.step(env.press_pose(), Action::Left, &mut rng),
            Err(EnvError::TerminalState(_))
        ));
    }

    #[test]
    fn clamped_move_costs_full_penalty() {
        let env = env_noiseless();
        let (next, r, o) = env.dynamics(GridPose::new(0, 3, 2).unwrap(), Action::Left).unwrap();
        assert_eq!(next, GridPose::new(0, 3, 2).unwrap());
        assert_eq!(r, -0.5);
        assert_eq!(o, Outcome::None);
    }

    #[test]
    fn lateral_rewards_stay_in_band() {
        let env = env_noiseless();
        for s in enumerate_states() {
            if env.is_terminal(s) {
                continue;
            }
            for a in Action::ALL {
                let (_, r, o) = env.dynamics(s, a).unwrap();
                if o == Outcome::None {
                    assert!((0.4..=0.5).contains(&r.abs()), "{s} {a} -> {r}");
                }
            }
        }
    }

    #[test]
    fn default_bounds() {
        let env = env_noiseless();
        assert_eq!(env.max_return(), 14.0);
        assert_eq!(env.min_return(), -50.0);
    }

    #[test]
    fn single_press_trajectory() {
        let cfg = EnvConfig {
            start_pose: GridPose::new(4, 4, 1).unwrap(),
            slip_prob: 0.0,
            ..EnvConfig::default()
        };
        let env = Env::new(cfg).unwrap();
        let traj = env.generate_trajectory(&|_: GridPose, _: &mut SimRng| Action::Down, &mut seeded(0));
        assert_eq!(traj.len(), 1);
        assert!(traj.success);
    }

    #[test]
    fn config_rejects_bad_values() {
        let cfg = EnvConfig::default().with_slip(1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = EnvConfig::default();
        cfg.button_pose.z = 2;
        assert!(cfg.validate().is_err());
        assert!(GridPose::new(10, 0, 0).is_err());
    }

    #[test]
    fn action_parse() {
        assert_eq!("Forward".parse::<Action>().unwrap(), Action::Forward);
        assert!("up".parse::<Action>().is_err());
    }
}
