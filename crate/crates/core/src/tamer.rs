//! Tabular TAMER-style learner.
//!
//! Feedback is the reward for exactly the state-action pair it was given for.
//! Each `(transition, signal)` pair is learned once, in log order.

use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, GridPose, Policy, Transition};
use crate::rng::SimRng;
use crate::table::ActionTable;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HTable {
    pub values: ActionTable,
    pub alpha: f64,
}

impl Default for HTable {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA)
    }
}

impl HTable {
    pub fn new(alpha: f64) -> Self {
        Self {
            values: ActionTable::zeros(),
            alpha,
        }
    }

    pub fn get(&self, s: GridPose, a: Action) -> f64 {
        self.values.get(s, a)
    }

    /// `h <- h + alpha (signal - h)` at the transition's state-action pair.
    /// Non-finite signals are ignored.
    pub fn update(&mut self, t: &Transition, signal: f64) {
        if !signal.is_finite() {
            return;
        }
        let h = self.values.get(t.state, t.action);
        self.values.set(t.state, t.action, h + self.alpha * (signal - h));
    }

    /// Greedy action; the first action in `Action::ALL` wins ties.
    pub fn act(&self, s: GridPose) -> Action {
        self.values.greedy(s)
    }
}

impl Policy for HTable {
    fn act(&self, pose: GridPose, _rng: &mut SimRng) -> Action {
        HTable::act(self, pose)
    }
}

pub fn train_from_log<'a>(log: impl IntoIterator<Item = (&'a Transition, f64)>, alpha: f64) -> HTable {
    let mut h = HTable::new(alpha);
    for (t, signal) in log {
        h.update(t, signal);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub returns: Vec<f64>,
    pub mean: f64,
}

/// Greedy rollouts from the start pose with slip noise active.
pub fn evaluate(h: &HTable, env: &Env, runs: usize, rng: &mut SimRng) -> Evaluation {
    let returns: Vec<f64> = (0..runs.max(1))
        .map(|_| env.generate_trajectory(h, rng).total_return())
        .collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Evaluation { returns, mean }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Outcome};
    use crate::oracle::value_iteration;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn transition(x: u8, a: Action) -> Transition {
        let s = GridPose::new(x, 2, 3).unwrap();
        Transition {
            id: 0,
            state: s,
            action: a,
            next_state: s,
            env_reward: 0.0,
            terminal: false,
            outcome: Outcome::None,
        }
    }

    #[test]
    fn update_examples() {
        let t = transition(1, Action::Right);
        let mut h = HTable::new(0.5);
        h.update(&t, 2.0);
        assert_eq!(h.get(t.state, t.action), 1.0);
        h.update(&t, 1.0);
        assert_eq!(h.get(t.state, t.action), 1.0);
        let h = train_from_log([(&t, 1.0), (&t, 1.0)], 0.5);
        assert_eq!(h.get(t.state, t.action), 0.75);
    }

    #[test]
    fn log_order_matters() {
        let t = transition(4, Action::Down);
        let a = train_from_log([(&t, 1.0), (&t, -1.0)], 0.5);
        let b = train_from_log([(&t, -1.0), (&t, 1.0)], 0.5);
        assert_ne!(a, b);
        assert!(train_from_log([], 0.5).values.is_all_zero());
    }

    #[test]
    fn act_tie_order() {
        let h = HTable::default();
        let s = GridPose::new(0, 0, 0).unwrap();
        assert_eq!(h.act(s), Action::Left);
        let t = Transition {
            state: s,
            ..transition(0, Action::Forward)
        };
        let h = train_from_log([(&t, 0.3)], 0.5);
        assert_eq!(h.act(s), Action::Forward);
        assert_eq!(h.act(s), h.act(s));
    }

    #[test]
    fn optimal_table_scores_fourteen() {
        let env = Env::new(EnvConfig::default().with_slip(0.0)).unwrap();
        let q = value_iteration(&env, 0.9, 1e-10);
        let h = HTable {
            values: q.values.clone(),
            alpha: DEFAULT_ALPHA,
        };
        let ev = evaluate(&h, &env, 10, &mut seeded(0));
        assert_eq!(ev.returns.len(), 10);
        assert!(ev.returns.iter().all(|&r| (r - 14.0).abs() < 1e-9));
        let ev = evaluate(&h, &env, 1, &mut seeded(0));
        assert_eq!(ev.returns.len(), 1);
    }

    #[test]
    fn zero_table_wanders() {
        let env = Env::new(EnvConfig::default()).unwrap();
        let ev = evaluate(&HTable::default(), &env, 10, &mut seeded(2));
        assert!(ev.mean < 0.0);
        assert!(ev.returns.iter().all(|&r| (-50.0..=14.0).contains(&r)));
    }

    proptest! {
        #[test]
        fn update_contracts_toward_signal(h0 in -10.0f64..10.0, signal in -10.0f64..10.0, alpha in 0.01f64..=1.0) {
            let t = transition(3, Action::Left);
            let mut h = HTable::new(alpha);
            h.values.set(t.state, t.action, h0);
            h.update(&t, signal);
            let after = h.get(t.state, t.action);
            prop_assert!(((after - signal).abs() - (1.0 - alpha) * (h0 - signal).abs()).abs() < 1e-9);
        }
    }
}
