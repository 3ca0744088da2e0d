//! Stabilizing scalar teacher feedback for interactive reinforcement learning.
//!
//! The crate bundles the button-pressing task, a tabular Q-learning oracle,
//! the STEADY feedback filter and its baselines, a TAMER-style learner,
//! synthetic teachers, descriptive analysis, and the experiment harness.

pub mod analysis;
pub mod baselines;
pub mod env;
pub mod feedback;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod steady;
pub mod table;
pub mod tamer;
pub mod teachers;

pub use env::{Action, Env, EnvConfig, GridPose, Outcome, Session, Trajectory, Transition};

pub use feedback::{FeedbackEvent, FeedbackLog, FeedbackValue, Modality};
pub use oracle::{QParams, QTable};
pub use steady::{wasserstein, EmpDistribution, Label, LabeledFeedback, SteadyConfig, SteadyError, SteadyState};
pub use tamer::HTable;
