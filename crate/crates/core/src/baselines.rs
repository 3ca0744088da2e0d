//! Comparison feedback transforms: offset scalar, fixed midpoint, sliding
//! window mean, and binary passthrough.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::steady::Label;

pub const SCALE_MIN: f64 = 0.0;
pub const SCALE_MAX: f64 = 10.0;
pub const MIDPOINT: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("feedback {0} outside [0, 10]")]
    OutOfRange(f64),
    #[error("invalid binary token {0:?}")]
    InvalidToken(String),
}

fn check(f: f64) -> Result<f64, BaselineError> {
    if f.is_finite() && (SCALE_MIN..=SCALE_MAX).contains(&f) {
        Ok(f)
    } else {
        Err(BaselineError::OutOfRange(f))
    }
}

/// Scalar feedback centred on the midpoint of the scale.
pub fn raw_offset(f: f64) -> Result<f64, BaselineError> {
    Ok(check(f)? - MIDPOINT)
}

/// `+1` above the midpoint, `-1` at or below it.
pub fn midpoint_classify(f: f64) -> Result<Label, BaselineError> {
    Ok(Label::from_bool(check(f)? > MIDPOINT))
}

/// Parses `good` / `bad`.
pub fn binary_passthrough(token: &str) -> Result<Label, BaselineError> {
    match token {
        "good" => Ok(Label::Positive),
        "bad" => Ok(Label::Negative),
        other => Err(BaselineError::InvalidToken(other.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    window: VecDeque<f64>,
    capacity: usize,
}

impl Default for WindowState {
    fn default() -> Self {
        Self::new(20)
    }
}

impl WindowState {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Label `f` against the mean of the current window, then push it.
    /// An empty window compares `f` with itself and yields `-1`.
    pub fn classify(&mut self, f: f64) -> Result<Label, BaselineError> {
        let f = check(f)?;
        let mean = if self.window.is_empty() {
            f
        } else {
            self.window.iter().sum::<f64>() / self.window.len() as f64
        };
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(f);
        Ok(Label::from_bool(f > mean))
    }
}
