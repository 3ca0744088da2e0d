//! STEADY: online stabilization of scalar teacher feedback.
//!
//! Feedback values are split into a positive and a negative empirical
//! distribution. After a warm-up of `k` values split at their mean, each new
//! value joins whichever distribution makes the 1-D Wasserstein distance
//! between the two largest. The value's label is weighted by a confidence
//! degree read off the empirical CDF of its distribution, and values falling
//! in the 3-sigma band of both distributions trigger an exchange of the
//! overlapping extremes.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SteadyError {
    #[error("empirical distribution is empty")]
    EmptyDistribution,
    #[error("feedback {value} outside the accepted range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("filter is still warming up ({seen} of {k} values)")]
    Uninitialized { seen: usize, k: usize },
    #[error("need at least {need} distributions, got {got}")]
    TooFewDistributions { need: usize, got: usize },
    #[error("cannot split {len} values into {m} groups")]
    TooManyGroups { m: usize, len: usize },
    #[error("non-finite sample")]
    NonFinite,
}

/// A finite multiset of reals kept sorted, with population mean and std.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmpDistribution {
    sorted: Vec<f64>,
    mean: f64,
    std: f64,
}

impl From<Vec<f64>> for EmpDistribution {
    fn from(samples: Vec<f64>) -> Self {
        let mut d = Self {
            sorted: samples,
            mean: 0.0,
            std: 0.0,
        };
        d.sorted.sort_by(f64::total_cmp);
        d.refresh();
        d
    }
}

impl From<EmpDistribution> for Vec<f64> {
    fn from(d: EmpDistribution) -> Self {
        d.sorted
    }
}

impl EmpDistribution {
    pub fn new(samples: impl IntoIterator<Item = f64>) -> Result<Self, SteadyError> {
        let samples: Vec<f64> = samples.into_iter().collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(SteadyError::NonFinite);
        }
        Ok(samples.into())
    }

    fn refresh(&mut self) {
        let n = self.sorted.len();
        if n == 0 {
            self.mean = 0.0;
            self.std = 0.0;
            return;
        }
        self.mean = self.sorted.iter().sum::<f64>() / n as f64;
        self.std = if n == 1 {
            0.0
        } else {
            let ss: f64 = self.sorted.iter().map(|v| (v - self.mean).powi(2)).sum();
            (ss / n as f64).sqrt()
        };
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn min(&self) -> Option<f64> {
        self.sorted.first().copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.sorted.last().copied()
    }

    pub fn insert(&mut self, v: f64) {
        let at = self.sorted.partition_point(|&x| x.total_cmp(&v) != Ordering::Greater);
        self.sorted.insert(at, v);
        self.refresh();
    }

    pub fn pop_min(&mut self) -> Option<f64> {
        if self.sorted.is_empty() {
            return None;
        }
        let v = self.sorted.remove(0);
        self.refresh();
        Some(v)
    }

    pub fn pop_max(&mut self) -> Option<f64> {
        let v = self.sorted.pop();
        self.refresh();
        v
    }

    pub fn with(&self, v: f64) -> Self {
        let mut d = self.clone();
        d.insert(v);
        d
    }

    /// Empirical CDF: fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// Whether `x` lies in `[mean - 3 std, mean + 3 std]`.
    pub fn within_three_sigma(&self, x: f64) -> bool {
        !self.is_empty() && (x - self.mean).abs() <= 3.0 * self.std
    }
}

/// Exact 1-D Wasserstein-1 distance between two equally weighted empirical
/// distributions, integrating `|F1^-1(u) - F2^-1(u)|` over the merged
/// quantile breakpoints.
pub fn wasserstein(a: &EmpDistribution, b: &EmpDistribution) -> Result<f64, SteadyError> {
    if a.is_empty() || b.is_empty() {
        return Err(SteadyError::EmptyDistribution);
    }
    Ok(wasserstein_sorted(a.samples(), b.samples()))
}

fn wasserstein_sorted(a: &[f64], b: &[f64]) -> f64 {
    // Breakpoints live on the lattice k / (n m): quantile cell i of `a` ends at
    // (i + 1) m, cell j of `b` at (j + 1) n.
    let (n, m) = (a.len() as u64, b.len() as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0u64;
    let mut acc = 0.0;
    while (i as u64) < n && (j as u64) < m {
        let end_a = (i as u64 + 1) * m;
        let end_b = (j as u64 + 1) * n;
        let end = end_a.min(end_b);
        acc += (end - u) as f64 * (a[i] - b[j]).abs();
        u = end;
        if end_a == end {
            i += 1;
        }
        if end_b == end {
            j += 1;
        }
    }
    acc / (n * m) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "+1",
            Label::Negative => "-1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfidenceCase {
    /// Provisional output while the first `k` values are buffered.
    Warmup,
    Increase,
    Decrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeedback {
    pub raw: f64,
    pub label: Label,
    pub confidence: f64,
    pub shaped_reward: f64,
    pub case: ConfidenceCase,
}

impl LabeledFeedback {
    fn new(raw: f64, label: Label, confidence: f64, case: ConfidenceCase) -> Self {
        Self {
            raw,
            label,
            confidence,
            shaped_reward: label.sign() * confidence,
            case,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadyConfig {
    /// Warm-up length before the distributions are formed.
    pub k: usize,
    pub range: (f64, f64),
}

impl Default for SteadyConfig {
    fn default() -> Self {
        Self { k: 20, range: (0.0, 10.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    config: SteadyConfig,
    phi_plus: EmpDistribution,
    phi_minus: EmpDistribution,
    init_buffer: Vec<f64>,
    processed: usize,
    /// Labels of the warm-up values recomputed against the final buffer mean.
    warmup_labels: Vec<Label>,
    /// Updates after which the positive mean did not exceed the negative one.
    anomalies: usize,
}

/// JSON view of the filter for live histograms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadySnapshot {
    pub k: usize,
    pub processed: usize,
    pub initialized: bool,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub init_buffer: Vec<f64>,
    pub anomalies: usize,
}

impl Default for SteadyState {
    fn default() -> Self {
        Self::new(SteadyConfig::default())
    }
}

impl SteadyState {
    pub fn new(config: SteadyConfig) -> Self {
        Self {
            config,
            phi_plus: EmpDistribution::default(),
            phi_minus: EmpDistribution::default(),
            init_buffer: Vec::new(),
            processed: 0,
            warmup_labels: Vec::new(),
            anomalies: 0,
        }
    }

    /// Start directly from two formed distributions (no warm-up).
    pub fn from_distributions(config: SteadyConfig, phi_plus: EmpDistribution, phi_minus: EmpDistribution) -> Self {
        let processed = phi_plus.len() + phi_minus.len();
        Self {
            config,
            phi_plus,
            phi_minus,
            init_buffer: Vec::new(),
            processed,
            warmup_labels: Vec::new(),
            anomalies: 0,
        }
    }

    pub fn config(&self) -> &SteadyConfig {
        &self.config
    }

    pub fn positive(&self) -> &EmpDistribution {
        &self.phi_plus
    }

    pub fn negative(&self) -> &EmpDistribution {
        &self.phi_minus
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn anomalies(&self) -> usize {
        self.anomalies
    }

    pub fn is_initialized(&self) -> bool {
        !self.phi_plus.is_empty() && !self.phi_minus.is_empty()
    }

    pub fn warmup_labels(&self) -> &[Label] {
        &self.warmup_labels
    }

    pub fn snapshot(&self) -> SteadySnapshot {
        SteadySnapshot {
            k: self.config.k,
            processed: self.processed,
            initialized: self.is_initialized(),
            positive: self.phi_plus.samples().to_vec(),
            negative: self.phi_minus.samples().to_vec(),
            init_buffer: self.init_buffer.clone(),
            anomalies: self.anomalies,
        }
    }

    fn check_range(&self, f: f64) -> Result<(), SteadyError> {
        let (lo, hi) = self.config.range;
        if !f.is_finite() || f < lo || f > hi {
            return Err(SteadyError::OutOfRange { value: f, lo, hi });
        }
        Ok(())
    }

    fn require_init(&self) -> Result<(), SteadyError> {
        if self.is_initialized() {
            Ok(())
        } else {
            Err(SteadyError::Uninitialized {
                seen: self.init_buffer.len(),
                k: self.config.k,
            })
        }
    }

    /// Buffer a warm-up value. The provisional label compares `f` with the
    /// running mean of the buffer (including `f`); on the k-th value the
    /// buffer is split at its mean, or at its sorted midpoint index when all
    /// values coincide.
    fn init(&mut self, f: f64) -> LabeledFeedback {
        self.init_buffer.push(f);
        self.processed += 1;
        let running_mean = self.init_buffer.iter().sum::<f64>() / self.init_buffer.len() as f64;
        let mut label = Label::from_bool(f > running_mean);

        if self.init_buffer.len() >= self.config.k.max(1) {
            let buffer = std::mem::take(&mut self.init_buffer);
            let mean = buffer.iter().sum::<f64>() / buffer.len() as f64;
            let (plus, minus): (Vec<f64>, Vec<f64>) = buffer.iter().partition(|&&v| v > mean);
            if plus.is_empty() || minus.is_empty() {
                let mut sorted = buffer.clone();
                sorted.sort_by(f64::total_cmp);
                let mid = sorted.len() / 2;
                self.phi_minus = sorted[..mid].to_vec().into();
                self.phi_plus = sorted[mid..].to_vec().into();
                // Equal values: positions in the sorted buffer decide.
                let mut order: Vec<usize> = (0..buffer.len()).collect();
                order.sort_by(|&a, &b| buffer[a].total_cmp(&buffer[b]));
                let mut labels = vec![Label::Negative; buffer.len()];
                for &idx in &order[mid..] {
                    labels[idx] = Label::Positive;
                }
                self.warmup_labels = labels;
            } else {
                self.phi_plus = plus.into();
                self.phi_minus = minus.into();
                self.warmup_labels = buffer.iter().map(|&v| Label::from_bool(v > mean)).collect();
            }
            label = *self.warmup_labels.last().expect("buffer non-empty");
            self.check_mean_order();
        }
        LabeledFeedback::new(f, label, 1.0, ConfidenceCase::Warmup)
    }

    /// Label that maximizes the Wasserstein distance after adding `f`.
    /// Exact ties go to the distribution whose mean is nearer to `f`, and
    /// equidistant ties to the negative side.
    pub fn classify(&self, f: f64) -> Result<Label, SteadyError> {
        self.require_init()?;
        let to_plus = wasserstein(&self.phi_plus.with(f), &self.phi_minus)?;
        let to_minus = wasserstein(&self.phi_plus, &self.phi_minus.with(f))?;
        Ok(match to_plus.partial_cmp(&to_minus) {
            Some(Ordering::Greater) => Label::Positive,
            Some(Ordering::Less) => Label::Negative,
            _ => {
                let dp = (f - self.phi_plus.mean()).abs();
                let dm = (f - self.phi_minus.mean()).abs();
                Label::from_bool(dp < dm)
            }
        })
    }

    /// Confidence degree of `f` already placed in the `label` distribution.
    ///
    /// `M1` is the CDF mass of that distribution between the two means,
    /// `M2` the mass between its mean and `f`. Values strictly beyond the
    /// mean, away from the other distribution, score `1 + M1 + M2`; all
    /// others score `1 - M1 + M2`.
    pub fn confidence(&self, f: f64, label: Label) -> Result<(f64, ConfidenceCase), SteadyError> {
        self.require_init()?;
        let (own, other) = match label {
            Label::Positive => (&self.phi_plus, &self.phi_minus),
            Label::Negative => (&self.phi_minus, &self.phi_plus),
        };
        Ok(confidence_degree(own, other.mean(), f))
    }

    /// Exchange `min(phi+)` and `max(phi-)` when `f` sits in the 3-sigma band
    /// of both distributions and both hold at least two samples. A move is
    /// skipped when the value it would pop is `f` itself. Returns whether the
    /// precondition held.
    pub fn reduce_overlap(&mut self, f: f64) -> bool {
        if self.phi_plus.len() < 2 || self.phi_minus.len() < 2 {
            return false;
        }
        if !(self.phi_plus.within_three_sigma(f) && self.phi_minus.within_three_sigma(f)) {
            return false;
        }
        if self.phi_plus.min() != Some(f) {
            if let Some(v) = self.phi_plus.pop_min() {
                self.phi_minus.insert(v);
            }
        }
        if self.phi_minus.max() != Some(f) {
            if let Some(v) = self.phi_minus.pop_max() {
                self.phi_plus.insert(v);
            }
        }
        true
    }

    /// Feed one feedback value through the filter.
    pub fn process(&mut self, f: f64) -> Result<LabeledFeedback, SteadyError> {
        self.check_range(f)?;
        if !self.is_initialized() {
            return Ok(self.init(f));
        }
        let label = self.classify(f)?;
        match label {
            Label::Positive => self.phi_plus.insert(f),
            Label::Negative => self.phi_minus.insert(f),
        }
        self.processed += 1;
        let (confidence, case) = self.confidence(f, label)?;
        self.reduce_overlap(f);
        self.check_mean_order();
        Ok(LabeledFeedback::new(f, label, confidence, case))
    }

    /// The higher-mean distribution is the positive one. An inversion is
    /// counted, logged and undone by swapping the two.
    fn check_mean_order(&mut self) {
        if self.phi_plus.mean() <= self.phi_minus.mean() {
            self.anomalies += 1;
            log::debug!(
                "positive mean {} not above negative mean {}",
                self.phi_plus.mean(),
                self.phi_minus.mean()
            );
            if self.phi_plus.mean() < self.phi_minus.mean() {
                std::mem::swap(&mut self.phi_plus, &mut self.phi_minus);
            }
        }
    }
}

fn confidence_degree(own: &EmpDistribution, other_mean: f64, f: f64) -> (f64, ConfidenceCase) {
    let mu = own.mean();
    let m1 = (own.cdf(mu) - own.cdf(other_mean)).abs();
    let m2 = (own.cdf(f) - own.cdf(mu)).abs();
    let increase = if mu > other_mean {
        f > mu
    } else if mu < other_mean {
        f < mu
    } else {
        false
    };
    if increase {
        (1.0 + m1 + m2, ConfidenceCase::Increase)
    } else {
        (1.0 - m1 + m2, ConfidenceCase::Decrease)
    }
}

/// Spread over `m` mean-ordered distributions: for m = 2 the pairwise
/// distance, otherwise the sum over each adjacent triple `(u, v, q)` of
/// `W(u, v) + W(v, q)`.
pub fn multi_distance(distributions: &[EmpDistribution]) -> Result<f64, SteadyError> {
    match distributions.len() {
        0 | 1 => Err(SteadyError::TooFewDistributions {
            need: 2,
            got: distributions.len(),
        }),
        2 => wasserstein(&distributions[0], &distributions[1]),
        _ => {
            let mut total = 0.0;
            for w in distributions.windows(3) {
                total += wasserstein(&w[0], &w[1])? + wasserstein(&w[1], &w[2])?;
            }
            Ok(total)
        }
    }
}

/// Index of the distribution that maximizes `multi_distance` once `f` joins
/// it. Ties go to the nearest mean, then the lowest index.
pub fn classify_m(distributions: &[EmpDistribution], f: f64) -> Result<usize, SteadyError> {
    if distributions.len() < 2 {
        return Err(SteadyError::TooFewDistributions {
            need: 2,
            got: distributions.len(),
        });
    }
    let mut scores = Vec::with_capacity(distributions.len());
    let mut trial = distributions.to_vec();
    for i in 0..distributions.len() {
        trial[i] = distributions[i].with(f);
        scores.push(multi_distance(&trial)?);
        trial[i] = distributions[i].clone();
    }
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winner = (0..scores.len())
        .filter(|&i| scores[i] == best)
        .min_by(|&a, &b| {
            let da = (f - distributions[a].mean()).abs();
            let db = (f - distributions[b].mean()).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .expect("at least two candidates");
    Ok(winner)
}

/// Split a buffer into `m` contiguous groups at its `100 i / m` percentiles.
pub fn init_m(buffer: &[f64], m: usize) -> Result<Vec<EmpDistribution>, SteadyError> {
    if m == 0 || m > buffer.len() {
        return Err(SteadyError::TooManyGroups { m, len: buffer.len() });
    }
    if buffer.iter().any(|v| !v.is_finite()) {
        return Err(SteadyError::NonFinite);
    }
    let mut sorted = buffer.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok((0..m)
        .map(|i| sorted[i * n / m..(i + 1) * n / m].to_vec().into())
        .collect())
}
