//! Descriptive statistics over feedback logs: self-agreement between the two
//! sessions, session bias, and Spearman correlation with learning targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Session, Transition};
use crate::feedback::{FeedbackError, FeedbackLog, FeedbackValue, Modality};
use crate::oracle::{action_rank, advantage, normalized_q, QTable};

pub const THRESHOLDS: [f64; 3] = [0.0, 1.0, 2.0];
pub const SCALAR_BIAS_THRESHOLD: f64 = 0.5;
pub const BINARY_BIAS_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooShort,
    #[error("constant input has no ranks to correlate")]
    Constant,
    #[error("clip {clip}: transition id {got} does not match {expected}")]
    Misaligned { clip: usize, got: u64, expected: u64 },
    #[error("no logs to analyze")]
    Empty,
}

/// Fraction of the 100 clips whose two ratings differ by at most
/// `threshold`. Binary ratings agree only when equal.
pub fn self_agreement(log: &FeedbackLog, threshold: f64) -> Result<f64, AnalysisError> {
    log.validate(true)?;
    let agreed = log
        .session_pairs()
        .filter(|&(a, b)| match log.modality {
            Modality::Binary => a == b,
            Modality::Scalar => (a.numeric() - b.numeric()).abs() <= threshold,
        })
        .count();
    Ok(agreed as f64 / Session::CLIPS_PER_SESSION as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasClass {
    Positive,
    Negative,
    NonBiased,
}

/// Mean of session 2 minus mean of session 1, with `bad = 0` and `good = 1`.
pub fn session_bias(log: &FeedbackLog) -> Result<(f64, BiasClass), AnalysisError> {
    log.validate(true)?;
    let half = Session::CLIPS_PER_SESSION;
    let mean = |events: &[crate::feedback::FeedbackEvent]| {
        events.iter().map(|e| e.value.numeric()).sum::<f64>() / events.len() as f64
    };
    let delta = mean(&log.events[half..]) - mean(&log.events[..half]);
    let threshold = match log.modality {
        Modality::Scalar => SCALAR_BIAS_THRESHOLD,
        Modality::Binary => BINARY_BIAS_THRESHOLD,
    };
    let class = if delta > threshold {
        BiasClass::Positive
    } else if delta < -threshold {
        BiasClass::Negative
    } else {
        BiasClass::NonBiased
    };
    Ok((delta, class))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooShort);
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherAgreement {
    pub teacher_id: String,
    pub modality: Modality,
    /// Agreement at 0, 1 and 2.
    pub agreement: [f64; 3],
    pub bias: f64,
    pub bias_class: BiasClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub teachers: Vec<TeacherAgreement>,
    pub binary_mean: Option<f64>,
    pub scalar_mean: Option<[f64; 3]>,
    pub positive_biased: usize,
    pub negative_biased: usize,
    pub non_biased: usize,
}

pub fn agreement_report(logs: &[FeedbackLog]) -> Result<AgreementReport, AnalysisError> {
    if logs.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut teachers = Vec::with_capacity(logs.len());
    for log in logs {
        let mut agreement = [0.0; 3];
        for (slot, &th) in agreement.iter_mut().zip(&THRESHOLDS) {
            *slot = self_agreement(log, th)?;
        }
        let (bias, bias_class) = session_bias(log)?;
        teachers.push(TeacherAgreement {
            teacher_id: log.teacher_id.clone(),
            modality: log.modality,
            agreement,
            bias,
            bias_class,
        });
    }
    let of = |m: Modality| teachers.iter().filter(move |t| t.modality == m);
    let binary: Vec<f64> = of(Modality::Binary).map(|t| t.agreement[0]).collect();
    let scalar: Vec<[f64; 3]> = of(Modality::Scalar).map(|t| t.agreement).collect();
    let binary_mean = (!binary.is_empty()).then(|| binary.iter().sum::<f64>() / binary.len() as f64);
    let scalar_mean = (!scalar.is_empty()).then(|| {
        let mut m = [0.0; 3];
        for row in &scalar {
            for k in 0..3 {
                m[k] += row[k] / scalar.len() as f64;
            }
        }
        m
    });
    let count = |c: BiasClass| teachers.iter().filter(|t| t.bias_class == c).count();
    Ok(AgreementReport {
        binary_mean,
        scalar_mean,
        positive_biased: count(BiasClass::Positive),
        negative_biased: count(BiasClass::Negative),
        non_biased: count(BiasClass::NonBiased),
        teachers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub teacher_id: String,
    pub advantage: Option<f64>,
    pub normalized_q: Option<f64>,
    /// Against the action rank, where 0 is the best action.
    pub action_rank: Option<f64>,
    /// Events skipped for the normalized-Q target because Q sums to zero.
    pub degenerate_excluded: usize,
}

/// Spearman rho of a log's values against three targets of the transitions
/// the values were given for. `transitions[i]` is the clip shown at index i.
pub fn correlation_report(
    log: &FeedbackLog,
    q: &QTable,
    transitions: &[Transition],
) -> Result<CorrelationReport, AnalysisError> {
    if log.events.len() > transitions.len() {
        return Err(AnalysisError::LengthMismatch(log.events.len(), transitions.len()));
    }
    let mut values = Vec::with_capacity(log.len());
    let mut adv = Vec::with_capacity(log.len());
    let mut rank = Vec::with_capacity(log.len());
    let (mut nq_values, mut nq) = (Vec::new(), Vec::new());
    let mut degenerate = 0;
    for (clip, e) in log.events.iter().enumerate() {
        let t = &transitions[clip];
        if e.transition_id != t.id {
            return Err(AnalysisError::Misaligned {
                clip,
                got: e.transition_id,
                expected: t.id,
            });
        }
        let v = e.value.numeric();
        values.push(v);
        adv.push(advantage(q, t.state, t.action));
        rank.push(action_rank(q, t.state, t.action) as f64);
        match normalized_q(q, t.state, t.action) {
            Ok(x) => {
                nq_values.push(v);
                nq.push(x);
            }
            Err(_) => degenerate += 1,
        }
    }
    Ok(CorrelationReport {
        teacher_id: log.teacher_id.clone(),
        advantage: spearman(&values, &adv).ok(),
        normalized_q: spearman(&nq_values, &nq).ok(),
        action_rank: spearman(&values, &rank).ok(),
        degenerate_excluded: degenerate,
    })
}

/// Mean of the values that are present.
pub fn mean_of(xs: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = xs.into_iter().flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Values for one feedback log as `f64`, in clip order.
pub fn numeric_values(log: &FeedbackLog) -> Vec<f64> {
    log.events.iter().map(|e| FeedbackValue::numeric(e.value)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::FeedbackEvent;
    use proptest::prelude::*;

    fn scalar_log(s1: &[u8], s2: &[u8]) -> FeedbackLog {
        let values: Vec<u8> = s1.iter().chain(s2).copied().collect();
        let events = values
            .iter()
            .enumerate()
            .map(|(i, &v)| FeedbackEvent {
                teacher_id: "t".into(),
                modality: Modality::Scalar,
                clip_index: i as u32,
                session: FeedbackEvent::session_for_clip(i as u32),
                transition_id: (i % 100) as u64,
                value: FeedbackValue::Scalar(v),
                timestamp_ms: 0,
            })
            .collect();
        FeedbackLog {
            teacher_id: "t".into(),
            modality: Modality::Scalar,
            events,
        }
    }

    /// Ranks by counting: below + (equal + 1) / 2.
    fn rank_oracle(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                let below = xs.iter().filter(|&&y| y < x).count() as f64;
                let equal = xs.iter().filter(|&&y| y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn agreement_examples() {
        let s1: Vec<u8> = (0..100).map(|i| (i % 7) as u8).collect();
        let log = scalar_log(&s1, &s1);
        assert_eq!(self_agreement(&log, 0.0).unwrap(), 1.0);
        let shifted: Vec<u8> = s1.iter().map(|v| v + 2).collect();
        let log = scalar_log(&s1, &shifted);
        assert_eq!(self_agreement(&log, 1.0).unwrap(), 0.0);
        assert_eq!(self_agreement(&log, 2.0).unwrap(), 1.0);
        let alt: Vec<u8> = s1.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { v + 3 }).collect();
        assert_eq!(self_agreement(&scalar_log(&s1, &alt), 0.0).unwrap(), 0.5);
    }

    #[test]
    fn agreement_rejects_short_log() {
        let mut log = scalar_log(&[5; 100], &[5; 100]);
        log.events.pop();
        assert!(self_agreement(&log, 0.0).is_err());
    }

    #[test]
    fn bias_examples() {
        let (d, c) = session_bias(&scalar_log(&[5; 100], &[5; 100])).unwrap();
        assert_eq!((d, c), (0.0, BiasClass::NonBiased));
        let (d, c) = session_bias(&scalar_log(&[5; 100], &[6; 100])).unwrap();
        assert_eq!((d, c), (1.0, BiasClass::Positive));
        let s2: Vec<u8> = (0..100).map(|i| if i < 40 { 6 } else { 5 }).collect();
        let (d, c) = session_bias(&scalar_log(&[5; 100], &s2)).unwrap();
        assert!((d - 0.4).abs() < 1e-12);
        assert_eq!(c, BiasClass::NonBiased);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 2.0, 4.0];
        let expected = pearson(&rank_oracle(&xs), &rank_oracle(&ys));
        assert!((spearman(&xs, &ys).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(AnalysisError::Constant)));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(AnalysisError::TooShort)));
    }

    proptest! {
        #[test]
        fn agreement_monotone_in_threshold(
            s1 in prop::collection::vec(0u8..=10, 100),
            s2 in prop::collection::vec(0u8..=10, 100),
        ) {
            let log = scalar_log(&s1, &s2);
            let a: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 5.0].iter().map(|&t| self_agreement(&log, t).unwrap()).collect();
            prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn spearman_matches_rank_definition(
            pairs in prop::collection::vec((0u8..6, 0u8..6), 2..20),
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            match spearman(&xs, &ys) {
                Ok(r) => {
                    prop_assert!((r - pearson(&rank_oracle(&xs), &rank_oracle(&ys))).abs() < 1e-12);
                    prop_assert!((r - spearman(&ys, &xs).unwrap()).abs() < 1e-12);
                    let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0).collect();
                    prop_assert_eq!(spearman(&cubed, &ys).unwrap(), r);
                }
                Err(_) => prop_assert!(
                    xs.iter().all(|&x| x == xs[0]) || ys.iter().all(|&y| y == ys[0])
                ),
            }
        }
    }
}
