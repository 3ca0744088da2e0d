//! Synthetic teachers.
//!
//! A teacher scores each clip with a latent value
//! `5 + gain * target + offset + drift * [second session] + noise`, where the
//! target maps the clip's advantage to `[-1, 1]`. Scalar teachers report the
//! latent rounded and clamped to 0..=10; binary teachers report `good` when it
//! exceeds 5, then flip the label with probability `flip_prob`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{agreement_report, AgreementReport, AnalysisError};
use crate::env::{Session, Transition};
use crate::feedback::{FeedbackEvent, FeedbackLog, FeedbackValue, Modality};
use crate::oracle::{advantage, QTable};
use crate::rng::{derive_seed, seeded, SimRng};

pub const CLIP_MS: u64 = 3000;

pub const TARGET_BINARY_AGREEMENT: f64 = 0.763;
pub const TARGET_SCALAR_AGREEMENT: [f64; 3] = [0.252, 0.582, 0.777];
pub const CALIBRATION_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherProfile {
    pub id: String,
    pub modality: Modality,
    pub gain: f64,
    pub offset: f64,
    pub session_drift: f64,
    pub noise_sigma: f64,
    pub flip_prob: f64,
    /// How sharply the teacher separates the best action from the rest.
    pub sharpness: f64,
    pub rng_seed: u64,
}

/// Scale that maps advantages onto the teacher target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale(pub f64);

impl TargetScale {
    /// Median of the nonzero `|advantage|` over the clips; 1 if all are zero.
    pub fn from_clips(q: &QTable, clips: &[Transition]) -> Self {
        let mut mags: Vec<f64> = clips
            .iter()
            .map(|t| advantage(q, t.state, t.action).abs())
            .filter(|a| *a > 0.0)
            .collect();
        if mags.is_empty() {
            return TargetScale(1.0);
        }
        mags.sort_by(f64::total_cmp);
        let mid = mags.len() / 2;
        let median = if mags.len().is_multiple_of(2) {
            0.5 * (mags[mid - 1] + mags[mid])
        } else {
            mags[mid]
        };
        TargetScale(median)
    }

    /// `1 - 2 tanh(sharpness |A| / scale)`: 1 for the best action, towards
    /// -1 as the advantage gap grows.
    pub fn normalized_target(self, advantage: f64, sharpness: f64) -> f64 {
        1.0 - 2.0 * (sharpness * advantage.abs() / self.0).tanh()
    }
}

/// Latent score before quantization.
pub fn latent_score(p: &TeacherProfile, target: f64, session: u8, rng: &mut SimRng) -> f64 {
    let noise = Normal::new(0.0, p.noise_sigma.max(0.0))
        .expect("finite sigma")
        .sample(rng);
    let drift = if session == 2 { p.session_drift } else { 0.0 };
    5.0 + p.gain * target + p.offset + drift + noise
}

/// One rating for one transition. Draws one normal variate, plus one uniform
/// for binary teachers.
pub fn sample_feedback(
    p: &TeacherProfile,
    t: &Transition,
    q: &QTable,
    scale: TargetScale,
    session: u8,
    rng: &mut SimRng,
) -> FeedbackValue {
    let target = scale.normalized_target(advantage(q, t.state, t.action), p.sharpness);
    let latent = latent_score(p, target, session, rng);
    match p.modality {
        Modality::Scalar => FeedbackValue::Scalar(latent.round().clamp(0.0, 10.0) as u8),
        Modality::Binary => {
            let good = latent > 5.0;
            let flip = rng.random::<f64>() < p.flip_prob;
            if good != flip {
                FeedbackValue::Good
            } else {
                FeedbackValue::Bad
            }
        }
    }
}

/// The teacher's 200 ratings of a session pair, one per clip.
pub fn generate_log(p: &TeacherProfile, session: &Session, q: &QTable) -> FeedbackLog {
    let scale = TargetScale::from_clips(q, session.unique_transitions());
    let mut rng = seeded(p.rng_seed);
    let events = session
        .clips
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let clip_index = i as u32;
            let session_no = FeedbackEvent::session_for_clip(clip_index);
            FeedbackEvent {
                teacher_id: p.id.clone(),
                modality: p.modality,
                clip_index,
                session: session_no,
                transition_id: t.id,
                value: sample_feedback(p, t, q, scale, session_no, &mut rng),
                timestamp_ms: u64::from(clip_index) * CLIP_MS + CLIP_MS / 2,
            }
        })
        .collect();
    FeedbackLog {
        teacher_id: p.id.clone(),
        modality: p.modality,
        events,
    }
}

/// Parameter ranges for one modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileRanges {
    pub gain: (f64, f64),
    pub offset: (f64, f64),
    pub session_drift: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub flip_prob: (f64, f64),
    pub sharpness: (f64, f64),
}

impl Default for ProfileRanges {
    fn default() -> Self {
        Self {
            gain: (2.0, 4.0),
            offset: (-1.5, 3.0),
            session_drift: (0.0, 2.0),
            noise_sigma: (1.4, 2.0),
            flip_prob: (0.0, 0.0),
            sharpness: (1.0, 1.0),
        }
    }
}

impl ProfileRanges {
    /// Scalar ranges plus a per-teacher flip rate for binary clicks.
    pub fn binary() -> Self {
        Self {
            flip_prob: (0.0, 0.15),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortParams {
    pub n_per_modality: usize,
    pub scalar: ProfileRanges,
    pub binary: ProfileRanges,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self {
            n_per_modality: 45,
            scalar: ProfileRanges::default(),
            binary: ProfileRanges::binary(),
        }
    }
}

/// Stratified draw of `n` values from `[lo, hi]`: one per equal-width
/// stratum, in shuffled order.
fn stratified(n: usize, (lo, hi): (f64, f64), rng: &mut SimRng) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..n)
        .map(|i| {
            let u = (i as f64 + rng.random::<f64>()) / n as f64;
            lo + (hi - lo) * u
        })
        .collect();
    vals.shuffle(rng);
    vals
}

fn draw_profiles(modality: Modality, n: usize, ranges: &ProfileRanges, seed: u64) -> Vec<TeacherProfile> {
    let mut rng = seeded(seed);
    let gain = stratified(n, ranges.gain, &mut rng);
    let offset = stratified(n, ranges.offset, &mut rng);
    let drift = stratified(n, ranges.session_drift, &mut rng);
    let noise = stratified(n, ranges.noise_sigma, &mut rng);
    let flip = stratified(n, ranges.flip_prob, &mut rng);
    let sharpness = stratified(n, ranges.sharpness, &mut rng);
    (0..n)
        .map(|i| TeacherProfile {
            id: format!("{modality}-{i:02}"),
            modality,
            gain: gain[i],
            offset: offset[i],
            session_drift: drift[i],
            noise_sigma: noise[i].max(0.0),
            flip_prob: flip[i].clamp(0.0, 1.0),
            sharpness: sharpness[i].max(0.0),
            rng_seed: derive_seed(seed, i as u64),
        })
        .collect()
}

/// `n` scalar teachers followed by `n` binary teachers. Teacher `i` of each
/// modality shares its index so the two can be paired.
pub fn generate_cohort(params: &CohortParams, seed: u64) -> Vec<TeacherProfile> {
    let n = params.n_per_modality;
    let mut out = draw_profiles(Modality::Scalar, n, &params.scalar, derive_seed(seed, 1));
    out.extend(draw_profiles(Modality::Binary, n, &params.binary, derive_seed(seed, 2)));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub agreement: AgreementReport,
    pub binary_delta: Option<f64>,
    pub scalar_delta: Option<[f64; 3]>,
    pub majority_positive: bool,
    pub within_tolerance: bool,
}

pub fn verify_calibration(logs: &[FeedbackLog]) -> Result<CalibrationReport, AnalysisError> {
    let agreement = agreement_report(logs)?;
    let binary_delta = agreement.binary_mean.map(|m| m - TARGET_BINARY_AGREEMENT);
    let scalar_delta = agreement.scalar_mean.map(|m| {
        let mut d = [0.0; 3];
        for k in 0..3 {
            d[k] = m[k] - TARGET_SCALAR_AGREEMENT[k];
        }
        d
    });
    let majority_positive = 2 * agreement.positive_biased > agreement.teachers.len();
    let within_tolerance = binary_delta.is_some_and(|d| d.abs() <= CALIBRATION_TOLERANCE)
        && scalar_delta.is_some_and(|d| d.iter().all(|x| x.abs() <= CALIBRATION_TOLERANCE));
    Ok(CalibrationReport {
        agreement,
        binary_delta,
        scalar_delta,
        majority_positive,
        within_tolerance,
    })
}
