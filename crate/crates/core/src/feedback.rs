//! Feedback events and the canonical feedback CSV.
//!
//! Columns: `teacher_id,modality,clip_index,session,transition_id,value,timestamp_ms`.
//! `value` is `good` / `bad` for binary teachers and an integer 0..=10 for
//! scalar teachers. Clips 0..99 belong to session 1, clips 100..199 to session 2.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Session;

pub const COLUMNS: [&str; 7] = [
    "teacher_id",
    "modality",
    "clip_index",
    "session",
    "transition_id",
    "value",
    "timestamp_ms",
];

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}, column `{column}`: {msg}")]
    Field { row: usize, column: &'static str, msg: String },
    #[error("teacher {teacher}: {msg}")]
    Log { teacher: String, msg: String },
    #[error("no feedback events")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Binary,
    Scalar,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Binary => "binary",
            Modality::Scalar => "scalar",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Modality::Binary),
            "scalar" => Ok(Modality::Scalar),
            _ => Err(format!("unknown modality `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum FeedbackValue {
    Good,
    Bad,
    Scalar(u8),
}

impl FeedbackValue {
    pub fn modality(self) -> Modality {
        match self {
            FeedbackValue::Scalar(_) => Modality::Scalar,
            _ => Modality::Binary,
        }
    }

    /// Numeric view: `bad -> 0`, `good -> 1`, scalars as-is.
    pub fn numeric(self) -> f64 {
        match self {
            FeedbackValue::Bad => 0.0,
            FeedbackValue::Good => 1.0,
            FeedbackValue::Scalar(v) => f64::from(v),
        }
    }

    pub fn scalar(v: i64) -> Result<Self, String> {
        u8::try_from(v)
            .ok()
            .filter(|v| *v <= 10)
            .map(FeedbackValue::Scalar)
            .ok_or_else(|| format!("scalar feedback {v} outside 0..=10"))
    }

    /// Parse a value of the given modality.
    pub fn parse_as(s: &str, modality: Modality) -> Result<Self, String> {
        let v: FeedbackValue = s.parse()?;
        if v.modality() != modality {
            return Err(format!("value `{s}` does not match modality {modality}"));
        }
        Ok(v)
    }
}

impl fmt::Display for FeedbackValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedbackValue::Good => f.write_str("good"),
            FeedbackValue::Bad => f.write_str("bad"),
            FeedbackValue::Scalar(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for FeedbackValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "good" => Ok(FeedbackValue::Good),
            "bad" => Ok(FeedbackValue::Bad),
            other => {
                let v: i64 = other.parse().map_err(|_| format!("invalid feedback value `{other}`"))?;
                FeedbackValue::scalar(v)
            }
        }
    }
}

impl TryFrom<serde_json::Value> for FeedbackValue {
    type Error = String;

    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        match v {
            serde_json::Value::String(s) => s.parse(),
            serde_json::Value::Number(n) => {
                let i = n.as_i64().ok_or_else(|| format!("scalar feedback {n} is not an integer"))?;
                FeedbackValue::scalar(i)
            }
            other => Err(format!("invalid feedback value {other}")),
        }
    }
}

impl From<FeedbackValue> for serde_json::Value {
    fn from(v: FeedbackValue) -> Self {
        match v {
            FeedbackValue::Scalar(s) => serde_json::Value::from(s),
            other => serde_json::Value::from(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub teacher_id: String,
    pub modality: Modality,
    pub clip_index: u32,
    pub session: u8,
    pub transition_id: u64,
    pub value: FeedbackValue,
    pub timestamp_ms: u64,
}

impl FeedbackEvent {
    pub fn session_for_clip(clip_index: u32) -> u8 {
        if (clip_index as usize) < Session::CLIPS_PER_SESSION {
            1
        } else {
            2
        }
    }
}

/// One teacher's feedback over a session pair, in clip order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLog {
    pub teacher_id: String,
    pub modality: Modality,
    pub events: Vec<FeedbackEvent>,
}

impl FeedbackLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks clip order, session tags and modality. A complete log holds
    /// exactly one event for each of the 200 clips; a partial log holds a
    /// prefix of them.
    pub fn validate(&self, complete: bool) -> Result<(), FeedbackError> {
        let err = |msg: String| FeedbackError::Log {
            teacher: self.teacher_id.clone(),
            msg,
        };
        if complete && self.events.len() != Session::TOTAL_CLIPS {
            return Err(err(format!("expected {} events, found {}", Session::TOTAL_CLIPS, self.events.len())));
        }
        if self.events.len() > Session::TOTAL_CLIPS {
            return Err(err(format!("more than {} events", Session::TOTAL_CLIPS)));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.teacher_id != self.teacher_id {
                return Err(err(format!("event {i} belongs to teacher {}", e.teacher_id)));
            }
            if e.clip_index as usize != i {
                return Err(err(format!("event {i} has clip_index {}, expected {i}", e.clip_index)));
            }
            if e.session != FeedbackEvent::session_for_clip(e.clip_index) {
                return Err(err(format!("clip {} tagged session {}", e.clip_index, e.session)));
            }
            if e.modality != self.modality || e.value.modality() != self.modality {
                return Err(err(format!("clip {} mixes modalities", e.clip_index)));
            }
        }
        Ok(())
    }

    /// Values of clip `i` and clip `i + 100`, for every clip answered twice.
    pub fn session_pairs(&self) -> impl Iterator<Item = (FeedbackValue, FeedbackValue)> + '_ {
        let half = Session::CLIPS_PER_SESSION;
        (0..half.min(self.events.len().saturating_sub(half))).map(move |i| (self.events[i].value, self.events[i + half].value))
    }
}

pub fn write_csv<W: Write>(logs: &[FeedbackLog], w: W) -> Result<(), FeedbackError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COLUMNS)?;
    for log in logs {
        for e in &log.events {
            wtr.write_record([
                e.teacher_id.clone(),
                e.modality.to_string(),
                e.clip_index.to_string(),
                e.session.to_string(),
                e.transition_id.to_string(),
                e.value.to_string(),
                e.timestamp_ms.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parse the canonical CSV into per-teacher logs, in order of first
/// appearance. `complete` demands 200 events per teacher.
pub fn read_csv<R: Read>(r: R, complete: bool) -> Result<Vec<FeedbackLog>, FeedbackError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let mut pos = [0usize; 7];
    for (slot, name) in pos.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(FeedbackError::MissingColumn(name))?;
    }
    let mut logs: Vec<FeedbackLog> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let field = |k: usize| record.get(pos[k]).unwrap_or("").trim();
        let bad = |k: usize, msg: String| FeedbackError::Field {
            row,
            column: COLUMNS[k],
            msg,
        };
        let teacher_id = field(0).to_string();
        if teacher_id.is_empty() {
            return Err(bad(0, "empty teacher id".into()));
        }
        let modality: Modality = field(1).parse().map_err(|e| bad(1, e))?;
        let clip_index: u32 = field(2).parse().map_err(|e| bad(2, format!("{e}")))?;
        let session: u8 = field(3).parse().map_err(|e| bad(3, format!("{e}")))?;
        if session != 1 && session != 2 {
            return Err(bad(3, format!("session must be 1 or 2, got {session}")));
        }
        let transition_id: u64 = field(4).parse().map_err(|e| bad(4, format!("{e}")))?;
        let value = FeedbackValue::parse_as(field(5), modality).map_err(|e| bad(5, e))?;
        let timestamp_ms: u64 = field(6).parse().map_err(|e| bad(6, format!("{e}")))?;
        let event = FeedbackEvent {
            teacher_id,
            modality,
            clip_index,
            session,
            transition_id,
            value,
            timestamp_ms,
        };
        match logs.iter_mut().find(|l| l.teacher_id == event.teacher_id) {
            Some(log) => log.events.push(event),
            None => logs.push(FeedbackLog {
                teacher_id: event.teacher_id.clone(),
                modality,
                events: vec![event],
            }),
        }
    }
    if logs.is_empty() {
        return Err(FeedbackError::Empty);
    }
    for log in &logs {
        log.validate(complete)?;
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn log_of(id: &str, values: &[FeedbackValue]) -> FeedbackLog {
        let modality = values[0].modality();
        FeedbackLog {
            teacher_id: id.into(),
            modality,
            events: values
                .iter()
                .enumerate()
                .map(|(i, &value)| FeedbackEvent {
                    teacher_id: id.into(),
                    modality,
                    clip_index: i as u32,
                    session: FeedbackEvent::session_for_clip(i as u32),
                    transition_id: (i % 100) as u64,
                    value,
                    timestamp_ms: i as u64 * 3000,
                })
                .collect(),
        }
    }

    #[test]
    fn value_tokens() {
        assert_eq!("good".parse::<FeedbackValue>().unwrap(), FeedbackValue::Good);
        assert_eq!("7".parse::<FeedbackValue>().unwrap(), FeedbackValue::Scalar(7));
        assert!("11".parse::<FeedbackValue>().is_err());
        assert!("-1".parse::<FeedbackValue>().is_err());
        assert!(FeedbackValue::parse_as("good", Modality::Scalar).is_err());
        let json = serde_json::to_string(&[FeedbackValue::Bad, FeedbackValue::Scalar(3)]).unwrap();
        assert_eq!(json, r#"["bad",3]"#);
        let back: Vec<FeedbackValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![FeedbackValue::Bad, FeedbackValue::Scalar(3)]);
    }

    #[test]
    fn csv_round_trip() {
        let a = log_of("s1", &[FeedbackValue::Scalar(4); 200]);
        let b = log_of("b1", &[FeedbackValue::Good; 200]);
        let mut buf = Vec::new();
        write_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("teacher_id,modality,clip_index,session,transition_id,value,timestamp_ms\n"));
        assert_eq!(read_csv(buf.as_slice(), true).unwrap(), vec![a, b]);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "teacher_id,modality,clip_index,session,value,timestamp_ms\n";
        let err = read_csv(csv.as_bytes(), true).unwrap_err();
        assert!(matches!(err, FeedbackError::MissingColumn("transition_id")));
    }

    #[test]
    fn short_log_rejected_when_complete() {
        let log = log_of("s1", &[FeedbackValue::Scalar(4); 199]);
        let mut buf = Vec::new();
        write_csv(&[log], &mut buf).unwrap();
        assert!(matches!(read_csv(buf.as_slice(), true), Err(FeedbackError::Log { .. })));
        assert_eq!(read_csv(buf.as_slice(), false).unwrap()[0].len(), 199);
    }

    #[test]
    fn bad_value_reports_row_and_column() {
        let csv = "teacher_id,modality,clip_index,session,transition_id,value,timestamp_ms\nt,scalar,0,1,0,12,0\n";
        match read_csv(csv.as_bytes(), false).unwrap_err() {
            FeedbackError::Field { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "value");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn session_tag_checked() {
        let mut log = log_of("s1", &[FeedbackValue::Scalar(4); 200]);
        log.events[150].session = 1;
        assert!(log.validate(true).is_err());
    }
}
