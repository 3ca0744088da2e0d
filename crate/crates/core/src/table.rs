//! Dense state-action tables and their on-disk format.
//!
//! CSV rows are `x,y,z,action,value`, one per state-action pair in
//! enumeration order. The JSON form carries the same rows.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, GridPose, NUM_ACTIONS, NUM_STATES};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("table has {0} rows, expected 3500")]
    Incomplete(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    values: Vec<f64>,
}

impl Default for ActionTable {
    fn default() -> Self {
        Self::zeros()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    x: u8,
    y: u8,
    z: u8,
    action: String,
    value: f64,
}

impl ActionTable {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; NUM_STATES * NUM_ACTIONS],
        }
    }

    fn slot(s: GridPose, a: Action) -> usize {
        s.index() * NUM_ACTIONS + a.index()
    }

    pub fn get(&self, s: GridPose, a: Action) -> f64 {
        self.values[Self::slot(s, a)]
    }

    pub fn set(&mut self, s: GridPose, a: Action, v: f64) {
        self.values[Self::slot(s, a)] = v;
    }

    pub fn row(&self, s: GridPose) -> [f64; NUM_ACTIONS] {
        let base = s.index() * NUM_ACTIONS;
        let mut out = [0.0; NUM_ACTIONS];
        out.copy_from_slice(&self.values[base..base + NUM_ACTIONS]);
        out
    }

    pub fn max_value(&self, s: GridPose) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax over the row; the earliest action in `Action::ALL` wins ties.
    pub fn greedy(&self, s: GridPose) -> Action {
        let row = self.row(s);
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if row[i] > row[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn rows(&self) -> Vec<TableRow> {
        let mut rows = Vec::with_capacity(self.values.len());
        for i in 0..NUM_STATES {
            let s = GridPose::from_index(i).expect("index in range");
            for a in Action::ALL {
                rows.push(TableRow {
                    x: s.x,
                    y: s.y,
                    z: s.z,
                    action: a.name().to_string(),
                    value: self.get(s, a),
                });
            }
        }
        rows
    }

    fn from_rows(rows: impl IntoIterator<Item = Result<TableRow, TableError>>) -> Result<Self, TableError> {
        let mut table = Self::zeros();
        let mut seen = vec![false; NUM_STATES * NUM_ACTIONS];
        let mut count = 0;
        for (i, row) in rows.into_iter().enumerate() {
            let row = row?;
            let err = |msg: String| TableError::Row { row: i + 1, msg };
            let s = GridPose::new(row.x, row.y, row.z).map_err(|e| err(e.to_string()))?;
            let a: Action = row.action.parse().map_err(|e: crate::env::EnvError| err(e.to_string()))?;
            if !row.value.is_finite() {
                return Err(err("non-finite value".into()));
            }
            let slot = Self::slot(s, a);
            if seen[slot] {
                return Err(err(format!("duplicate entry for {s} {a}")));
            }
            seen[slot] = true;
            table.values[slot] = row.value;
            count += 1;
        }
        if count != NUM_STATES * NUM_ACTIONS {
            return Err(TableError::Incomplete(count));
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TableError> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows: Vec<Result<TableRow, TableError>> =
            rdr.deserialize().map(|r| r.map_err(TableError::from)).collect();
        Self::from_rows(rows)
    }

    pub fn to_json(&self) -> Result<String, TableError> {
        Ok(serde_json::to_string_pretty(&self.rows())?)
    }

    pub fn from_json(s: &str) -> Result<Self, TableError> {
        let rows: Vec<TableRow> = serde_json::from_str(s)?;
        Self::from_rows(rows.into_iter().map(Ok))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_ties_follow_action_order() {
        let mut t = ActionTable::zeros();
        let s = GridPose::new(3, 3, 3).unwrap();
        assert_eq!(t.greedy(s), Action::Left);
        t.set(s, Action::Forward, 1.0);
        t.set(s, Action::Down, 1.0);
        assert_eq!(t.greedy(s), Action::Forward);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let mut t = ActionTable::zeros();
        t.set(GridPose::new(9, 9, 6).unwrap(), Action::Down, -2.25);
        t.set(GridPose::new(0, 1, 2).unwrap(), Action::Right, 0.125);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(ActionTable::read_csv(buf.as_slice()).unwrap(), t);
        assert_eq!(ActionTable::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    #[test]
    fn truncated_csv_is_rejected() {
        let csv = "x,y,z,action,value\n0,0,0,left,1.0\n";
        assert!(matches!(ActionTable::read_csv(csv.as_bytes()), Err(TableError::Incomplete(1))));
    }
}
