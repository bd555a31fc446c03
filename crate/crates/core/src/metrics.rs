//! Metrics rows and their CSV form.
//!
//! Column order is fixed and floats are written with nine significant digits
//! so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SimError};

pub const COLUMNS: [&str; 21] = [
    "run_id",
    "config_hash",
    "scheme",
    "stage",
    "kind",
    "episode",
    "slot",
    "avg_loss",
    "accuracy",
    "error_rate",
    "reward",
    "attacked_fraction",
    "selected_count",
    "accepted_count",
    "rejected_count",
    "mean_delay",
    "mean_beta1",
    "mean_beta2",
    "rsu_loss",
    "filter_violations",
    "mask",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// One row per slot.
    Slot,
    /// Episode summary: final-slot loss and accuracy, summed reward.
    Episode,
}

impl RowKind {
    fn as_str(self) -> &'static str {
        match self {
            RowKind::Slot => "slot",
            RowKind::Episode => "episode",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub config_hash: String,
    pub scheme: String,
    pub stage: String,
    pub kind: RowKind,
    pub episode: usize,
    /// Slot index; episode rows carry the number of slots played.
    pub slot: usize,
    pub avg_loss: f64,
    pub accuracy: f64,
    pub error_rate: f64,
    pub reward: f64,
    pub attacked_fraction: f64,
    pub selected_count: usize,
    pub accepted_count: usize,
    pub rejected_count: usize,
    pub mean_delay: f64,
    pub mean_beta1: f64,
    pub mean_beta2: f64,
    /// Absent when the threshold filter was off.
    pub rsu_loss: Option<f64>,
    pub filter_violations: usize,
    /// Admission mask as a 0/1 string, vehicle 0 first.
    pub mask: String,
}

fn float(v: f64) -> String {
    format!("{v:.8e}")
}

impl MetricsRow {
    fn to_fields(&self) -> [String; 21] {
        [
            self.run_id.clone(),
            self.config_hash.clone(),
            self.scheme.clone(),
            self.stage.clone(),
            self.kind.as_str().to_string(),
            self.episode.to_string(),
            self.slot.to_string(),
            float(self.avg_loss),
            float(self.accuracy),
            float(self.error_rate),
            float(self.reward),
            float(self.attacked_fraction),
            self.selected_count.to_string(),
            self.accepted_count.to_string(),
            self.rejected_count.to_string(),
            float(self.mean_delay),
            float(self.mean_beta1),
            float(self.mean_beta2),
            self.rsu_loss.map(float).unwrap_or_default(),
            self.filter_violations.to_string(),
            self.mask.clone(),
        ]
    }

    fn from_fields(fields: &[&str], line: usize) -> Result<Self> {
        if fields.len() != COLUMNS.len() {
            return Err(SimError::Parse {
                line,
                reason: format!("expected {} columns, found {}", COLUMNS.len(), fields.len()),
            });
        }
        let err = |col: usize, e: &dyn std::fmt::Display| SimError::Parse {
            line,
            reason: format!("column {}: {e}", COLUMNS[col]),
        };
        let f = |col: usize| fields[col].parse::<f64>().map_err(|e| err(col, &e));
        let u = |col: usize| fields[col].parse::<usize>().map_err(|e| err(col, &e));
        let kind = match fields[4] {
            "slot" => RowKind::Slot,
            "episode" => RowKind::Episode,
            other => return Err(err(4, &format!("unknown kind `{other}`"))),
        };
        Ok(Self {
            run_id: fields[0].to_string(),
            config_hash: fields[1].to_string(),
            scheme: fields[2].to_string(),
            stage: fields[3].to_string(),
            kind,
            episode: u(5)?,
            slot: u(6)?,
            avg_loss: f(7)?,
            accuracy: f(8)?,
            error_rate: f(9)?,
            reward: f(10)?,
            attacked_fraction: f(11)?,
            selected_count: u(12)?,
            accepted_count: u(13)?,
            rejected_count: u(14)?,
            mean_delay: f(15)?,
            mean_beta1: f(16)?,
            mean_beta2: f(17)?,
            rsu_loss: if fields[18].is_empty() {
                None
            } else {
                Some(f(18)?)
            },
            filter_violations: u(19)?,
            mask: fields[20].to_string(),
        })
    }
}

/// Header plus one line per row.
pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.to_fields().join(","));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == COLUMNS.join(",") => {}
        _ => {
            return Err(SimError::Parse {
                line: 1,
                reason: "missing or unexpected header".into(),
            })
        }
    }
    lines
        .enumerate()
        .map(|(i, l)| MetricsRow::from_fields(&l.split(',').collect::<Vec<_>>(), i + 2))
        .collect()
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(SimError::InvalidParameter {
            name: "rows",
            reason: "refusing to write an empty metrics file".into(),
        });
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_csv(rows))?;
    Ok(())
}
