//! The per-instance score table written by a rating run.
//!
//! Tab-separated text. Leading `# key: value` lines carry run metadata, then
//! a header row and one row per instance, sorted by (task, instance_id).
//! Score cells are empty on rows that were not scored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::RunError;
use crate::task::TaskKind;

pub const COLUMNS: [&str; 9] = [
    "instance_id",
    "task",
    "model_name",
    "status",
    "sc",
    "pq",
    "overall",
    "sc_detail",
    "pq_detail",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowStatus {
    /// Both aspects produced sub-scores (parsed or penalty-filled).
    Scored,
    /// At least one aspect was refused.
    Dropped,
    /// At least one request failed in transport.
    Error,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Scored => "scored",
            RowStatus::Dropped => "dropped",
            RowStatus::Error => "error",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "scored" => Some(RowStatus::Scored),
            "dropped" => Some(RowStatus::Dropped),
            "error" => Some(RowStatus::Error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub instance_id: String,
    pub task: TaskKind,
    pub model_name: String,
    pub status: RowStatus,
    /// Normalized SC, PQ and Overall; present iff `status` is `Scored`.
    pub scores: Option<[f64; 3]>,
    /// Parse status or transport status per aspect.
    pub sc_detail: String,
    pub pq_detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (a.task, &a.instance_id).cmp(&(b.task, &b.instance_id)));
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(&COLUMNS.join("\t"));
        out.push('\n');
        for r in &self.rows {
            let [sc, pq, overall] = match r.scores {
                Some(s) => s.map(|v| v.to_string()),
                None => Default::default(),
            };
            let cells = [
                r.instance_id.as_str(),
                r.task.as_str(),
                &r.model_name,
                r.status.as_str(),
                &sc,
                &pq,
                &overall,
                &r.sc_detail,
                &r.pq_detail,
            ];
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, shown: &str) -> Result<Self, RunError> {
        let bad = |line: usize, msg: String| RunError::Config(format!("{shown}:{line}: {msg}"));
        let mut table = ScoreTable::default();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    table.meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let cells: Vec<&str> = line.split('\t').collect();
            if !header_seen {
                if cells != COLUMNS {
                    return Err(bad(n, format!("expected header `{}`", COLUMNS.join(" "))));
                }
                header_seen = true;
                continue;
            }
            if cells.len() != COLUMNS.len() {
                return Err(bad(n, format!("expected {} cells, found {}", COLUMNS.len(), cells.len())));
            }
            let task: TaskKind = cells[1].parse().map_err(|_| bad(n, format!("unknown task `{}`", cells[1])))?;
            let status = RowStatus::parse(cells[3]).ok_or_else(|| bad(n, format!("unknown status `{}`", cells[3])))?;
            let scores = if status == RowStatus::Scored {
                let mut v = [0.0; 3];
                for (k, slot) in v.iter_mut().enumerate() {
                    *slot = cells[4 + k]
                        .parse::<f64>()
                        .ok()
                        .filter(|x| (0.0..=1.0).contains(x))
                        .ok_or_else(|| bad(n, format!("{} `{}` is not a score in [0, 1]", COLUMNS[4 + k], cells[4 + k])))?;
                }
                Some(v)
            } else {
                None
            };
            table.rows.push(ScoreRow {
                instance_id: cells[0].to_string(),
                task,
                model_name: cells[2].to_string(),
                status,
                scores,
                sc_detail: cells[7].to_string(),
                pq_detail: cells[8].to_string(),
            });
        }
        if !header_seen {
            return Err(bad(1, "missing header row".into()));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn count(&self, status: RowStatus) -> usize {
        self.rows.iter().filter(|r| r.status == status).count()
    }
}
