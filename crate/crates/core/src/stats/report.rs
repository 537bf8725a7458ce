//! Metric-to-human (M-H) and human-to-human (H-H) correlation reports.
//!
//! Cells are Spearman correlations per image-synthesis model. A task's level
//! is the Fisher-z mean over its models, and the all-task level the Fisher-z
//! mean over task levels. Undefined cells (fewer than two instances, or a
//! constant series) are reported as such and left out of every mean.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fisher_z_mean, krippendorff_alpha, spearman, Level, StatsError};
use crate::scoring::HumanRating;
use crate::task::TaskKind;

pub const ASPECT_NAMES: [&str; 3] = ["SC", "PQ", "Overall"];

/// One value per aspect, in SC, PQ, Overall order. `None` is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Triple {
    pub sc: Option<f64>,
    pub pq: Option<f64>,
    pub overall: Option<f64>,
}

impl Triple {
    pub fn from_array(v: [Option<f64>; 3]) -> Self {
        Self {
            sc: v[0],
            pq: v[1],
            overall: v[2],
        }
    }

    pub fn to_array(self) -> [Option<f64>; 3] {
        [self.sc, self.pq, self.overall]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCorrelation {
    pub n_instances: usize,
    pub corr: Triple,
    /// Why a cell is undefined, or which rater pairs were excluded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCorrelation {
    pub per_model: BTreeMap<String, ModelCorrelation>,
    pub task_level: Triple,
    /// Inter-rater agreement (interval Krippendorff's alpha), H-H reports only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Triple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    MetricHuman,
    HumanHuman,
    BaselineHuman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Backend model, baseline metric, or "human".
    pub name: String,
    pub kind: ReportKind,
    pub meta: BTreeMap<String, String>,
    pub tasks: BTreeMap<TaskKind, TaskCorrelation>,
    pub all_task_level: Triple,
}

/// Metric and human values for one instance, each as (SC, PQ, Overall).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRow {
    pub task: TaskKind,
    pub model_name: String,
    pub instance_id: String,
    pub metric: [f64; 3],
    pub human: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanRow {
    pub task: TaskKind,
    pub model_name: String,
    pub instance_id: String,
    pub human: HumanRating,
}

fn cell(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    spearman(x, y)
}

fn fisher_or_none(values: &[f64]) -> Option<f64> {
    fisher_z_mean(values).ok()
}

fn levels<'a>(models: impl Iterator<Item = &'a ModelCorrelation>) -> Triple {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for m in models {
        for (k, v) in m.corr.to_array().into_iter().enumerate() {
            if let Some(v) = v {
                cols[k].push(v);
            }
        }
    }
    Triple::from_array(cols.map(|c| fisher_or_none(&c)))
}

fn finish(name: &str, kind: ReportKind, tasks: BTreeMap<TaskKind, TaskCorrelation>) -> CorrelationReport {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for t in tasks.values() {
        for (k, v) in t.task_level.to_array().into_iter().enumerate() {
            if let Some(v) = v {
                cols[k].push(v);
            }
        }
    }
    CorrelationReport {
        name: name.to_string(),
        kind,
        meta: BTreeMap::new(),
        tasks,
        all_task_level: Triple::from_array(cols.map(|c| fisher_or_none(&c))),
    }
}

fn group<T>(rows: &[T], key: impl Fn(&T) -> (TaskKind, &str)) -> BTreeMap<TaskKind, BTreeMap<String, Vec<&T>>> {
    let mut out: BTreeMap<TaskKind, BTreeMap<String, Vec<&T>>> = BTreeMap::new();
    for r in rows {
        let (task, model) = key(r);
        out.entry(task).or_default().entry(model.to_string()).or_default().push(r);
    }
    out
}

/// Spearman between metric and rater-mean human values, per model and aspect.
pub fn mh_pipeline(rows: &[PairedRow], name: &str, kind: ReportKind) -> CorrelationReport {
    let mut tasks = BTreeMap::new();
    for (task, models) in group(rows, |r| (r.task, r.model_name.as_str())) {
        let mut per_model = BTreeMap::new();
        for (model, mut rs) in models {
            rs.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
            let mut notes = Vec::new();
            let mut corr = [None; 3];
            for (k, slot) in corr.iter_mut().enumerate() {
                let x: Vec<f64> = rs.iter().map(|r| r.metric[k]).collect();
                let y: Vec<f64> = rs.iter().map(|r| r.human[k]).collect();
                match cell(&x, &y) {
                    Ok(v) => *slot = Some(v),
                    Err(e) => notes.push(format!("{}: {e}", ASPECT_NAMES[k])),
                }
            }
            per_model.insert(
                model,
                ModelCorrelation {
                    n_instances: rs.len(),
                    corr: Triple::from_array(corr),
                    notes,
                },
            );
        }
        let task_level = levels(per_model.values());
        tasks.insert(
            task,
            TaskCorrelation {
                per_model,
                task_level,
                agreement: None,
            },
        );
    }
    finish(name, kind, tasks)
}

/// Leave-one-out human agreement: each rater against the mean of the other
/// two, Fisher-z averaged over the three raters. For Overall, a rater's value
/// is the geometric mean of their own SC and PQ picks, and the comparison
/// value is the geometric mean of the other two raters' SC and PQ means.
pub fn hh_pipeline(rows: &[HumanRow], name: &str) -> CorrelationReport {
    let mut tasks = BTreeMap::new();
    for (task, models) in group(rows, |r| (r.task, r.model_name.as_str())) {
        let mut per_model = BTreeMap::new();
        let mut all_rows = Vec::new();
        for (model, mut rs) in models {
            rs.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
            all_rows.extend(rs.iter().copied());
            let mut notes = Vec::new();
            let mut corr = [None; 3];
            for (k, slot) in corr.iter_mut().enumerate() {
                let mut per_rater = Vec::new();
                for rater in 0..3 {
                    let own: Vec<f64> = rs.iter().map(|r| r.human.rater(rater)[k]).collect();
                    let rest: Vec<f64> = rs.iter().map(|r| others_mean(&r.human, rater)[k]).collect();
                    match spearman(&own, &rest) {
                        Ok(v) => per_rater.push(v),
                        Err(e) => notes.push(format!("{} rater {}: {e}", ASPECT_NAMES[k], rater + 1)),
                    }
                }
                *slot = fisher_or_none(&per_rater);
            }
            per_model.insert(
                model,
                ModelCorrelation {
                    n_instances: rs.len(),
                    corr: Triple::from_array(corr),
                    notes,
                },
            );
        }
        let agreement = Triple::from_array(std::array::from_fn(|k| {
            let matrix: Vec<Vec<Option<f64>>> = (0..3)
                .map(|rater| all_rows.iter().map(|r| Some(r.human.rater(rater)[k])).collect())
                .collect();
            krippendorff_alpha(&matrix, Level::Interval).ok()
        }));
        let task_level = levels(per_model.values());
        tasks.insert(
            task,
            TaskCorrelation {
                per_model,
                task_level,
                agreement: Some(agreement),
            },
        );
    }
    finish(name, ReportKind::HumanHuman, tasks)
}

/// (SC, PQ, Overall) of the two raters other than `rater`.
pub fn others_mean(h: &HumanRating, rater: usize) -> [f64; 3] {
    let others: Vec<usize> = (0..3).filter(|k| *k != rater).collect();
    let sc = others.iter().map(|&k| h.sc[k].value()).sum::<f64>() / 2.0;
    let pq = others.iter().map(|&k| h.pq[k].value()).sum::<f64>() / 2.0;
    [sc, pq, (sc * pq).sqrt()]
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

impl CorrelationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table, columns SC, PQ, Overall.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} ({})", self.name, kind_label(self.kind));
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let task_w = self
            .tasks
            .keys()
            .map(|t| t.as_str().len())
            .chain([11])
            .max()
            .unwrap_or(11);
        let model_w = self
            .tasks
            .values()
            .flat_map(|t| t.per_model.keys().map(String::len))
            .chain([14])
            .max()
            .unwrap_or(14);
        let row = |out: &mut String, task: &str, model: &str, n: &str, t: &Triple| {
            let [a, b, c] = t.to_array().map(fmt_cell);
            let _ = writeln!(out, "{task:<task_w$}  {model:<model_w$}  {n:>5}  {a:>9}  {b:>9}  {c:>9}");
        };
        let _ = writeln!(
            out,
            "{:<task_w$}  {:<model_w$}  {:>5}  {:>9}  {:>9}  {:>9}",
            "task", "model", "n", "SC", "PQ", "Overall"
        );
        for (task, tc) in &self.tasks {
            for (model, mc) in &tc.per_model {
                row(&mut out, task.as_str(), model, &mc.n_instances.to_string(), &mc.corr);
            }
            row(&mut out, task.as_str(), "[task level]", "", &tc.task_level);
            if let Some(agreement) = &tc.agreement {
                row(&mut out, task.as_str(), "[kripp. alpha]", "", agreement);
            }
        }
        row(&mut out, "[all tasks]", "", "", &self.all_task_level);
        out
    }
}

fn kind_label(kind: ReportKind) -> &'static str {
    match kind {
        ReportKind::MetricHuman => "metric vs human",
        ReportKind::HumanHuman => "human vs human",
        ReportKind::BaselineHuman => "baseline metric vs human",
    }
}
