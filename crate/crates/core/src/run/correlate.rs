use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{load_manifests, merge_meta, sanitize, sha256_file, write_file, RowStatus, RunError, ScoreTable, REPORTS_DIR};
use crate::dataset::{attach_baselines, load_baseline, Manifest};
use crate::stats::{hh_pipeline, mh_pipeline, CorrelationReport, HumanRow, PairedRow, ReportKind};

#[derive(Debug, Clone)]
pub struct CorrelateConfig {
    pub scores: Vec<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub baselines: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

/// A score table and the manifests disagree on which instances exist.
/// Ids are written `task/instance_id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinError {
    pub table: String,
    pub missing_from_scores: Vec<String>,
    pub unknown_in_scores: Vec<String>,
    pub model_mismatch: Vec<String>,
}

impl fmt::Display for JoinError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "score table {} does not join onto the manifests", self.table)?;
        for (label, ids) in [
            ("in manifests but not in scores", &self.missing_from_scores),
            ("in scores but not in manifests", &self.unknown_in_scores),
            ("model name differs", &self.model_mismatch),
        ] {
            if !ids.is_empty() {
                write!(f, "\n  {label}: {}", ids.join(", "))?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for JoinError {}

#[derive(Debug, Clone)]
pub struct CorrelateOutcome {
    pub metric_reports: Vec<CorrelationReport>,
    pub human_report: CorrelationReport,
    pub baseline_reports: Vec<CorrelationReport>,
    pub written: Vec<PathBuf>,
}

fn human_triple(m: &Manifest, id: &str) -> Option<[f64; 3]> {
    m.get(id).map(|r| [r.human.sc_avg(), r.human.pq_avg(), r.human.overall()])
}

/// Pairs every scored row with its manifest record. Every manifest record
/// must have a row (scored or not) and every row a record.
pub fn join_scores(table: &ScoreTable, manifests: &[Manifest], shown: &str) -> Result<Vec<PairedRow>, JoinError> {
    let mut err = JoinError {
        table: shown.to_string(),
        ..JoinError::default()
    };
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for r in &table.rows {
        let key = format!("{}/{}", r.task, r.instance_id);
        let record = manifests
            .iter()
            .filter(|m| m.task == r.task)
            .find_map(|m| m.get(&r.instance_id).map(|rec| (m, rec)));
        let Some((m, rec)) = record else {
            err.unknown_in_scores.push(key);
            continue;
        };
        seen.insert((r.task, r.instance_id.as_str()));
        if rec.model_name != r.model_name {
            err.model_mismatch.push(key);
            continue;
        }
        if let (RowStatus::Scored, Some(metric)) = (r.status, r.scores) {
            rows.push(PairedRow {
                task: r.task,
                model_name: r.model_name.clone(),
                instance_id: r.instance_id.clone(),
                metric,
                human: human_triple(m, &r.instance_id).expect("record found above"),
            });
        }
    }
    for m in manifests {
        for rec in &m.records {
            if !seen.contains(&(rec.task, rec.instance_id.as_str())) {
                err.missing_from_scores.push(format!("{}/{}", rec.task, rec.instance_id));
            }
        }
    }
    if err.missing_from_scores.is_empty() && err.unknown_in_scores.is_empty() && err.model_mismatch.is_empty() {
        Ok(rows)
    } else {
        Err(err)
    }
}

pub fn human_rows(manifests: &[Manifest]) -> Vec<HumanRow> {
    manifests
        .iter()
        .flat_map(|m| &m.records)
        .map(|r| HumanRow {
            task: r.task,
            model_name: r.model_name.clone(),
            instance_id: r.instance_id.clone(),
            human: r.human,
        })
        .collect()
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// One line per report with its all-task levels.
pub fn summary_table(reports: &[&CorrelationReport], meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# all-task correlation summary");
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let w = reports.iter().map(|r| r.name.len()).chain([4]).max().unwrap_or(4);
    let _ = writeln!(out, "{:<w$}  {:<14}  {:>9}  {:>9}  {:>9}", "name", "kind", "SC", "PQ", "Overall");
    for r in reports {
        let kind = match r.kind {
            ReportKind::MetricHuman => "metric-human",
            ReportKind::HumanHuman => "human-human",
            ReportKind::BaselineHuman => "baseline-human",
        };
        let [a, b, c] = r.all_task_level.to_array().map(fmt_cell);
        let _ = writeln!(out, "{:<w$}  {kind:<14}  {a:>9}  {b:>9}  {c:>9}", r.name);
    }
    out
}

fn write_report(dir: &Path, stem: &str, report: &CorrelationReport, written: &mut Vec<PathBuf>) -> Result<(), RunError> {
    for (ext, body) in [("json", report.to_json()), ("txt", report.to_table())] {
        let path = dir.join(format!("{stem}.{ext}"));
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(())
}

fn unique_stem(stem: String, used: &mut BTreeSet<String>) -> String {
    let mut candidate = stem.clone();
    let mut k = 2;
    while !used.insert(candidate.clone()) {
        candidate = format!("{stem}_{k}");
        k += 1;
    }
    candidate
}

/// Writes one M-H report per score table, the H-H report, one report per
/// baseline metric, and a summary of all-task levels under `reports/`.
pub fn cmd_correlate(cfg: &CorrelateConfig) -> Result<CorrelateOutcome, RunError> {
    let manifests = load_manifests(&cfg.manifests)?;
    let tables = cfg
        .scores
        .iter()
        .map(|p| ScoreTable::load(p).map(|t| (p, t)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut common = merge_meta(tables.iter().map(|(_, t)| &t.meta));
    for path in &cfg.manifests {
        let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        common.insert(format!("manifest.{label}"), sha256_file(path)?);
    }

    let dir = cfg.output_dir.join(REPORTS_DIR);
    let mut written = Vec::new();
    let mut used = BTreeSet::new();

    let mut metric_reports = Vec::new();
    for (path, table) in &tables {
        let shown = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let rows = join_scores(table, &manifests, &shown)?;
        let name = table.meta.get("model").cloned().unwrap_or_else(|| shown.clone());
        let mut report = mh_pipeline(&rows, &name, ReportKind::MetricHuman);
        report.meta = table.meta.clone();
        let stem = unique_stem(format!("mh_{}", sanitize(&name)), &mut used);
        write_report(&dir, &stem, &report, &mut written)?;
        metric_reports.push(report);
    }

    let mut human_report = hh_pipeline(&human_rows(&manifests), "human");
    human_report.meta = common.clone();
    write_report(&dir, "hh", &human_report, &mut written)?;

    let mut baseline_reports = Vec::new();
    if !cfg.baselines.is_empty() {
        let files = cfg.baselines.iter().map(|p| load_baseline(p)).collect::<Result<Vec<_>, _>>()?;
        let joined = attach_baselines(&manifests, &files)?;
        for (k, metric) in joined.metrics.iter().enumerate() {
            let rows: Vec<PairedRow> = joined
                .rows
                .iter()
                .filter_map(|r| {
                    let v = r.values[k]?;
                    Some(PairedRow {
                        task: r.task,
                        model_name: r.model_name.clone(),
                        instance_id: r.instance_id.clone(),
                        metric: [v; 3],
                        human: [r.human.sc_avg(), r.human.pq_avg(), r.human.overall()],
                    })
                })
                .collect();
            let mut report = mh_pipeline(&rows, &metric.to_string(), ReportKind::BaselineHuman);
            report.meta = common.clone();
            let inverted = files.iter().any(|f| f.metric == *metric && f.inverted);
            report.meta.insert("baseline.inverted".to_string(), inverted.to_string());
            let stem = unique_stem(format!("baseline_{}", sanitize(&metric.to_string())), &mut used);
            write_report(&dir, &stem, &report, &mut written)?;
            baseline_reports.push(report);
        }
    }

    let all: Vec<&CorrelationReport> = metric_reports
        .iter()
        .chain([&human_report])
        .chain(&baseline_reports)
        .collect();
    let summary_path = dir.join("summary.txt");
    write_file(&summary_path, &summary_table(&all, &common))?;
    written.push(summary_path);

    Ok(CorrelateOutcome {
        metric_reports,
        human_report,
        baseline_reports,
        written,
    })
}
