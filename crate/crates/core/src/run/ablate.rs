use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    build_dispatcher, dispatch, load_manifests, run_meta, sorted_records, write_file, AspectOutcome, RequestBuilder,
    RunConfig, RunError, REPORTS_DIR, SCORES_DIR,
};
use crate::parser::ParseStatus;
use crate::stats::{mh_pipeline, CorrelationReport, PairedRow, ReportKind};
use crate::task::{AspectKind, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationPair {
    pub without_inputs: Option<f64>,
    pub with_inputs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub n_instances: usize,
    #[serde(flatten)]
    pub pq: AblationPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTask {
    pub per_model: BTreeMap<String, AblationCell>,
    pub task_level: AblationPair,
}

/// PQ correlation with human ratings, without and with the condition images
/// in the PQ request. Only instances scored in both arms take part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqAblationReport {
    pub name: String,
    pub meta: BTreeMap<String, String>,
    pub tasks: BTreeMap<TaskKind, AblationTask>,
    pub all_task_level: AblationPair,
}

fn pair(a: Option<f64>, b: Option<f64>) -> AblationPair {
    AblationPair {
        without_inputs: a,
        with_inputs: b,
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

impl PqAblationReport {
    fn from_reports(name: &str, without: &CorrelationReport, with: &CorrelationReport) -> Self {
        let tasks = without
            .tasks
            .iter()
            .map(|(task, tw)| {
                let ti = &with.tasks[task];
                let per_model = tw
                    .per_model
                    .iter()
                    .map(|(m, cw)| {
                        let ci = &ti.per_model[m];
                        (
                            m.clone(),
                            AblationCell {
                                n_instances: cw.n_instances,
                                pq: pair(cw.corr.pq, ci.corr.pq),
                            },
                        )
                    })
                    .collect();
                (
                    *task,
                    AblationTask {
                        per_model,
                        task_level: pair(tw.task_level.pq, ti.task_level.pq),
                    },
                )
            })
            .collect();
        Self {
            name: name.to_string(),
            meta: BTreeMap::new(),
            tasks,
            all_task_level: pair(without.all_task_level.pq, with.all_task_level.pq),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ablation report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# PQ input ablation: {}", self.name);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let tw = self.tasks.keys().map(|t| t.as_str().len()).chain([11]).max().unwrap_or(11);
        let mw = self
            .tasks
            .values()
            .flat_map(|t| t.per_model.keys().map(String::len))
            .chain([12])
            .max()
            .unwrap_or(12);
        let _ = writeln!(
            out,
            "{:<tw$}  {:<mw$}  {:>5}  {:>14}  {:>14}",
            "task", "model", "n", "without inputs", "with inputs"
        );
        let row = |out: &mut String, t: &str, m: &str, n: &str, p: &AblationPair| {
            let _ = writeln!(
                out,
                "{t:<tw$}  {m:<mw$}  {n:>5}  {:>14}  {:>14}",
                fmt_cell(p.without_inputs),
                fmt_cell(p.with_inputs)
            );
        };
        for (task, t) in &self.tasks {
            for (m, c) in &t.per_model {
                row(&mut out, task.as_str(), m, &c.n_instances.to_string(), &c.pq);
            }
            row(&mut out, task.as_str(), "[task level]", "", &t.task_level);
        }
        row(&mut out, "[all tasks]", "", "", &self.all_task_level);
        out
    }
}

/// Rates PQ twice per instance, once on the synthetic image alone and once
/// with the condition images prepended, and writes the paired correlations.
pub async fn cmd_ablate_pq(cfg: &RunConfig) -> Result<PqAblationReport, RunError> {
    let manifests = load_manifests(&cfg.manifests)?;
    let builder = RequestBuilder::from_config(cfg)?;
    let dispatcher = build_dispatcher(cfg)?;
    let mut meta = run_meta(cfg, &builder.templates)?;
    meta.remove("pq_with_inputs");

    let records = sorted_records(&manifests);
    let mut requests = Vec::with_capacity(records.len() * 2);
    for rec in &records {
        requests.push(builder.build(rec, AspectKind::Pq, false)?);
        requests.push(builder.build(rec, AspectKind::Pq, true)?);
    }
    let replies = dispatch(&dispatcher, &requests).await?;

    let pq_value = |o: &AspectOutcome| match o {
        AspectOutcome::Rated(p) if p.status != ParseStatus::Dropped => {
            p.sub_scores.iter().copied().reduce(f64::min).map(|v| v / 10.0)
        }
        _ => None,
    };
    let mut tsv = String::new();
    for (k, v) in &meta {
        let _ = writeln!(tsv, "# {k}: {v}");
    }
    tsv.push_str("instance_id\ttask\tmodel_name\tpq_without_inputs\tpq_with_inputs\tdetail_without\tdetail_with\n");
    let (mut rows_without, mut rows_with) = (Vec::new(), Vec::new());
    for (i, rec) in records.iter().enumerate() {
        let arity = requests[2 * i].expected_arity;
        let a = AspectOutcome::from_reply(&replies[2 * i], arity, cfg.seed);
        let b = AspectOutcome::from_reply(&replies[2 * i + 1], arity, cfg.seed);
        let (va, vb) = (pq_value(&a), pq_value(&b));
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            rec.instance_id,
            rec.task,
            rec.model_name,
            cell(va),
            cell(vb),
            a.detail(),
            b.detail()
        );
        if let (Some(va), Some(vb)) = (va, vb) {
            let human = [rec.human.sc_avg(), rec.human.pq_avg(), rec.human.overall()];
            let paired = |v: f64| PairedRow {
                task: rec.task,
                model_name: rec.model_name.clone(),
                instance_id: rec.instance_id.clone(),
                metric: [v; 3],
                human,
            };
            rows_without.push(paired(va));
            rows_with.push(paired(vb));
        }
    }

    let name = cfg.backend.model_name.clone();
    let without = mh_pipeline(&rows_without, &name, ReportKind::MetricHuman);
    let with = mh_pipeline(&rows_with, &name, ReportKind::MetricHuman);
    let mut report = PqAblationReport::from_reports(&name, &without, &with);
    report.meta = meta;

    write_file(&cfg.output_dir.join(SCORES_DIR).join("pq_ablation.tsv"), &tsv)?;
    let dir = cfg.output_dir.join(REPORTS_DIR);
    write_file(&dir.join("pq_ablation.json"), &report.to_json())?;
    write_file(&dir.join("pq_ablation.txt"), &report.to_table())?;
    Ok(report)
}
