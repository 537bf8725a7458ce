use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::correlate::join_scores;
use super::{load_manifests, sanitize, write_file, RunError, ScoreTable, REPORTS_DIR};
use crate::stats::{footrule, rank_by_mean, ranking_rho, RankingComparison};
use crate::task::TaskKind;

#[derive(Debug, Clone)]
pub struct RankConfig {
    pub scores: PathBuf,
    pub manifests: Vec<PathBuf>,
    /// Human leaderboard; per-model mean human Overall from the manifests when absent.
    pub leaderboard: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRanking {
    #[serde(flatten)]
    pub comparison: RankingComparison,
    pub human_means: BTreeMap<String, f64>,
    pub method_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub name: String,
    pub meta: BTreeMap<String, String>,
    pub human_source: String,
    pub tasks: Vec<TaskRanking>,
}

type Scores = BTreeMap<TaskKind, BTreeMap<String, Vec<f64>>>;

/// Comma-separated `task,model_name,score` with a header row; `#` lines are comments.
pub fn load_leaderboard(path: &Path) -> Result<BTreeMap<TaskKind, BTreeMap<String, f64>>, RunError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let bad = |msg: String| RunError::Config(format!("{shown}: {msg}"));
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (ct, cm, cs) = (col("task")?, col("model_name")?, col("score")?);
    let mut out: BTreeMap<TaskKind, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let task: TaskKind = field(ct).parse().map_err(|_| bad(format!("unknown task `{}`", field(ct))))?;
        let score: f64 = field(cs)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("score `{}` is not a number", field(cs))))?;
        if out.entry(task).or_default().insert(field(cm).to_string(), score).is_some() {
            return Err(bad(format!("{task} {} listed twice", field(cm))));
        }
    }
    Ok(out)
}

fn means(scores: &BTreeMap<String, Vec<f64>>) -> BTreeMap<String, f64> {
    scores
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(m, v)| (m.clone(), v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

fn compare(task: TaskKind, human: &BTreeMap<String, Vec<f64>>, method: &BTreeMap<String, Vec<f64>>) -> Result<TaskRanking, RunError> {
    let human_means = means(human);
    let method_means = means(method);
    if human_means.len() < 2 {
        return Err(RunError::TooFewModels {
            task,
            found: human_means.len(),
        });
    }
    let hs: BTreeSet<&String> = human_means.keys().collect();
    let ms: BTreeSet<&String> = method_means.keys().collect();
    if hs != ms {
        let only_h: Vec<&str> = hs.difference(&ms).map(|s| s.as_str()).collect();
        let only_m: Vec<&str> = ms.difference(&hs).map(|s| s.as_str()).collect();
        return Err(RunError::Config(format!(
            "task {task}: rankings cover different models (human only: [{}]; method only: [{}])",
            only_h.join(", "),
            only_m.join(", ")
        )));
    }
    let (human_ranking, human_ties) = rank_by_mean(human);
    let (method_ranking, method_ties) = rank_by_mean(method);
    let d = footrule(&human_ranking, &method_ranking).expect("same model set checked above");
    let rho = ranking_rho(&human_ranking, &method_ranking).expect("same model set checked above");
    Ok(TaskRanking {
        comparison: RankingComparison {
            task,
            human_ranking,
            method_ranking,
            footrule: d,
            rho,
            human_ties,
            method_ties,
        },
        human_means,
        method_means,
    })
}

impl RankingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# ranking comparison: {} vs {}", self.name, self.human_source);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let w = self
            .tasks
            .iter()
            .map(|t| t.comparison.task.as_str().len())
            .chain([4])
            .max()
            .unwrap_or(4);
        let _ = writeln!(out, "{:<w$}  {:>4}  {:>7}  human ranking | method ranking", "task", "d_SF", "rho");
        for t in &self.tasks {
            let c = &t.comparison;
            let _ = writeln!(
                out,
                "{:<w$}  {:>4}  {:>7.4}  {} | {}",
                c.task.as_str(),
                c.footrule,
                c.rho,
                c.human_ranking.join(" > "),
                c.method_ranking.join(" > ")
            );
            for (side, ties) in [("human", &c.human_ties), ("method", &c.method_ties)] {
                if !ties.is_empty() {
                    let _ = writeln!(out, "{:<w$}  tie on {side} side, ordered by name: {}", "", ties.join(", "));
                }
            }
        }
        out
    }
}

/// Ranks image-synthesis models by mean normalized Overall on both sides and
/// writes footrule and rho per task to `reports/ranking_<model>.*`.
pub fn cmd_rank(cfg: &RankConfig) -> Result<RankingReport, RunError> {
    let manifests = load_manifests(&cfg.manifests)?;
    let table = ScoreTable::load(&cfg.scores)?;
    let shown = cfg
        .scores
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rows = join_scores(&table, &manifests, &shown)?;

    let mut method: Scores = BTreeMap::new();
    for r in &rows {
        method.entry(r.task).or_default().entry(r.model_name.clone()).or_default().push(r.metric[2]);
    }
    let (human, human_source): (Scores, String) = match &cfg.leaderboard {
        Some(path) => {
            let board = load_leaderboard(path)?;
            let scores = board
                .into_iter()
                .map(|(t, m)| (t, m.into_iter().map(|(k, v)| (k, vec![v])).collect()))
                .collect();
            let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (scores, format!("leaderboard {label}"))
        }
        None => {
            let mut scores: Scores = BTreeMap::new();
            for r in manifests.iter().flat_map(|m| &m.records) {
                scores.entry(r.task).or_default().entry(r.model_name.clone()).or_default().push(r.human.overall());
            }
            (scores, "manifest human ratings".to_string())
        }
    };

    let tasks: BTreeSet<TaskKind> = manifests.iter().map(|m| m.task).collect();
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    for task in tasks {
        out.push(compare(
            task,
            human.get(&task).unwrap_or(&empty),
            method.get(&task).unwrap_or(&empty),
        )?);
    }
    let name = table.meta.get("model").cloned().unwrap_or(shown);
    let report = RankingReport {
        name: name.clone(),
        meta: table.meta.clone(),
        human_source,
        tasks: out,
    };
    let dir = cfg.output_dir.join(REPORTS_DIR);
    let stem = format!("ranking_{}", sanitize(&name));
    write_file(&dir.join(format!("{stem}.json")), &report.to_json())?;
    write_file(&dir.join(format!("{stem}.txt")), &report.to_table())?;
    Ok(report)
}
