//! Comparing two rankings of the same set of models.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{spearman, StatsError};
use crate::task::TaskKind;

fn positions<'a, S: AsRef<str>>(r: &'a [S], r_star: &[S]) -> Result<HashMap<&'a str, usize>, StatsError> {
    let pos: HashMap<&str, usize> = r.iter().enumerate().map(|(i, m)| (m.as_ref(), i + 1)).collect();
    if pos.len() != r.len() || r.len() != r_star.len() {
        return Err(StatsError::SetMismatch);
    }
    let mut seen = std::collections::HashSet::new();
    for m in r_star {
        if !pos.contains_key(m.as_ref()) || !seen.insert(m.as_ref()) {
            return Err(StatsError::SetMismatch);
        }
    }
    Ok(pos)
}

/// Spearman's footrule: total absolute displacement of each model.
pub fn footrule<S: AsRef<str>>(r: &[S], r_star: &[S]) -> Result<u64, StatsError> {
    let pos = positions(r, r_star)?;
    Ok(r_star
        .iter()
        .enumerate()
        .map(|(i, m)| (pos[m.as_ref()] as i64 - (i as i64 + 1)).unsigned_abs())
        .sum())
}

/// Spearman's rho between the two rank vectors.
pub fn ranking_rho<S: AsRef<str>>(r: &[S], r_star: &[S]) -> Result<f64, StatsError> {
    let pos = positions(r, r_star)?;
    let mut a = Vec::with_capacity(r.len());
    let mut b = Vec::with_capacity(r.len());
    for (i, m) in r_star.iter().enumerate() {
        a.push(pos[m.as_ref()] as f64);
        b.push((i + 1) as f64);
    }
    spearman(&a, &b)
}

/// Orders models by mean score, best first. Equal means fall back to model
/// name order; the second element lists every model involved in such a tie.
pub fn rank_by_mean(scores: &BTreeMap<String, Vec<f64>>) -> (Vec<String>, Vec<String>) {
    let mut means: Vec<(String, f64)> = scores
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(m, v)| (m.clone(), v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tied = Vec::new();
    for w in means.windows(2) {
        if w[0].1 == w[1].1 {
            for m in [&w[0].0, &w[1].0] {
                if !tied.contains(m) {
                    tied.push(m.clone());
                }
            }
        }
    }
    (means.into_iter().map(|(m, _)| m).collect(), tied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingComparison {
    pub task: TaskKind,
    pub human_ranking: Vec<String>,
    pub method_ranking: Vec<String>,
    pub footrule: u64,
    pub rho: f64,
    /// Models whose mean tied with another and were ordered by name.
    pub human_ties: Vec<String>,
    pub method_ties: Vec<String>,
}
