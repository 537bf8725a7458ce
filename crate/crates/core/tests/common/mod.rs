//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the library's statistics.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use synthjudge::backend::{detect_refusal_default, RawReply, ReplyStatus};
use synthjudge::parser::ParseStatus;
use synthjudge::AspectKind;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// Ranks by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let less = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson through pairwise differences, so no means are involved.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    if x.len() < 2 || sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Tau-b from concordant, discordant and tied pair counts.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            if a == 0 {
                tx += 1;
            }
            if b == 0 {
                ty += 1;
            }
            if a * b > 0 {
                c += 1;
            } else if a * b < 0 {
                d += 1;
            }
        }
    }
    let n0 = (n * n.saturating_sub(1) / 2) as i64;
    let denom = (((n0 - tx) * (n0 - ty)) as f64).sqrt();
    if n < 2 || denom == 0.0 {
        return None;
    }
    Some((c - d) as f64 / denom)
}

/// Interval alpha from its pairwise definition: disagreement within units
/// against disagreement over all pairable values. `ratings[rater][unit]`.
pub fn brute_kripp_interval(ratings: &[Vec<Option<f64>>]) -> Option<f64> {
    let units = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let mut pooled = Vec::new();
    let mut within = 0.0;
    for u in 0..units {
        let v: Vec<f64> = ratings.iter().filter_map(|r| r.get(u).copied().flatten()).collect();
        if v.len() < 2 {
            continue;
        }
        let mut s = 0.0;
        for a in &v {
            for b in &v {
                s += (a - b) * (a - b);
            }
        }
        within += s / (v.len() - 1) as f64;
        pooled.extend(v);
    }
    let n = pooled.len() as f64;
    let mut total = 0.0;
    for a in &pooled {
        for b in &pooled {
            total += (a - b) * (a - b);
        }
    }
    if n < 2.0 || total == 0.0 {
        return None;
    }
    let d_o = within / n;
    let d_e = total / (n * (n - 1.0));
    Some(1.0 - d_o / d_e)
}

pub fn textbook_fisher(r: &[f64]) -> f64 {
    let c = 1.0 - 1e-7;
    let z: f64 = r.iter().map(|v| v.clamp(-c, c).atanh()).sum::<f64>() / r.len() as f64;
    z.tanh()
}

/// Random vector of length n; with `ties`, values come from a small set.
pub fn random_vec<R: Rng>(rng: &mut R, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if ties {
                f64::from(rng.random_range(0..4u8)) * 0.5
            } else {
                rng.random::<f64>() * 10.0 - 5.0
            }
        })
        .collect()
}

/// Empirical quantile of a sorted sample, nearest rank.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[i]
}

struct Instance {
    task: String,
    model: String,
    /// Human sixths for SC and PQ.
    human: (u32, u32),
    sc: Vec<f64>,
    pq: Vec<f64>,
}

fn sixths(v: &serde_json::Value) -> u32 {
    v.as_array().unwrap().iter().map(|x| (x.as_f64().unwrap() * 2.0).round() as u32).sum()
}

fn read_instances(manifests: &[&Path], latents: &Path) -> Vec<Instance> {
    let mut lat = BTreeMap::new();
    for line in std::fs::read_to_string(latents).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let nums = |k: &str| -> Vec<f64> { v[k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect() };
        lat.insert(v["instance_id"].as_str().unwrap().to_string(), (nums("sc"), nums("pq")));
    }
    let mut out = Vec::new();
    for path in manifests {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        let task = header["task"].as_str().unwrap().to_string();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let id = v["instance_id"].as_str().unwrap();
            let (sc, pq) = lat[id].clone();
            out.push(Instance {
                task: task.clone(),
                model: v["model_name"].as_str().unwrap().to_string(),
                human: (sixths(&v["human"]["sc"]), sixths(&v["human"]["pq"])),
                sc,
                pq,
            });
        }
    }
    out
}

/// Task-level Spearman (SC, PQ, Overall) for every task, keyed by task name,
/// when each latent sub-score is reported as round(clamp(v + noise * z)).
fn simulate_once<R: Rng>(rng: &mut R, data: &[Instance], noise: f64) -> BTreeMap<String, [f64; 3]> {
    let report = |v: &[f64], rng: &mut R| -> f64 {
        v.iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(rng);
                (x + noise * z).clamp(0.0, 10.0).round()
            })
            .fold(f64::INFINITY, f64::min)
    };
    // (task, model) -> per-aspect (metric, human) columns
    let mut groups: BTreeMap<(String, String), [(Vec<f64>, Vec<f64>); 3]> = BTreeMap::new();
    for inst in data {
        let sc = report(&inst.sc, rng);
        let pq = report(&inst.pq, rng);
        let (hs, hp) = inst.human;
        let metric = [sc / 10.0, pq / 10.0, (sc * pq).sqrt() / 10.0];
        let human = [f64::from(hs) / 6.0, f64::from(hp) / 6.0, f64::from(hs * hp).sqrt() / 6.0];
        let g = groups.entry((inst.task.clone(), inst.model.clone())).or_default();
        for a in 0..3 {
            g[a].0.push(metric[a]);
            g[a].1.push(human[a]);
        }
    }
    let mut per_task: BTreeMap<String, [Vec<f64>; 3]> = BTreeMap::new();
    for ((task, _), cols) in &groups {
        let slot = per_task.entry(task.clone()).or_default();
        for a in 0..3 {
            if let Some(r) = brute_spearman(&cols[a].0, &cols[a].1) {
                slot[a].push(r);
            }
        }
    }
    per_task
        .into_iter()
        .map(|(t, rs)| (t, rs.map(|v| textbook_fisher(&v))))
        .collect()
}

/// 99% band (0.5% and 99.5% quantiles) of each task-level cell over `reps`
/// simulated noisy ratings.
pub fn monte_carlo_band(
    manifests: &[&Path],
    latents: &Path,
    noise: f64,
    reps: usize,
    seed: u64,
) -> BTreeMap<String, [(f64, f64); 3]> {
    let data = read_instances(manifests, latents);
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut draws: BTreeMap<String, [Vec<f64>; 3]> = BTreeMap::new();
    for _ in 0..reps {
        for (task, v) in simulate_once(&mut rng, &data, noise) {
            let slot = draws.entry(task).or_default();
            for a in 0..3 {
                slot[a].push(v[a]);
            }
        }
    }
    draws
        .into_iter()
        .map(|(t, mut cols)| {
            let band = std::array::from_fn(|a| {
                cols[a].sort_by(f64::total_cmp);
                (quantile(&cols[a], 0.005), quantile(&cols[a], 0.995))
            });
            (t, band)
        })
        .collect()
}

/// Synthetic set used for the calibrated-noise check.
pub const BAND_TASKS: [&str; 2] = ["tie", "sdig"];
pub const BAND_MODELS: [&str; 3] = ["model-a", "model-b", "model-c"];
pub const BAND_PER_MODEL: usize = 40;
pub const BAND_DATA_SEED: u64 = 8;
pub const BAND_NOISE: f64 = 2.0;
pub const BAND_REPS: usize = 1000;
pub const BAND_SIM_SEED: u64 = 20_240_601;

/// Output of `monte_carlo_band` for the set above, frozen so the acceptance
/// run does not depend on re-running the simulation. Order: SC, PQ, Overall.
pub const FROZEN_BAND: [(&str, [(f64, f64); 3]); 2] = [
    (
        "subject_driven_generation",
        [
            (0.7764577405088138, 0.9011124607304856),
            (0.7778143563861963, 0.897593898415875),
            (0.8639162212622722, 0.9334259986423994),
        ],
    ),
    (
        "text_guided_editing",
        [
            (0.7876989441227465, 0.9025488371469258),
            (0.7856794435863945, 0.9030206312654686),
            (0.8566426957055112, 0.9355810828431677),
        ],
    ),
];

pub fn band_spec() -> synthjudge::synth::SynthSpec {
    synthjudge::synth::SynthSpec {
        tasks: BAND_TASKS.iter().map(|t| t.parse().unwrap()).collect(),
        models: BAND_MODELS.iter().map(|m| m.to_string()).collect(),
        per_model: BAND_PER_MODEL,
        seed: BAND_DATA_SEED,
    }
}

/// One reply fixture with the outcome its manifest line declares.
pub struct Fixture {
    pub file: String,
    pub arity: usize,
    pub status: ParseStatus,
    pub scores: Vec<f64>,
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replies")
}

pub fn load_corpus() -> Vec<Fixture> {
    let manifest = std::fs::read_to_string(corpus_dir().join("manifest.tsv")).unwrap();
    manifest
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split('\t').collect();
            let status = match cells[2] {
                "parsed" => ParseStatus::Parsed,
                "penalty_filled" => ParseStatus::PenaltyFilled,
                "dropped" => ParseStatus::Dropped,
                other => panic!("unknown status {other}"),
            };
            let scores = cells
                .get(3)
                .filter(|s| !s.is_empty())
                .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
                .unwrap_or_default();
            Fixture {
                file: cells[0].to_string(),
                arity: cells[1].parse().unwrap(),
                status,
                scores,
            }
        })
        .collect()
}

pub fn corpus_reply(f: &Fixture) -> RawReply {
    let text = std::fs::read_to_string(corpus_dir().join(&f.file)).unwrap();
    let status = if detect_refusal_default(&text) {
        ReplyStatus::Refused
    } else {
        ReplyStatus::Ok
    };
    RawReply {
        instance_id: f.file.trim_end_matches(".txt").to_string(),
        aspect: AspectKind::Sc,
        text,
        status,
        request_fingerprint: String::new(),
        latency_ms: 0,
    }
}
