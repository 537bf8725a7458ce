//! Deterministic stand-in for a multimodal model.
//!
//! Each instance has latent SC and PQ sub-scores on 0..=10. A reply reports
//! the latent values plus Gaussian noise, clamped to [0, 10] and rounded.
//! The noise for a (seed, instance, aspect) triple is fixed, so repeated
//! calls give identical replies. Images beyond the aspect's normal count can
//! add a second, independent noise term, which makes the mock sensitive to
//! extra visual inputs.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CallError};
use crate::prompt::EvalRequest;
use crate::task::AspectKind;

pub const MOCK_RATIONALE: &str = "Synthetic rating derived from latent quality values.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MockError {
    #[error("no latent entry for instance {0}")]
    UnknownInstance(String),
    #[error("instance {instance_id}: latent {aspect} has {found} values, request expects {expected}")]
    Arity {
        instance_id: String,
        aspect: AspectKind,
        expected: usize,
        found: usize,
    },
    #[error("latent table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// Latent quality for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEntry {
    pub instance_id: String,
    pub sc: Vec<f64>,
    pub pq: Vec<f64>,
    /// Returned verbatim instead of a rating (refusals, malformed output).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_override: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentTable {
    entries: BTreeMap<String, LatentEntry>,
}

impl LatentTable {
    pub fn new(entries: impl IntoIterator<Item = LatentEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.instance_id.clone(), e)).collect(),
        }
    }

    /// One JSON object per line; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let file = std::fs::File::open(path).map_err(|e| MockError::Table {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| MockError::Table {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LatentEntry = serde_json::from_str(&line).map_err(|e| MockError::Table {
                line: i + 1,
                message: e.to_string(),
            })?;
            if entry.sc.iter().chain(&entry.pq).any(|v| !(0.0..=10.0).contains(v)) {
                return Err(MockError::Table {
                    line: i + 1,
                    message: "latent values must lie in [0, 10]".into(),
                });
            }
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn write_jsonl(&self) -> String {
        self.entries
            .values()
            .map(|e| serde_json::to_string(e).expect("latent entries serialize") + "\n")
            .collect()
    }

    pub fn get(&self, instance_id: &str) -> Option<&LatentEntry> {
        self.entries.get(instance_id)
    }

    pub fn insert(&mut self, entry: LatentEntry) {
        self.entries.insert(entry.instance_id.clone(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    /// Standard deviation of the per-sub-score noise, in score points.
    pub noise_level: f64,
    /// Extra standard deviation per image beyond the aspect's normal count.
    pub extra_image_noise: f64,
    pub seed: u64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            noise_level: 0.0,
            extra_image_noise: 0.0,
            seed: 0,
        }
    }
}

fn stream(seed: u64, label: &str, instance_id: &str, aspect: AspectKind) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"synthetic-mock\0");
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    h.update((instance_id.len() as u64).to_le_bytes());
    h.update(instance_id.as_bytes());
    h.update(aspect.as_str().as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Images a zero-shot request for this aspect normally carries.
fn baseline_images(request: &EvalRequest) -> usize {
    match request.aspect {
        AspectKind::Sc => request.task.condition_image_count() + 1,
        AspectKind::Pq => 1,
    }
}

/// The reply the mock gives for `request`.
pub fn synthetic_mock_reply(request: &EvalRequest, table: &LatentTable, settings: &MockSettings) -> Result<String, MockError> {
    let entry = table
        .get(&request.instance_id)
        .ok_or_else(|| MockError::UnknownInstance(request.instance_id.clone()))?;
    if let Some(text) = &entry.reply_override {
        return Ok(text.clone());
    }
    let latent = match request.aspect {
        AspectKind::Sc => &entry.sc,
        AspectKind::Pq => &entry.pq,
    };
    if latent.len() != request.expected_arity {
        return Err(MockError::Arity {
            instance_id: request.instance_id.clone(),
            aspect: request.aspect,
            expected: request.expected_arity,
            found: latent.len(),
        });
    }
    let extra = request.images.len().saturating_sub(baseline_images(request)) as f64;
    let mut base = stream(settings.seed, "base", &request.instance_id, request.aspect);
    let mut more = stream(settings.seed, "extra-images", &request.instance_id, request.aspect);
    let scores: Vec<String> = latent
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut base);
            let w: f64 = StandardNormal.sample(&mut more);
            let noisy = v + settings.noise_level * z + settings.extra_image_noise * extra * w;
            format!("{}", noisy.clamp(0.0, 10.0).round() as i64)
        })
        .collect();
    Ok(format!(
        "{{\"score\": [{}], \"reasoning\": \"{MOCK_RATIONALE}\"}}",
        scores.join(", ")
    ))
}

#[derive(Debug, Clone)]
pub struct SyntheticMock {
    pub table: LatentTable,
    pub settings: MockSettings,
}

impl SyntheticMock {
    pub fn new(table: LatentTable, settings: MockSettings) -> Self {
        Self { table, settings }
    }
}

#[async_trait]
impl Backend for SyntheticMock {
    async fn complete(&self, request: &EvalRequest) -> Result<String, CallError> {
        synthetic_mock_reply(request, &self.table, &self.settings).map_err(|e| CallError::Fatal(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::record_for;
    use crate::parser::parse_scores;
    use crate::prompt::{ShotMode, TemplateSet};
    use crate::task::TaskKind;

    fn entry(id: &str, sc: &[f64], pq: &[f64]) -> LatentEntry {
        LatentEntry {
            instance_id: id.into(),
            sc: sc.to_vec(),
            pq: pq.to_vec(),
            reply_override: None,
        }
    }

    #[test]
    fn zero_noise_passes_latents_through() {
        let rec = record_for(TaskKind::TextGuidedEditing, "u1");
        let req = TemplateSet::builtin()
            .assemble_request(&rec, AspectKind::Sc, ShotMode::ZeroShot, None)
            .unwrap();
        let table = LatentTable::new([entry("u1", &[7.0, 5.0], &[9.0, 9.0])]);
        let text = synthetic_mock_reply(&req, &table, &MockSettings::default()).unwrap();
        assert_eq!(parse_scores(&text, 2).unwrap(), (vec![7.0, 5.0], MOCK_RATIONALE.to_string()));
    }

    #[test]
    fn seeded_noise_is_repeatable() {
        let rec = record_for(TaskKind::TextGuidedEditing, "u1");
        let req = TemplateSet::builtin()
            .assemble_request(&rec, AspectKind::Pq, ShotMode::ZeroShot, None)
            .unwrap();
        let table = LatentTable::new([entry("u1", &[7.0, 5.0], &[4.0, 6.0])]);
        let s = MockSettings {
            noise_level: 2.0,
            extra_image_noise: 0.0,
            seed: 11,
        };
        let a = synthetic_mock_reply(&req, &table, &s).unwrap();
        assert_eq!(a, synthetic_mock_reply(&req, &table, &s).unwrap());
        let (scores, _) = parse_scores(&a, 2).unwrap();
        assert!(scores.iter().all(|v| v.fract() == 0.0 && (0.0..=10.0).contains(v)));
    }

    #[test]
    fn extra_images_only_matter_when_configured() {
        let set = TemplateSet::builtin();
        let rec = record_for(TaskKind::TextGuidedEditing, "u1");
        let plain = set.assemble_request(&rec, AspectKind::Pq, ShotMode::ZeroShot, None).unwrap();
        let with = set.pq_with_inputs_request(&rec, ShotMode::ZeroShot, None).unwrap();
        let table = LatentTable::new([entry("u1", &[7.0, 5.0], &[5.0, 5.0])]);
        let insensitive = MockSettings {
            noise_level: 1.0,
            extra_image_noise: 0.0,
            seed: 3,
        };
        assert_eq!(
            synthetic_mock_reply(&plain, &table, &insensitive).unwrap(),
            synthetic_mock_reply(&with, &table, &insensitive).unwrap()
        );
        let sensitive = MockSettings {
            extra_image_noise: 30.0,
            ..insensitive
        };
        assert_ne!(
            synthetic_mock_reply(&plain, &table, &sensitive).unwrap(),
            synthetic_mock_reply(&with, &table, &sensitive).unwrap()
        );
    }

    #[test]
    fn errors_and_overrides() {
        let rec = record_for(TaskKind::MultiConceptComposition, "m");
        let req = TemplateSet::builtin()
            .assemble_request(&rec, AspectKind::Sc, ShotMode::ZeroShot, None)
            .unwrap();
        let s = MockSettings::default();
        assert_eq!(
            synthetic_mock_reply(&req, &LatentTable::default(), &s),
            Err(MockError::UnknownInstance("m".into()))
        );
        let short = LatentTable::new([entry("m", &[1.0, 2.0], &[1.0, 1.0])]);
        assert!(matches!(synthetic_mock_reply(&req, &short, &s), Err(MockError::Arity { expected: 3, .. })));
        let mut refusing = entry("m", &[1.0, 2.0, 3.0], &[1.0, 1.0]);
        refusing.reply_override = Some("I am sorry, but I cannot help".into());
        let table = LatentTable::new([refusing]);
        assert_eq!(synthetic_mock_reply(&req, &table, &s).unwrap(), "I am sorry, but I cannot help");
    }

    #[test]
    fn table_file_round_trip() {
        let table = LatentTable::new([entry("a", &[1.0], &[2.0, 3.0]), entry("b", &[4.5, 5.0], &[6.0, 7.0])]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.jsonl");
        std::fs::write(&path, table.write_jsonl()).unwrap();
        assert_eq!(LatentTable::load(&path).unwrap(), table);
        std::fs::write(&path, "{\"instance_id\":\"x\",\"sc\":[11],\"pq\":[1,1]}\n").unwrap();
        assert!(matches!(LatentTable::load(&path), Err(MockError::Table { line: 1, .. })));
    }
}
