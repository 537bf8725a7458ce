//! Synthetic manifests and latent tables for exercising the pipeline without
//! real images, raters or a model endpoint.
//!
//! Every instance gets a quality level `k` in 0..=6. All three raters' SC
//! picks sum to `k` halves, and so do their PQ picks, so both rater means are
//! `k/6`. The latent minimum of each aspect is `round(10k/6)`, and the other
//! latent sub-scores sit at or above it. A noise-free synthetic backend
//! therefore orders instances exactly as the human ratings do.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{LatentEntry, LatentTable};
use crate::dataset::{write_manifest, ManifestHeader, RecordLine, FORMAT_VERSION};
use crate::media::ImageData;
use crate::prompt::Fills;
use crate::scoring::{HumanRating, RaterValue};
use crate::task::{expected_arity, AspectKind, TaskKind};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub tasks: Vec<TaskKind>,
    pub models: Vec<String>,
    /// Instances per (task, model); at least 2.
    pub per_model: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// One manifest per task, in `spec.tasks` order.
    pub manifests: Vec<PathBuf>,
    pub latents: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("{0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Media(#[from] crate::media::MediaError),
}

/// Sub-score a noise-free backend reports for level `k`.
pub fn level_score(k: u8) -> f64 {
    (10.0 * f64::from(k) / 6.0).round()
}

fn rater_triple(rng: &mut ChaCha8Rng, k: u8) -> [RaterValue; 3] {
    let mut options = Vec::new();
    for a in 0..=2u8 {
        for b in 0..=2u8 {
            if let Some(c) = k.checked_sub(a + b).filter(|c| *c <= 2) {
                options.push([a, b, c]);
            }
        }
    }
    let halves = *options.choose(rng).expect("every k in 0..=6 has a split");
    halves.map(|h| RaterValue::ALL[usize::from(h)])
}

fn latent(rng: &mut ChaCha8Rng, k: u8, arity: usize) -> Vec<f64> {
    let floor = level_score(k);
    let at = rng.random_range(0..arity);
    (0..arity)
        .map(|j| {
            if j == at {
                floor
            } else {
                floor + f64::from(rng.random_range(0..=(10 - floor as u8)))
            }
        })
        .collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    let io = |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

fn tile(rng: &mut ChaCha8Rng) -> Result<ImageData, SynthError> {
    let px = Rgb([rng.random(), rng.random(), rng.random()]);
    let mut img = RgbImage::from_pixel(8, 8, px);
    // one marker pixel so that equal colours still give distinct files
    img.put_pixel(rng.random_range(0..8), rng.random_range(0..8), Rgb([rng.random(), 0, 0]));
    Ok(ImageData::from_image(&DynamicImage::ImageRgb8(img))?)
}

/// Writes `<task>.jsonl` manifests, their images under `images/`, and
/// `latents.jsonl` into `dir`.
pub fn write_synthetic(spec: &SynthSpec, dir: &Path) -> Result<SynthOutput, SynthError> {
    if spec.per_model < 2 {
        return Err(SynthError::Spec("need at least 2 instances per model".into()));
    }
    if spec.models.is_empty() || spec.tasks.is_empty() {
        return Err(SynthError::Spec("need at least one task and one model".into()));
    }
    let distinct: BTreeSet<_> = spec.models.iter().collect();
    if distinct.len() != spec.models.len() || spec.models.iter().any(|m| m.is_empty() || m.contains(char::is_whitespace)) {
        return Err(SynthError::Spec("model names must be distinct, non-empty and free of whitespace".into()));
    }
    let tasks: BTreeSet<_> = spec.tasks.iter().collect();
    if tasks.len() != spec.tasks.len() {
        return Err(SynthError::Spec("tasks must be distinct".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table = LatentTable::default();
    let mut manifests = Vec::new();
    for &task in &spec.tasks {
        let mut lines = Vec::new();
        for model in &spec.models {
            let levels: Vec<u8> = loop {
                let l: Vec<u8> = (0..spec.per_model).map(|_| rng.random_range(0..=6)).collect();
                if l.iter().collect::<BTreeSet<_>>().len() >= 2 {
                    break l;
                }
            };
            for (i, &k) in levels.iter().enumerate() {
                let id = format!("{}-{model}-{i:03}", task.short_name());
                let mut condition_images = Vec::new();
                for j in 0..task.condition_image_count() {
                    let rel = format!("images/{id}-cond{j}.png");
                    write_bytes(&dir.join(&rel), tile(&mut rng)?.bytes())?;
                    condition_images.push(rel);
                }
                let synthetic_image = format!("images/{id}-out.png");
                write_bytes(&dir.join(&synthetic_image), tile(&mut rng)?.bytes())?;
                let human = HumanRating {
                    sc: rater_triple(&mut rng, k),
                    pq: rater_triple(&mut rng, k),
                };
                table.insert(LatentEntry {
                    instance_id: id.clone(),
                    sc: latent(&mut rng, k, expected_arity(task, AspectKind::Sc)),
                    pq: latent(&mut rng, k, expected_arity(task, AspectKind::Pq)),
                    reply_override: None,
                });
                let mut condition_texts = Fills::new();
                condition_texts.insert(task.sc_placeholder(), format!("synthetic condition {i} for {model}"));
                lines.push(RecordLine {
                    instance_id: id,
                    task: None,
                    model_name: model.clone(),
                    condition_texts,
                    condition_images,
                    synthetic_image,
                    human,
                });
            }
        }
        let header = ManifestHeader {
            format_version: FORMAT_VERSION,
            task,
            source_note: format!("synthetic, seed {}", spec.seed),
        };
        let path = dir.join(format!("{}.jsonl", task.as_str()));
        write_bytes(&path, write_manifest(&header, &lines).as_bytes())?;
        manifests.push(path);
    }
    let latents = dir.join("latents.jsonl");
    write_bytes(&latents, table.write_jsonl().as_bytes())?;
    Ok(SynthOutput { manifests, latents })
}
