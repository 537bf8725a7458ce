//! Rating runs, correlation studies and ranking comparisons.
//!
//! A run directory holds `scores/`, `reports/`, `cache/` and `meta/`.
//! Nothing written under `scores/` or `reports/` depends on wall-clock time,
//! output paths or dispatch order.

pub mod ablate;
pub mod correlate;
pub mod rank;
pub mod rate;
pub mod scores;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

pub use ablate::{cmd_ablate_pq, AblationCell, AblationPair, AblationTask, PqAblationReport};
pub use correlate::{cmd_correlate, CorrelateConfig, CorrelateOutcome, JoinError};
pub use rank::{cmd_rank, load_leaderboard, RankConfig, RankingReport};
pub use rate::{cmd_rate, RateOutcome};
pub use scores::{RowStatus, ScoreRow, ScoreTable};

use crate::backend::{
    BackendConfig, BackendError, BackendKind, Dispatcher, LatentTable, MockSettings, RawReply, ReplyStatus, SyntheticMock,
};
use crate::dataset::{load_manifest, DatasetError, InstanceRecord, Manifest};
use crate::media::{ImageData, MediaError};
use crate::parser::{parse_reply, ParsedRating};
use crate::prompt::{EvalRequest, FewShotExample, PromptError, ShotMode, TemplateSet};
use crate::task::{AspectKind, TaskKind};

pub const SCORES_DIR: &str = "scores";
pub const REPORTS_DIR: &str = "reports";
pub const CACHE_DIR: &str = "cache";
pub const META_DIR: &str = "meta";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("replay cache is missing {} repl{}:\n  {}", .0.len(), if .0.len() == 1 { "y" } else { "ies" }, .0.join("\n  "))]
    CacheMiss(Vec<String>),
    #[error(transparent)]
    Join(#[from] JoinError),
    #[error("task {task}: ranking needs at least 2 models, found {found}")]
    TooFewModels { task: TaskKind, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        RunError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 configuration or input validation, 3 join failure, 4 replay cache
    /// miss, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Dataset(_) | RunError::Prompt(_) | RunError::Media(_) => 2,
            RunError::Backend(BackendError::Config(_) | BackendError::Auth(_) | BackendError::Mock(_)) => 2,
            RunError::Join(_) => 3,
            RunError::CacheMiss(_) => 4,
            _ => 1,
        }
    }
}

impl From<BackendError> for RunError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::CacheMiss(fp) => RunError::CacheMiss(vec![fp]),
            other => RunError::Backend(other),
        }
    }
}

/// Settings shared by `rate`, `replay` and `ablate-pq`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifests: Vec<PathBuf>,
    pub backend: BackendConfig,
    pub shot_mode: ShotMode,
    /// One-shot examples file; required when `shot_mode` is one-shot.
    pub examples: Option<PathBuf>,
    pub pq_with_inputs: bool,
    pub concat_images: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Template directory; the built-in set when `None`.
    pub templates: Option<PathBuf>,
    /// Latent table for the synthetic backend.
    pub mock_latents: Option<PathBuf>,
    pub mock_settings: MockSettings,
}

impl RunConfig {
    pub fn new(manifests: Vec<PathBuf>, backend: BackendConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifests,
            backend,
            shot_mode: ShotMode::ZeroShot,
            examples: None,
            pq_with_inputs: false,
            concat_images: false,
            seed: 0,
            output_dir: output_dir.into(),
            templates: None,
            mock_latents: None,
            mock_settings: MockSettings::default(),
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| RunError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| RunError::io(path, e))
}

pub(crate) fn sha256_file(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Keeps `[A-Za-z0-9._-]`, replaces everything else with `_`.
pub fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

pub(crate) fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, RunError> {
    Ok(match dir {
        Some(d) => TemplateSet::from_dir(d)?,
        None => TemplateSet::builtin().clone(),
    })
}

pub(crate) fn load_manifests(paths: &[PathBuf]) -> Result<Vec<Manifest>, RunError> {
    if paths.is_empty() {
        return Err(RunError::Config("no manifest given".into()));
    }
    let manifests = paths.iter().map(|p| load_manifest(p)).collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    for m in &manifests {
        for r in &m.records {
            if !seen.insert((r.task, r.instance_id.as_str())) {
                return Err(RunError::Config(format!(
                    "instance {}/{} appears in more than one manifest",
                    r.task, r.instance_id
                )));
            }
        }
    }
    Ok(manifests)
}

/// All records, sorted by (task, instance_id).
pub(crate) fn sorted_records(manifests: &[Manifest]) -> Vec<&InstanceRecord> {
    let mut all: Vec<&InstanceRecord> = manifests.iter().flat_map(|m| &m.records).collect();
    all.sort_by(|a, b| (a.task, &a.instance_id).cmp(&(b.task, &b.instance_id)));
    all
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleEntry {
    task: TaskKind,
    aspect: AspectKind,
    /// Paths relative to the examples file.
    images: Vec<String>,
    request_text: String,
    exemplar_reply: String,
}

pub type ExampleSet = BTreeMap<(TaskKind, AspectKind), FewShotExample>;

/// Reads a JSON array of one-shot examples, at most one per (task, aspect).
pub fn load_examples(path: &Path) -> Result<ExampleSet, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let shown = path.display();
    let entries: Vec<ExampleEntry> =
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{shown}: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = ExampleSet::new();
    for e in entries {
        let request_images = e
            .images
            .iter()
            .map(|p| ImageData::load(&base.join(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let key = (e.task, e.aspect);
        let example = FewShotExample {
            task: e.task,
            aspect: e.aspect,
            request_images,
            request_text: e.request_text,
            exemplar_reply: e.exemplar_reply,
        };
        if out.insert(key, example).is_some() {
            return Err(RunError::Config(format!("{shown}: two examples for {} {}", key.0, key.1)));
        }
    }
    Ok(out)
}

/// Templates, examples and flags needed to turn records into requests.
pub(crate) struct RequestBuilder {
    pub templates: TemplateSet,
    examples: ExampleSet,
    shot_mode: ShotMode,
    concat_images: bool,
}

impl RequestBuilder {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, RunError> {
        let templates = load_templates(cfg.templates.as_deref())?;
        let examples = match (cfg.shot_mode, &cfg.examples) {
            (ShotMode::ZeroShot, _) => ExampleSet::new(),
            (ShotMode::OneShot, Some(p)) => load_examples(p)?,
            (ShotMode::OneShot, None) => return Err(RunError::Config("one-shot runs need an examples file".into())),
        };
        Ok(Self {
            templates,
            examples,
            shot_mode: cfg.shot_mode,
            concat_images: cfg.concat_images,
        })
    }

    pub fn build(&self, record: &InstanceRecord, aspect: AspectKind, with_inputs: bool) -> Result<EvalRequest, RunError> {
        let example = match self.shot_mode {
            ShotMode::ZeroShot => None,
            ShotMode::OneShot => Some(self.examples.get(&(record.task, aspect)).ok_or_else(|| {
                RunError::Config(format!("no one-shot example for {} {}", record.task, aspect))
            })?),
        };
        let request = if with_inputs && aspect == AspectKind::Pq {
            self.templates.pq_with_inputs_request(record, self.shot_mode, example)?
        } else {
            self.templates.assemble_request(record, aspect, self.shot_mode, example)?
        };
        Ok(if self.concat_images {
            request.concatenated()?
        } else {
            request
        })
    }
}

pub(crate) fn build_dispatcher(cfg: &RunConfig) -> Result<Dispatcher, RunError> {
    let mock = match cfg.backend.kind {
        BackendKind::SyntheticMock => {
            let path = cfg
                .mock_latents
                .as_ref()
                .ok_or_else(|| RunError::Config("the synthetic backend needs a latent table".into()))?;
            let table = LatentTable::load(path).map_err(BackendError::from)?;
            Some(SyntheticMock::new(table, cfg.mock_settings))
        }
        _ => None,
    };
    Ok(Dispatcher::from_config(cfg.backend.clone(), mock)?)
}

/// Sends every request. Replay misses are gathered and reported together.
pub(crate) async fn dispatch(dispatcher: &Dispatcher, requests: &[EvalRequest]) -> Result<Vec<RawReply>, RunError> {
    let mut misses = BTreeSet::new();
    let mut replies = Vec::with_capacity(requests.len());
    for result in dispatcher.send_all(requests).await {
        match result {
            Ok(r) => replies.push(r),
            Err(BackendError::CacheMiss(fp)) => {
                misses.insert(fp);
            }
            Err(e) => return Err(RunError::Backend(e)),
        }
    }
    if !misses.is_empty() {
        return Err(RunError::CacheMiss(misses.into_iter().collect()));
    }
    Ok(replies)
}

/// What one aspect of one instance came to.
#[derive(Debug, Clone)]
pub(crate) enum AspectOutcome {
    Rated(ParsedRating),
    Failed(ReplyStatus),
}

impl AspectOutcome {
    pub fn from_reply(reply: &RawReply, arity: usize, seed: u64) -> Self {
        match reply.status {
            ReplyStatus::Ok | ReplyStatus::Refused => AspectOutcome::Rated(parse_reply(reply, arity, seed)),
            other => AspectOutcome::Failed(other),
        }
    }

    pub fn detail(&self) -> &'static str {
        match self {
            AspectOutcome::Rated(p) => p.status.as_str(),
            AspectOutcome::Failed(s) => s.as_str(),
        }
    }
}

/// Seed, backend identity, shot mode, flags and every template and manifest checksum.
pub(crate) fn run_meta(cfg: &RunConfig, templates: &TemplateSet) -> Result<BTreeMap<String, String>, RunError> {
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("backend".to_string(), cfg.backend.kind.as_str().to_string());
    meta.insert("model".to_string(), cfg.backend.model_name.clone());
    meta.insert("shot_mode".to_string(), cfg.shot_mode.as_str().to_string());
    meta.insert("pq_with_inputs".to_string(), cfg.pq_with_inputs.to_string());
    meta.insert("concat_images".to_string(), cfg.concat_images.to_string());
    meta.insert("template_digest".to_string(), templates.digest());
    for (file, hash) in templates.checksums() {
        meta.insert(format!("template.{file}"), hash.clone());
    }
    for path in &cfg.manifests {
        meta.insert(format!("manifest.{}", file_label(path)), sha256_file(path)?);
    }
    if let (BackendKind::SyntheticMock, Some(path)) = (cfg.backend.kind, &cfg.mock_latents) {
        meta.insert("mock.latents".to_string(), sha256_file(path)?);
        meta.insert("mock.noise_level".to_string(), cfg.mock_settings.noise_level.to_string());
        meta.insert(
            "mock.extra_image_noise".to_string(),
            cfg.mock_settings.extra_image_noise.to_string(),
        );
        meta.insert("mock.seed".to_string(), cfg.mock_settings.seed.to_string());
    }
    Ok(meta)
}

/// Merges several metadata maps; keys whose values differ keep every
/// distinct value, joined with ", ".
pub(crate) fn merge_meta<'a>(metas: impl IntoIterator<Item = &'a BTreeMap<String, String>>) -> BTreeMap<String, String> {
    let mut values: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for m in metas {
        for (k, v) in m {
            values.entry(k.clone()).or_default().insert(v.clone());
        }
    }
    values
        .into_iter()
        .map(|(k, vs)| (k, vs.into_iter().collect::<Vec<_>>().join(", ")))
        .collect()
}
