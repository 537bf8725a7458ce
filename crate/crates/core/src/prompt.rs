//! Prompt assembly: context block, per-task rating templates, and request layout.
//!
//! Every request text is the context block, a blank line, then the rating
//! prompt for the (task, aspect) pair with its placeholders filled. One-shot
//! requests insert a labelled example between the two. Images follow the
//! template's reading order with the synthetic image last.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::InstanceRecord;
use crate::media::ImageData;
use crate::parser;
use crate::task::{expected_arity, AspectKind, Placeholder, TaskKind};

/// Placeholder values for one instance.
pub type Fills = BTreeMap<Placeholder, String>;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template for {task} {aspect} needs {placeholder} but no value was supplied")]
    MissingPlaceholder {
        task: TaskKind,
        aspect: AspectKind,
        placeholder: Placeholder,
    },
    #[error("template for {task} {aspect} does not use {placeholder}")]
    UnknownPlaceholder {
        task: TaskKind,
        aspect: AspectKind,
        placeholder: Placeholder,
    },
    #[error("no template for {task} {aspect}")]
    NoTemplate { task: TaskKind, aspect: AspectKind },
    #[error("instance {instance_id}: {task} needs {expected} condition image(s), record has {found}")]
    ImageMissing {
        instance_id: String,
        task: TaskKind,
        expected: usize,
        found: usize,
    },
    #[error("shot mode {shot:?} given with example present = {has_example}")]
    ShotMismatch { shot: ShotMode, has_example: bool },
    #[error("one-shot example is for {example_task} {example_aspect}, request is {task} {aspect}")]
    ExampleMismatch {
        example_task: TaskKind,
        example_aspect: AspectKind,
        task: TaskKind,
        aspect: AspectKind,
    },
    #[error("one-shot example reply does not parse with arity {arity}: {reason}")]
    BadExample { arity: usize, reason: String },
    #[error("template {file}: unsupported token `{token}`")]
    BadToken { file: String, token: String },
    #[error("template {file} checksum mismatch (manifest {expected}, actual {actual})")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("template asset {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    #[default]
    ZeroShot,
    OneShot,
}

impl ShotMode {
    pub fn from_shots(n: u8) -> Option<Self> {
        match n {
            0 => Some(ShotMode::ZeroShot),
            1 => Some(ShotMode::OneShot),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShotMode::ZeroShot => "zero_shot",
            ShotMode::OneShot => "one_shot",
        }
    }

    pub fn shots(self) -> u8 {
        match self {
            ShotMode::ZeroShot => 0,
            ShotMode::OneShot => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    /// `None` for templates shared by every task (PQ).
    pub task: Option<TaskKind>,
    pub aspect: AspectKind,
    pub body: String,
    pub placeholders: BTreeSet<Placeholder>,
    pub required_condition_images: usize,
    pub includes_synthetic_image: bool,
}

impl PromptTemplate {
    fn parse(file: &str, task: Option<TaskKind>, aspect: AspectKind, raw: &str) -> Result<Self, PromptError> {
        let body = raw.trim_end().to_string();
        let placeholders = scan_tokens(&body).map_err(|token| PromptError::BadToken {
            file: file.to_string(),
            token,
        })?;
        let required_condition_images = match (aspect, task) {
            (AspectKind::Sc, Some(t)) => t.condition_image_count(),
            _ => 0,
        };
        Ok(Self {
            task,
            aspect,
            body,
            placeholders,
            required_condition_images,
            includes_synthetic_image: true,
        })
    }
}

/// Collects `<word>` tokens, rejecting any that are not placeholders.
fn scan_tokens(body: &str) -> Result<BTreeSet<Placeholder>, String> {
    let mut found = BTreeSet::new();
    let mut rest = body;
    while let Some(start) = rest.find('<') {
        let after = &rest[start + 1..];
        let Some(len) = after.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) else {
            break;
        };
        if len > 0 && after[len..].starts_with('>') {
            let token = &rest[start..start + len + 2];
            match Placeholder::ALL.iter().find(|p| p.token() == token) {
                Some(p) => {
                    found.insert(*p);
                }
                None => return Err(token.to_string()),
            }
        }
        rest = after;
    }
    Ok(found)
}

/// Single left-to-right pass, so fill values are never re-scanned.
fn substitute(body: &str, fills: &Fills) -> String {
    let mut out = String::with_capacity(body.len() + 64);
    let mut rest = body;
    'outer: while let Some(start) = rest.find('<') {
        for (p, value) in fills {
            if rest[start..].starts_with(p.token()) {
                out.push_str(&rest[..start]);
                out.push_str(value);
                rest = &rest[start + p.token().len()..];
                continue 'outer;
            }
        }
        out.push_str(&rest[..=start]);
        rest = &rest[start + 1..];
    }
    out.push_str(rest);
    out
}

const CONTEXT_FILE: &str = "context.txt";
const PQ_FILE: &str = "pq_all.txt";
const CHECKSUM_FILE: &str = "checksums.sha256";

fn sc_file(task: TaskKind) -> String {
    format!("sc_{}.txt", task.as_str())
}

const BUILTIN_ASSETS: &[(&str, &str)] = &[
    ("context.txt", include_str!("../templates/context.txt")),
    ("pq_all.txt", include_str!("../templates/pq_all.txt")),
    ("sc_text_guided_generation.txt", include_str!("../templates/sc_text_guided_generation.txt")),
    ("sc_mask_guided_editing.txt", include_str!("../templates/sc_mask_guided_editing.txt")),
    ("sc_text_guided_editing.txt", include_str!("../templates/sc_text_guided_editing.txt")),
    ("sc_subject_driven_generation.txt", include_str!("../templates/sc_subject_driven_generation.txt")),
    ("sc_subject_driven_editing.txt", include_str!("../templates/sc_subject_driven_editing.txt")),
    ("sc_multi_concept_composition.txt", include_str!("../templates/sc_multi_concept_composition.txt")),
    ("sc_control_guided_generation.txt", include_str!("../templates/sc_control_guided_generation.txt")),
];

/// Checksum manifest shipped next to the template assets.
pub const BUILTIN_CHECKSUMS: &str = include_str!("../templates/checksums.sha256");

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_checksums(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|line| {
            let (hash, file) = line.split_once(char::is_whitespace)?;
            Some((file.trim().trim_start_matches('*').to_string(), hash.to_string()))
        })
        .collect()
}

/// The full set of rating templates plus the checksum of every asset file.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    context: String,
    pq: PromptTemplate,
    sc: BTreeMap<TaskKind, PromptTemplate>,
    checksums: BTreeMap<String, String>,
}

impl TemplateSet {
    /// Templates compiled into the binary.
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            let assets: BTreeMap<&str, &str> = BUILTIN_ASSETS.iter().copied().collect();
            Self::from_assets(|name| Ok(assets.get(name).map(|s| s.to_string())))
                .expect("builtin templates are well formed")
        })
    }

    /// Loads templates from a directory and checks them against its
    /// `checksums.sha256`. Files absent from the directory leave their
    /// (task, aspect) pair undefined.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, PromptError> {
        let manifest_path = dir.join(CHECKSUM_FILE);
        let manifest = std::fs::read_to_string(&manifest_path).map_err(|source| PromptError::Io {
            file: manifest_path.display().to_string(),
            source,
        })?;
        let pinned = parse_checksums(&manifest);
        let set = Self::from_assets(|name| {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(PromptError::Io {
                    file: path.display().to_string(),
                    source,
                }),
            }
        })?;
        for (file, actual) in &set.checksums {
            let expected = pinned.get(file).cloned().unwrap_or_default();
            if &expected != actual {
                return Err(PromptError::ChecksumMismatch {
                    file: file.clone(),
                    expected,
                    actual: actual.clone(),
                });
            }
        }
        Ok(set)
    }

    fn from_assets(
        mut read: impl FnMut(&str) -> Result<Option<String>, PromptError>,
    ) -> Result<TemplateSet, PromptError> {
        let mut checksums = BTreeMap::new();
        let mut load = |name: &str| -> Result<Option<String>, PromptError> {
            let text = read(name)?;
            if let Some(t) = &text {
                checksums.insert(name.to_string(), sha256_hex(t.as_bytes()));
            }
            Ok(text)
        };
        let context = load(CONTEXT_FILE)?.ok_or_else(|| PromptError::Io {
            file: CONTEXT_FILE.to_string(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        })?;
        let pq_raw = load(PQ_FILE)?.ok_or_else(|| PromptError::Io {
            file: PQ_FILE.to_string(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        })?;
        let pq = PromptTemplate::parse(PQ_FILE, None, AspectKind::Pq, &pq_raw)?;
        let mut sc = BTreeMap::new();
        for task in TaskKind::ALL {
            let file = sc_file(task);
            if let Some(raw) = load(&file)? {
                sc.insert(task, PromptTemplate::parse(&file, Some(task), AspectKind::Sc, &raw)?);
            }
        }
        Ok(TemplateSet {
            context: context.trim_end().to_string(),
            pq,
            sc,
            checksums,
        })
    }

    /// The context block, verbatim.
    pub fn build_context(&self) -> &str {
        &self.context
    }

    pub fn template(&self, task: TaskKind, aspect: AspectKind) -> Result<&PromptTemplate, PromptError> {
        match aspect {
            AspectKind::Pq => Ok(&self.pq),
            AspectKind::Sc => self.sc.get(&task).ok_or(PromptError::NoTemplate { task, aspect }),
        }
    }

    /// Fills the (task, aspect) template. `fills` must cover exactly the
    /// placeholders the template declares.
    pub fn build_rating_prompt(&self, task: TaskKind, aspect: AspectKind, fills: &Fills) -> Result<String, PromptError> {
        let template = self.template(task, aspect)?;
        if let Some(p) = template.placeholders.iter().find(|p| !fills.contains_key(p)) {
            return Err(PromptError::MissingPlaceholder {
                task,
                aspect,
                placeholder: *p,
            });
        }
        if let Some(p) = fills.keys().find(|p| !template.placeholders.contains(p)) {
            return Err(PromptError::UnknownPlaceholder {
                task,
                aspect,
                placeholder: *p,
            });
        }
        Ok(substitute(&template.body, fills))
    }

    /// Per-file SHA-256 of the loaded assets, keyed by file name.
    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.checksums
    }

    /// One digest over all per-file checksums, for compact provenance.
    pub fn digest(&self) -> String {
        let mut listing = String::new();
        for (file, hash) in &self.checksums {
            let _ = writeln!(listing, "{hash}  {file}");
        }
        sha256_hex(listing.as_bytes())
    }

    /// Builds the request for one aspect of one instance.
    pub fn assemble_request(
        &self,
        record: &InstanceRecord,
        aspect: AspectKind,
        shot: ShotMode,
        example: Option<&FewShotExample>,
    ) -> Result<EvalRequest, PromptError> {
        let conditions = match aspect {
            AspectKind::Sc => self.condition_images(record)?,
            AspectKind::Pq => Vec::new(),
        };
        self.assemble(record, aspect, shot, example, conditions)
    }

    /// PQ request with the condition images prepended (the inputs ablation arm).
    pub fn pq_with_inputs_request(
        &self,
        record: &InstanceRecord,
        shot: ShotMode,
        example: Option<&FewShotExample>,
    ) -> Result<EvalRequest, PromptError> {
        let conditions = self.condition_images(record)?;
        self.assemble(record, AspectKind::Pq, shot, example, conditions)
    }

    fn condition_images(&self, record: &InstanceRecord) -> Result<Vec<ImageData>, PromptError> {
        let template = self.template(record.task, AspectKind::Sc)?;
        let expected = template.required_condition_images;
        if record.condition_images.len() < expected {
            return Err(PromptError::ImageMissing {
                instance_id: record.instance_id.clone(),
                task: record.task,
                expected,
                found: record.condition_images.len(),
            });
        }
        Ok(record.condition_images[..expected].to_vec())
    }

    fn assemble(
        &self,
        record: &InstanceRecord,
        aspect: AspectKind,
        shot: ShotMode,
        example: Option<&FewShotExample>,
        conditions: Vec<ImageData>,
    ) -> Result<EvalRequest, PromptError> {
        if example.is_some() != (shot == ShotMode::OneShot) {
            return Err(PromptError::ShotMismatch {
                shot,
                has_example: example.is_some(),
            });
        }
        let arity = expected_arity(record.task, aspect);
        let fills = match aspect {
            AspectKind::Sc => record.condition_texts.clone(),
            AspectKind::Pq => Fills::new(),
        };
        let rating = self.build_rating_prompt(record.task, aspect, &fills)?;

        let mut images = Vec::new();
        let text = match example {
            None => format!("{}\n\n{}", self.context, rating),
            Some(ex) => {
                ex.check(record.task, aspect, arity)?;
                images.extend(ex.request_images.iter().cloned());
                format!(
                    "{}\n\nEXAMPLE:\n{}\n{}\n\nNow evaluate the following:\n{}",
                    self.context,
                    ex.request_text.trim_end(),
                    ex.exemplar_reply.trim_end(),
                    rating
                )
            }
        };
        images.extend(conditions);
        images.push(record.synthetic_image.clone());

        Ok(EvalRequest {
            instance_id: record.instance_id.clone(),
            task: record.task,
            aspect,
            text,
            images,
            shot_mode: shot,
            expected_arity: arity,
        })
    }
}

/// A worked example for one-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub task: TaskKind,
    pub aspect: AspectKind,
    pub request_images: Vec<ImageData>,
    /// The example's filled rating prompt.
    pub request_text: String,
    pub exemplar_reply: String,
}

impl FewShotExample {
    fn check(&self, task: TaskKind, aspect: AspectKind, arity: usize) -> Result<(), PromptError> {
        if self.task != task || self.aspect != aspect {
            return Err(PromptError::ExampleMismatch {
                example_task: self.task,
                example_aspect: self.aspect,
                task,
                aspect,
            });
        }
        parser::parse_scores(&self.exemplar_reply, arity)
            .map(|_| ())
            .map_err(|e| PromptError::BadExample {
                arity,
                reason: e.to_string(),
            })
    }
}

/// One multimodal message for one aspect of one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRequest {
    pub instance_id: String,
    pub task: TaskKind,
    pub aspect: AspectKind,
    pub text: String,
    pub images: Vec<ImageData>,
    pub shot_mode: ShotMode,
    pub expected_arity: usize,
}

impl EvalRequest {
    /// Merges all images into one horizontal panel, for backends that accept
    /// a single image. Requests with one image are returned unchanged.
    pub fn concatenated(mut self) -> Result<Self, crate::media::MediaError> {
        if self.images.len() > 1 {
            self.images = vec![crate::media::concat_horizontal(&self.images)?];
        }
        Ok(self)
    }
}
