//! Evaluation manifests and precomputed baseline metric files.
//!
//! A manifest is JSON Lines. The first line is a header:
//!
//! ```text
//! {"format_version": 1, "task": "text_guided_editing", "source_note": "..."}
//! ```
//!
//! and every following non-blank line is one instance:
//!
//! ```text
//! {"instance_id": "tie-0001", "model_name": "InstructPix2Pix",
//!  "condition_texts": {"instruction": "make it snow"},
//!  "condition_images": ["inputs/0001.png"], "synthetic_image": "outputs/ip2p/0001.png",
//!  "human": {"sc": [1, 0.5, 1], "pq": [1, 1, 0.5]}}
//! ```
//!
//! Image paths are relative to the manifest's directory. Loading decodes
//! every image, so a manifest that loads can be rated without further I/O.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::media::ImageData;
use crate::prompt::Fills;
use crate::scoring::HumanRating;
use crate::task::TaskKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error("{path}:{line}: image {image}: {reason}")]
    DanglingImage {
        path: String,
        line: usize,
        image: String,
        reason: String,
    },
    #[error("{path}:{line}: duplicate instance_id {id}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("{path}:{line}: {task} takes {expected} condition image(s), record has {found}")]
    Arity {
        path: String,
        line: usize,
        task: TaskKind,
        expected: usize,
        found: usize,
    },
    #[error("baseline {metric}: no manifest record for ({instance_id}, {model_name})")]
    UnresolvedRow {
        metric: String,
        instance_id: String,
        model_name: String,
    },
    #[error("baseline {metric}: files disagree on the sign-inversion flag")]
    MixedSignFlag { metric: String },
    #[error("baseline {metric}: ({instance_id}, {model_name}) appears more than once")]
    DuplicateBaselineRow {
        metric: String,
        instance_id: String,
        model_name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub task: TaskKind,
    #[serde(default)]
    pub source_note: String,
}

/// One instance line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    pub model_name: String,
    pub condition_texts: Fills,
    #[serde(default)]
    pub condition_images: Vec<String>,
    pub synthetic_image: String,
    pub human: HumanRating,
}

/// One evaluation unit with its images loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub task: TaskKind,
    /// The image-synthesis model that produced the synthetic image.
    pub model_name: String,
    pub condition_texts: Fills,
    pub condition_images: Vec<ImageData>,
    pub synthetic_image: ImageData,
    pub human: HumanRating,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub task: TaskKind,
    pub records: Vec<InstanceRecord>,
    /// Sorted, de-duplicated.
    pub model_names: Vec<String>,
    pub source_note: String,
}

impl Manifest {
    pub fn get(&self, instance_id: &str) -> Option<&InstanceRecord> {
        self.records.iter().find(|r| r.instance_id == instance_id)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: shown.clone(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let schema = |line: usize, message: String| DatasetError::Schema {
        path: shown.clone(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| schema(1, "missing header line".into()))?;
    let header: ManifestHeader = serde_json::from_str(header).map_err(|e| schema(hline + 1, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(schema(
            hline + 1,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    let task = header.task;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let rec: RecordLine = serde_json::from_str(raw).map_err(|e| schema(line, e.to_string()))?;
        if let Some(t) = rec.task {
            if t != task {
                return Err(schema(line, format!("record task {t} differs from manifest task {task}")));
            }
        }
        if rec.instance_id.is_empty() {
            return Err(schema(line, "instance_id is empty".into()));
        }
        if !seen.insert(rec.instance_id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: shown.clone(),
                line,
                id: rec.instance_id,
            });
        }
        let keys: BTreeSet<_> = rec.condition_texts.keys().copied().collect();
        if keys != BTreeSet::from([task.sc_placeholder()]) {
            return Err(schema(
                line,
                format!("condition_texts must hold exactly `{}`", task.sc_placeholder().token()),
            ));
        }
        let expected = task.condition_image_count();
        if rec.condition_images.len() != expected {
            return Err(DatasetError::Arity {
                path: shown.clone(),
                line,
                task,
                expected,
                found: rec.condition_images.len(),
            });
        }
        let load = |rel: &str| {
            ImageData::load(&base.join(rel)).map_err(|e| DatasetError::DanglingImage {
                path: shown.clone(),
                line,
                image: rel.to_string(),
                reason: e.to_string(),
            })
        };
        let condition_images = rec.condition_images.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
        let synthetic_image = load(&rec.synthetic_image)?;
        records.push(InstanceRecord {
            instance_id: rec.instance_id,
            task,
            model_name: rec.model_name,
            condition_texts: rec.condition_texts,
            condition_images,
            synthetic_image,
            human: rec.human,
        });
    }

    let model_names = records
        .iter()
        .map(|r| r.model_name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(Manifest {
        path: path.to_path_buf(),
        task,
        records,
        model_names,
        source_note: header.source_note,
    })
}

/// Serializes a header and record lines in manifest format.
pub fn write_manifest(header: &ManifestHeader, records: &[RecordLine]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricName {
    ClipScore,
    Lpips,
    Dino,
    ClipI,
    Other(String),
}

impl MetricName {
    pub fn parse(s: &str) -> Self {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "clipscore" => MetricName::ClipScore,
            "lpips" => MetricName::Lpips,
            "dino" => MetricName::Dino,
            "clipi" => MetricName::ClipI,
            _ => MetricName::Other(s.trim().to_string()),
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricName::ClipScore => f.write_str("CLIP-Score"),
            MetricName::Lpips => f.write_str("LPIPS"),
            MetricName::Dino => f.write_str("DINO"),
            MetricName::ClipI => f.write_str("CLIP-I"),
            MetricName::Other(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub instance_id: String,
    pub model_name: String,
    pub value: f64,
}

/// Scores from an automatic metric computed elsewhere.
///
/// File layout:
///
/// ```text
/// # metric: LPIPS
/// # invert: true
/// instance_id,model_name,value
/// tie-0001,InstructPix2Pix,0.231
/// ```
///
/// With `invert: true` values are negated on load.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineScoreFile {
    pub metric: MetricName,
    pub inverted: bool,
    pub rows: Vec<BaselineRow>,
}

pub fn load_baseline(path: &Path) -> Result<BaselineScoreFile, DatasetError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_baseline(&text, &shown)
}

pub fn parse_baseline(text: &str, shown: &str) -> Result<BaselineScoreFile, DatasetError> {
    let schema = |line: usize, message: String| DatasetError::Schema {
        path: shown.to_string(),
        line,
        message,
    };
    let mut metric = None;
    let mut inverted = false;
    let mut body_start = 0;
    let mut first_data_line = 1;
    for (i, line) in text.lines().enumerate() {
        let Some(directive) = line.trim().strip_prefix('#') else {
            break;
        };
        body_start += line.len() + 1;
        first_data_line = i + 2;
        let Some((key, value)) = directive.split_once(':') else {
            continue;
        };
        match key.trim().to_ascii_lowercase().as_str() {
            "metric" | "metric_name" => metric = Some(MetricName::parse(value)),
            "invert" => {
                inverted = match value.trim().to_ascii_lowercase().as_str() {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    other => return Err(schema(i + 1, format!("invert flag `{other}` is not a boolean"))),
                }
            }
            _ => {}
        }
    }
    let metric = metric.ok_or_else(|| schema(1, "missing `# metric:` header".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.get(body_start..).unwrap_or("").as_bytes());
    let headers = reader.headers().map_err(|e| schema(first_data_line, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(first_data_line, format!("missing column {name}")))
    };
    let (ci, cm, cv) = (col("instance_id")?, col("model_name")?, col("value")?);
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = first_data_line + 1 + k;
        let rec = rec.map_err(|e| schema(line, e.to_string()))?;
        let value: f64 = rec
            .get(cv)
            .unwrap_or("")
            .parse()
            .map_err(|_| schema(line, format!("value `{}` is not a number", rec.get(cv).unwrap_or(""))))?;
        if !value.is_finite() {
            return Err(schema(line, "value is not finite".into()));
        }
        rows.push(BaselineRow {
            instance_id: rec.get(ci).unwrap_or("").to_string(),
            model_name: rec.get(cm).unwrap_or("").to_string(),
            value: if inverted { -value } else { value },
        });
    }
    Ok(BaselineScoreFile { metric, inverted, rows })
}

/// Human ratings joined with baseline metric values, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTable {
    pub metrics: Vec<MetricName>,
    pub rows: Vec<BaselineJoinedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineJoinedRow {
    pub task: TaskKind,
    pub instance_id: String,
    pub model_name: String,
    pub human: HumanRating,
    /// Parallel to [`BaselineTable::metrics`]; `None` where a file has no row.
    pub values: Vec<Option<f64>>,
}

pub fn attach_baselines(manifests: &[Manifest], files: &[BaselineScoreFile]) -> Result<BaselineTable, DatasetError> {
    let mut flags: BTreeMap<&MetricName, bool> = BTreeMap::new();
    for f in files {
        if *flags.entry(&f.metric).or_insert(f.inverted) != f.inverted {
            return Err(DatasetError::MixedSignFlag {
                metric: f.metric.to_string(),
            });
        }
    }
    let metrics: Vec<MetricName> = flags.keys().map(|m| (*m).clone()).collect();

    let mut index: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut rows = Vec::new();
    for m in manifests {
        for r in &m.records {
            index.insert((r.instance_id.as_str(), r.model_name.as_str()), rows.len());
            rows.push(BaselineJoinedRow {
                task: r.task,
                instance_id: r.instance_id.clone(),
                model_name: r.model_name.clone(),
                human: r.human,
                values: vec![None; metrics.len()],
            });
        }
    }
    for f in files {
        let col = metrics.iter().position(|m| *m == f.metric).expect("metric collected above");
        for row in &f.rows {
            let at = *index
                .get(&(row.instance_id.as_str(), row.model_name.as_str()))
                .ok_or_else(|| DatasetError::UnresolvedRow {
                    metric: f.metric.to_string(),
                    instance_id: row.instance_id.clone(),
                    model_name: row.model_name.clone(),
                })?;
            let slot = &mut rows[at].values[col];
            if slot.is_some() {
                return Err(DatasetError::DuplicateBaselineRow {
                    metric: f.metric.to_string(),
                    instance_id: row.instance_id.clone(),
                    model_name: row.model_name.clone(),
                });
            }
            *slot = Some(row.value);
        }
    }
    Ok(BaselineTable { metrics, rows })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scoring::RaterValue;
    use crate::task::Placeholder;
    use image::{DynamicImage, Rgb, RgbImage};

    fn color_of(seed: &str) -> [u8; 3] {
        let h = seed.bytes().fold(2166136261u32, |h, b| (h ^ u32::from(b)).wrapping_mul(16777619));
        [(h >> 16) as u8, (h >> 8) as u8, h as u8]
    }

    pub(crate) fn image_for(seed: &str) -> ImageData {
        ImageData::from_image(&DynamicImage::ImageRgb8(RgbImage::from_pixel(4, 4, Rgb(color_of(seed))))).unwrap()
    }

    /// A well-formed in-memory record for `task`.
    pub(crate) fn record_for(task: TaskKind, id: &str) -> InstanceRecord {
        InstanceRecord {
            instance_id: id.to_string(),
            task,
            model_name: "model-a".to_string(),
            condition_texts: Fills::from([(task.sc_placeholder(), format!("condition text for {id}"))]),
            condition_images: (0..task.condition_image_count())
                .map(|k| image_for(&format!("{id}/cond{k}")))
                .collect(),
            synthetic_image: image_for(&format!("{id}/out")),
            human: HumanRating {
                sc: [RaterValue::One, RaterValue::Half, RaterValue::One],
                pq: [RaterValue::One, RaterValue::One, RaterValue::Half],
            },
        }
    }

    fn line(id: &str, model: &str, conds: &[&str]) -> RecordLine {
        RecordLine {
            instance_id: id.into(),
            task: None,
            model_name: model.into(),
            condition_texts: Fills::from([(Placeholder::Instruction, "add a hat".to_string())]),
            condition_images: conds.iter().map(|s| s.to_string()).collect(),
            synthetic_image: "out.png".into(),
            human: HumanRating {
                sc: [RaterValue::One, RaterValue::Zero, RaterValue::Half],
                pq: [RaterValue::Half, RaterValue::Half, RaterValue::One],
            },
        }
    }

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for name in ["in.png", "out.png"] {
            std::fs::write(dir.path().join(name), image_for(name).bytes()).unwrap();
        }
        std::fs::write(dir.path().join("broken.png"), b"\x89PNG garbage").unwrap();
        dir
    }

    fn header() -> ManifestHeader {
        ManifestHeader {
            format_version: 1,
            task: TaskKind::TextGuidedEditing,
            source_note: "fixture".into(),
        }
    }

    fn write(dir: &Path, lines: &[RecordLine]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, write_manifest(&header(), lines)).unwrap();
        path
    }

    #[test]
    fn loads_valid_manifest() {
        let dir = fixture_dir();
        let path = write(
            dir.path(),
            &[line("a", "m2", &["in.png"]), line("b", "m1", &["in.png"]), line("c", "m1", &["in.png"])],
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.model_names, vec!["m1", "m2"]);
        assert_eq!(m.task, TaskKind::TextGuidedEditing);
        assert_eq!(m.records[0].condition_images[0], image_for("in.png"));
        let again = load_manifest(&path).unwrap();
        assert_eq!(m.records, again.records);
    }

    #[test]
    fn rejects_wrong_condition_count() {
        let dir = fixture_dir();
        let path = write(dir.path(), &[line("a", "m", &["in.png", "in.png"])]);
        assert!(matches!(
            load_manifest(&path),
            Err(DatasetError::Arity {
                line: 2,
                expected: 1,
                found: 2,
                ..
            })
        ));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let dir = fixture_dir();
        let path = write(dir.path(), &[line("a", "m", &["in.png"]), line("a", "m", &["in.png"])]);
        assert!(matches!(load_manifest(&path), Err(DatasetError::DuplicateId { line: 3, .. })));
    }

    #[test]
    fn rejects_missing_and_corrupt_images() {
        let dir = fixture_dir();
        let path = write(dir.path(), &[line("a", "m", &["nope.png"])]);
        assert!(matches!(load_manifest(&path), Err(DatasetError::DanglingImage { .. })));
        let path = write(dir.path(), &[line("a", "m", &["broken.png"])]);
        assert!(matches!(load_manifest(&path), Err(DatasetError::DanglingImage { .. })));
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let dir = fixture_dir();
        let path = dir.path().join("m.jsonl");
        let good = serde_json::to_string(&line("a", "m", &["in.png"])).unwrap();
        std::fs::write(
            &path,
            format!(
                "{}\n{good}\n{{\"instance_id\": 5}}\n",
                serde_json::to_string(&header()).unwrap()
            ),
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::Schema { line: 3, .. })));

        let mut wrong_key = line("a", "m", &["in.png"]);
        wrong_key.condition_texts = Fills::from([(Placeholder::Prompt, "x".to_string())]);
        let path = write(dir.path(), &[wrong_key]);
        assert!(matches!(load_manifest(&path), Err(DatasetError::Schema { line: 2, .. })));

        let mut other_task = line("a", "m", &["in.png"]);
        other_task.task = Some(TaskKind::MaskGuidedEditing);
        let path = write(dir.path(), &[other_task]);
        assert!(matches!(load_manifest(&path), Err(DatasetError::Schema { line: 2, .. })));

        std::fs::write(&path, "{\"format_version\": 2, \"task\": \"tie\"}\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::Schema { line: 1, .. })));
    }

    fn manifest3() -> (tempfile::TempDir, Manifest) {
        let dir = fixture_dir();
        let path = write(
            dir.path(),
            &[line("a", "m1", &["in.png"]), line("b", "m1", &["in.png"]), line("c", "m2", &["in.png"])],
        );
        let m = load_manifest(&path).unwrap();
        (dir, m)
    }

    #[test]
    fn baseline_parsing_and_inversion() {
        let f = parse_baseline("# metric: LPIPS\n# invert: true\ninstance_id,model_name,value\na,m1,0.25\n", "x").unwrap();
        assert_eq!(f.metric, MetricName::Lpips);
        assert!(f.inverted);
        assert_eq!(f.rows[0].value, -0.25);
        let g = parse_baseline("# metric: clip_score\ninstance_id,model_name,value\na,m1,0.25\n", "x").unwrap();
        assert_eq!(g.metric, MetricName::ClipScore);
        assert_eq!(g.rows[0].value, 0.25);
        assert!(matches!(
            parse_baseline("instance_id,model_name,value\n", "x"),
            Err(DatasetError::Schema { .. })
        ));
        assert!(matches!(
            parse_baseline("# metric: DINO\ninstance_id,model_name,value\na,m1,abc\n", "x"),
            Err(DatasetError::Schema { line: 3, .. })
        ));
    }

    #[test]
    fn join_two_metrics() {
        let (_dir, m) = manifest3();
        let clip = parse_baseline("# metric: CLIP-I\ninstance_id,model_name,value\na,m1,0.9\nb,m1,0.8\nc,m2,0.7\n", "x").unwrap();
        let dino = parse_baseline("# metric: DINO\ninstance_id,model_name,value\nc,m2,0.1\na,m1,0.3\n", "x").unwrap();
        let table = attach_baselines(std::slice::from_ref(&m), &[clip, dino]).unwrap();
        assert_eq!(table.metrics, vec![MetricName::Dino, MetricName::ClipI]);
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.rows[0].values, vec![Some(0.3), Some(0.9)]);
        assert_eq!(table.rows[1].values, vec![None, Some(0.8)]);
        assert_eq!(table.rows[2].values, vec![Some(0.1), Some(0.7)]);
    }

    #[test]
    fn join_errors() {
        let (_dir, m) = manifest3();
        let unknown = parse_baseline("# metric: DINO\ninstance_id,model_name,value\nzzz,m1,0.3\n", "x").unwrap();
        assert!(matches!(
            attach_baselines(std::slice::from_ref(&m), &[unknown]),
            Err(DatasetError::UnresolvedRow { .. })
        ));
        let wrong_model = parse_baseline("# metric: DINO\ninstance_id,model_name,value\na,m2,0.3\n", "x").unwrap();
        assert!(matches!(
            attach_baselines(std::slice::from_ref(&m), &[wrong_model]),
            Err(DatasetError::UnresolvedRow { .. })
        ));
        let a = parse_baseline("# metric: LPIPS\n# invert: true\ninstance_id,model_name,value\na,m1,0.3\n", "x").unwrap();
        let b = parse_baseline("# metric: LPIPS\ninstance_id,model_name,value\nb,m1,0.3\n", "x").unwrap();
        assert!(matches!(
            attach_baselines(std::slice::from_ref(&m), &[a.clone(), b]),
            Err(DatasetError::MixedSignFlag { .. })
        ));
        assert!(matches!(
            attach_baselines(std::slice::from_ref(&m), &[a.clone(), a]),
            Err(DatasetError::DuplicateBaselineRow { .. })
        ));
    }
}
