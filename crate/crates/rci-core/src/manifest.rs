//! Benchmark manifests: a line-delimited JSON header plus one sample per line.
//!
//! The first line carries the dataset-level fields (schema tag, name, task
//! type, scorer, image root), every following non-empty line is one
//! [`SampleRecord`]. `image_root` is resolved relative to the manifest file's
//! directory, and every `image_ref` must resolve to an existing PNG or JPEG
//! under it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scoring::{self, ScorerId};

pub const MANIFEST_SCHEMA: &str = "rci-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskType {
    Mcq,
    YesNo,
    OpenEnded,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Mcq => "MCQ",
            TaskType::YesNo => "YES_NO",
            TaskType::OpenEnded => "OPEN_ENDED",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One benchmark item. `options` is only populated for MCQ tasks; the MCQ
/// ground truth is stored canonically as an option label ("A".."Z").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_ref: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub ground_truths: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkManifest {
    pub name: String,
    pub task_type: TaskType,
    pub scorer: ScorerId,
    /// As written in the file; resolve through [`BenchmarkManifest::resolved_image_root`].
    pub image_root: PathBuf,
    pub declared_chance: Option<f64>,
    pub samples: Vec<SampleRecord>,
    /// Directory the manifest was loaded from; "." for in-memory manifests.
    pub base_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    schema: String,
    name: String,
    task_type: TaskType,
    scorer: ScorerId,
    image_root: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declared_chance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub sample_id: Option<String>,
    pub message: String,
}

impl Violation {
    fn dataset(message: impl Into<String>) -> Self {
        Violation {
            sample_id: None,
            message: message.into(),
        }
    }

    fn sample(id: &str, message: impl Into<String>) -> Self {
        Violation {
            sample_id: Some(id.to_string()),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sample_id {
            Some(id) => write!(f, "sample {:?}: {}", id, self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid JSON: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest is empty, expected a header line")]
    MissingHeader,
    #[error("unsupported manifest schema {found:?}, expected {MANIFEST_SCHEMA:?}")]
    UnsupportedSchema { found: String },
    #[error("manifest invalid: {}", format_violations(.violations))]
    Invalid { violations: Vec<Violation> },
}

fn format_violations(violations: &[Violation]) -> String {
    let shown: Vec<String> = violations.iter().take(8).map(|v| v.to_string()).collect();
    let mut out = shown.join("; ");
    if violations.len() > 8 {
        out.push_str(&format!("; and {} more", violations.len() - 8));
    }
    out
}

impl BenchmarkManifest {
    pub fn resolved_image_root(&self) -> PathBuf {
        if self.image_root.is_absolute() {
            self.image_root.clone()
        } else {
            self.base_dir.join(&self.image_root)
        }
    }

    pub fn resolve_image(&self, sample: &SampleRecord) -> PathBuf {
        self.resolved_image_root().join(&sample.image_ref)
    }
}

/// Parses, canonicalizes, and validates a manifest file. Any violation found
/// by [`validate_manifest`] turns into [`ManifestError::Invalid`].
pub fn load_manifest(path: &Path) -> Result<BenchmarkManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_no, header_line) = lines.next().ok_or(ManifestError::MissingHeader)?;
    let header: HeaderLine =
        serde_json::from_str(header_line).map_err(|source| ManifestError::Parse {
            path: path.to_path_buf(),
            line: header_no + 1,
            source,
        })?;
    if header.schema != MANIFEST_SCHEMA {
        return Err(ManifestError::UnsupportedSchema {
            found: header.schema,
        });
    }

    let mut samples = Vec::new();
    for (no, line) in lines {
        let sample: SampleRecord =
            serde_json::from_str(line).map_err(|source| ManifestError::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                source,
            })?;
        samples.push(sample);
    }

    let mut manifest = BenchmarkManifest {
        name: header.name,
        task_type: header.task_type,
        scorer: header.scorer,
        image_root: PathBuf::from(header.image_root),
        declared_chance: header.declared_chance,
        samples,
        base_dir,
    };
    canonicalize_mcq_ground_truths(&mut manifest);

    let violations = validate_manifest(&manifest);
    if violations.is_empty() {
        Ok(manifest)
    } else {
        Err(ManifestError::Invalid { violations })
    }
}

/// Writes the line-delimited form. `load_manifest` of the result is identity
/// for manifests that came out of `load_manifest`.
pub fn serialize_manifest(manifest: &BenchmarkManifest) -> Result<String, serde_json::Error> {
    let header = HeaderLine {
        schema: MANIFEST_SCHEMA.to_string(),
        name: manifest.name.clone(),
        task_type: manifest.task_type,
        scorer: manifest.scorer,
        image_root: manifest.image_root.to_string_lossy().into_owned(),
        declared_chance: manifest.declared_chance,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for sample in &manifest.samples {
        out.push_str(&serde_json::to_string(sample)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(manifest: &BenchmarkManifest, path: &Path) -> Result<(), ManifestError> {
    let text = serialize_manifest(manifest).map_err(|source| ManifestError::Parse {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.flush()
    };
    write().map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Rewrites MCQ ground truths given as option text into option labels.
/// Unresolvable ground truths are left alone for validation to flag.
fn canonicalize_mcq_ground_truths(manifest: &mut BenchmarkManifest) {
    if manifest.task_type != TaskType::Mcq {
        return;
    }
    for sample in &mut manifest.samples {
        if sample.ground_truths.len() != 1 || sample.options.is_empty() {
            continue;
        }
        if let Some(label) = canonical_mcq_label(&sample.ground_truths[0], &sample.options) {
            sample.ground_truths[0] = label.to_string();
        }
    }
}

/// Maps a ground truth (label or option text) to its option label.
pub fn canonical_mcq_label(ground_truth: &str, options: &[String]) -> Option<char> {
    let trimmed = ground_truth.trim();
    if trimmed.len() == 1 {
        let c = trimmed.chars().next().unwrap().to_ascii_uppercase();
        if c.is_ascii_uppercase() && ((c as usize) - ('A' as usize)) < options.len() {
            return Some(c);
        }
    }
    if let Some(i) = options.iter().position(|o| o == trimmed) {
        return Some(label_for(i));
    }
    let normalized = scoring::normalize_answer(trimmed);
    options
        .iter()
        .position(|o| scoring::normalize_answer(o) == normalized)
        .map(label_for)
}

pub fn label_for(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// Enumerates every invariant violation. Empty result iff `load_manifest`
/// would accept the serialized form of this manifest.
pub fn validate_manifest(manifest: &BenchmarkManifest) -> Vec<Violation> {
    let mut violations = Vec::new();

    if manifest.name.trim().is_empty() {
        violations.push(Violation::dataset("manifest name is empty"));
    }
    if manifest.samples.is_empty() {
        violations.push(Violation::dataset("manifest has no samples"));
    }
    if !manifest.scorer.compatible_with(manifest.task_type) {
        violations.push(Violation::dataset(format!(
            "scorer {} is incompatible with task type {}",
            manifest.scorer, manifest.task_type
        )));
    }
    if let Some(chance) = manifest.declared_chance {
        if !(0.0..=1.0).contains(&chance) {
            violations.push(Violation::dataset(format!(
                "declared_chance {chance} outside [0, 1]"
            )));
        } else if manifest.task_type == TaskType::YesNo && chance < 0.5 {
            violations.push(Violation::dataset(format!(
                "declared_chance {chance} below the 0.5 floor for YES_NO"
            )));
        }
    }

    let mut seen = BTreeSet::new();
    let image_root = manifest.resolved_image_root();
    let mut missing_images = Vec::new();

    for sample in &manifest.samples {
        let id = sample.id.as_str();
        if id.is_empty() {
            violations.push(Violation::dataset("sample with empty id"));
        }
        if !seen.insert(id) {
            violations.push(Violation::sample(id, "duplicate sample id"));
        }
        if sample.ground_truths.is_empty() {
            violations.push(Violation::sample(id, "ground_truths is empty"));
        }

        match manifest.task_type {
            TaskType::Mcq => {
                if sample.options.len() < 2 {
                    violations.push(Violation::sample(id, "MCQ sample needs at least 2 options"));
                } else if sample.options.len() > 26 {
                    violations.push(Violation::sample(
                        id,
                        "MCQ sample has more than 26 options, labels run A..Z",
                    ));
                }
                if sample.ground_truths.len() != 1 {
                    violations.push(Violation::sample(
                        id,
                        "MCQ sample must carry exactly one ground truth",
                    ));
                } else if !sample.options.is_empty() {
                    let gt = &sample.ground_truths[0];
                    let is_label = gt.len() == 1
                        && gt
                            .chars()
                            .next()
                            .map(|c| {
                                c.is_ascii_uppercase()
                                    && ((c as usize) - ('A' as usize)) < sample.options.len()
                            })
                            .unwrap_or(false);
                    if !is_label {
                        violations.push(Violation::sample(
                            id,
                            format!("ground truth {gt:?} matches no option label or text"),
                        ));
                    }
                }
            }
            TaskType::YesNo => {
                for gt in &sample.ground_truths {
                    let norm = scoring::normalize_answer(gt);
                    if norm != "yes" && norm != "no" {
                        violations.push(Violation::sample(
                            id,
                            format!("ground truth {gt:?} does not normalize to yes or no"),
                        ));
                    }
                }
            }
            TaskType::OpenEnded => {}
        }
        if manifest.task_type != TaskType::Mcq && !sample.options.is_empty() {
            violations.push(Violation::sample(
                id,
                format!("options present on a {} sample", manifest.task_type),
            ));
        }

        match check_image_ref(&sample.image_ref) {
            Err(message) => violations.push(Violation::sample(id, message)),
            Ok(()) => {
                if !image_root.join(&sample.image_ref).is_file() {
                    missing_images.push((id.to_string(), sample.image_ref.clone()));
                }
            }
        }
    }

    for (id, image_ref) in missing_images {
        violations.push(Violation {
            sample_id: Some(id),
            message: format!(
                "image {image_ref:?} not found under {}",
                image_root.display()
            ),
        });
    }
    violations
}

fn check_image_ref(image_ref: &str) -> Result<(), String> {
    if image_ref.is_empty() {
        return Err("image_ref is empty".to_string());
    }
    let path = Path::new(image_ref);
    if path.is_absolute() {
        return Err(format!(
            "image_ref {image_ref:?} must be relative to image_root"
        ));
    }
    if path.components().any(|c| matches!(c, Component::ParentDir)) {
        return Err(format!("image_ref {image_ref:?} escapes image_root"));
    }
    let ok_ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            e == "png" || e == "jpg" || e == "jpeg"
        })
        .unwrap_or(false);
    if !ok_ext {
        return Err(format!("image_ref {image_ref:?} is not a PNG or JPEG path"));
    }
    Ok(())
}

/// Ground-truth frequency summary used by chance-floor estimation.
/// Frequencies are over the normalized first ground truth of each item;
/// majority ties break toward the lexicographically smallest answer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub item_count: usize,
    pub frequencies: BTreeMap<String, usize>,
    pub majority_answer: String,
    pub majority_fraction: f64,
    /// Mean of 1/|options| across items; MCQ manifests only.
    pub mean_inverse_option_count: Option<f64>,
}

pub fn label_stats(manifest: &BenchmarkManifest) -> LabelStats {
    let mut frequencies: BTreeMap<String, usize> = BTreeMap::new();
    for sample in &manifest.samples {
        let key = sample
            .ground_truths
            .first()
            .map(|gt| scoring::normalize_answer(gt))
            .unwrap_or_default();
        *frequencies.entry(key).or_insert(0) += 1;
    }
    let item_count = manifest.samples.len();
    let (majority_answer, majority_count) = frequencies
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, v)| (k.clone(), *v))
        .unwrap_or_default();
    let majority_fraction = if item_count == 0 {
        0.0
    } else {
        majority_count as f64 / item_count as f64
    };
    let mean_inverse_option_count = if manifest.task_type == TaskType::Mcq && item_count > 0 {
        let sum: f64 = manifest
            .samples
            .iter()
            .map(|s| 1.0 / (s.options.len().max(1) as f64))
            .sum();
        Some(sum / item_count as f64)
    } else {
        None
    };
    LabelStats {
        item_count,
        frequencies,
        majority_answer,
        majority_fraction,
        mean_inverse_option_count,
    }
}
