//! Deterministic geometric test double for a vision model.
//!
//! Each sample gets a set of answer boxes in full-image pixel coordinates.
//! The oracle answers the first ground truth iff every box has at least
//! `coverage_threshold` of its area inside the queried region; otherwise it
//! answers the configured distractor. Requiring all boxes jointly makes
//! items that no single patch can solve. `full_image_behavior` decides the
//! whole-image query: WRONG yields the distractor even though coverage is
//! trivially complete, which models questions a full view cannot answer.
//!
//! An entry with no boxes marks an unanswerable item: the oracle answers the
//! distractor for every region including the full image.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ClientError, InferenceRequest, Prediction, Predictor, Region};
use crate::grid::PatchRegion;
use crate::manifest::BenchmarkManifest;
use crate::scoring::normalize_answer;

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FullImageBehavior {
    Correct,
    Wrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelBox {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn intersection_area(&self, region: &PatchRegion) -> u64 {
        let x0 = self.x.max(region.x) as u64;
        let y0 = self.y.max(region.y) as u64;
        let x1 = ((self.x + self.width).min(region.x + region.width)) as u64;
        let y1 = ((self.y + self.height).min(region.y + region.height)) as u64;
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    /// Fraction of this box inside the region.
    pub fn coverage(&self, region: &PatchRegion) -> f64 {
        let area = self.area();
        if area == 0 {
            return 0.0;
        }
        self.intersection_area(region) as f64 / area as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answer_boxes: Vec<PixelBox>,
    #[serde(default = "default_threshold")]
    pub coverage_threshold: f64,
    pub full_image_behavior: FullImageBehavior,
    pub wrong_answer: String,
}

fn default_threshold() -> f64 {
    DEFAULT_COVERAGE_THRESHOLD
}

/// Raw on-disk shape; `answer_box` is accepted as sugar for a single-element
/// `answer_boxes`.
#[derive(Debug, Deserialize)]
struct RawEntry {
    #[serde(default)]
    answer_box: Option<PixelBox>,
    #[serde(default)]
    answer_boxes: Vec<PixelBox>,
    #[serde(default = "default_threshold")]
    coverage_threshold: f64,
    full_image_behavior: FullImageBehavior,
    wrong_answer: String,
}

/// JSON document keyed by sample id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OracleConfig {
    pub entries: BTreeMap<String, OracleEntry>,
}

impl OracleConfig {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = fs::read_to_string(path).map_err(|e| ClientError::OracleConfig {
            detail: format!("failed to read {}: {e}", path.display()),
        })?;
        let raw: BTreeMap<String, RawEntry> =
            serde_json::from_str(&text).map_err(|e| ClientError::OracleConfig {
                detail: format!("{}: {e}", path.display()),
            })?;
        let mut entries = BTreeMap::new();
        for (id, raw_entry) in raw {
            let mut boxes = raw_entry.answer_boxes;
            if let Some(single) = raw_entry.answer_box {
                boxes.insert(0, single);
            }
            entries.insert(
                id,
                OracleEntry {
                    answer_boxes: boxes,
                    coverage_threshold: raw_entry.coverage_threshold,
                    full_image_behavior: raw_entry.full_image_behavior,
                    wrong_answer: raw_entry.wrong_answer,
                },
            );
        }
        Ok(OracleConfig { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        let mut text =
            serde_json::to_string_pretty(&self).map_err(|e| ClientError::OracleConfig {
                detail: e.to_string(),
            })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| ClientError::OracleConfig {
            detail: format!("failed to write {}: {e}", path.display()),
        })
    }
}

#[derive(Debug)]
pub struct RegionOracle {
    config: OracleConfig,
    answers: BTreeMap<String, String>,
    calls: AtomicU64,
}

impl RegionOracle {
    /// Binds a config to a manifest; correct answers come from each sample's
    /// first ground truth.
    pub fn new(config: OracleConfig, manifest: &BenchmarkManifest) -> Result<Self, ClientError> {
        for (id, entry) in &config.entries {
            if !(0.0 < entry.coverage_threshold && entry.coverage_threshold <= 1.0) {
                return Err(ClientError::OracleConfig {
                    detail: format!(
                        "sample {id:?}: coverage_threshold {} outside (0, 1]",
                        entry.coverage_threshold
                    ),
                });
            }
            if entry
                .answer_boxes
                .iter()
                .any(|b| b.width == 0 || b.height == 0)
            {
                return Err(ClientError::OracleConfig {
                    detail: format!("sample {id:?}: zero-area answer box"),
                });
            }
            if entry.answer_boxes.is_empty()
                && entry.full_image_behavior == FullImageBehavior::Correct
            {
                return Err(ClientError::OracleConfig {
                    detail: format!(
                        "sample {id:?}: no answer boxes but full_image_behavior CORRECT"
                    ),
                });
            }
        }

        let mut answers = BTreeMap::new();
        for sample in &manifest.samples {
            if let Some(entry) = config.entries.get(&sample.id) {
                let truth = sample.ground_truths.first().cloned().unwrap_or_default();
                let wrong_norm = normalize_answer(&entry.wrong_answer);
                if sample
                    .ground_truths
                    .iter()
                    .any(|gt| normalize_answer(gt) == wrong_norm)
                {
                    return Err(ClientError::OracleConfig {
                        detail: format!(
                            "sample {:?}: wrong_answer {:?} normalizes equal to a ground truth",
                            sample.id, entry.wrong_answer
                        ),
                    });
                }
                answers.insert(sample.id.clone(), truth);
            }
        }
        Ok(RegionOracle {
            config,
            answers,
            calls: AtomicU64::new(0),
        })
    }

    /// Manifest-level checks that need the image files: every sample covered
    /// by the config and every box inside its image's bounds.
    pub fn validate_against(&self, manifest: &BenchmarkManifest) -> Vec<String> {
        let mut problems = Vec::new();
        for sample in &manifest.samples {
            let Some(entry) = self.config.entries.get(&sample.id) else {
                problems.push(format!("sample {:?} missing from oracle config", sample.id));
                continue;
            };
            let path = manifest.resolve_image(sample);
            match image::image_dimensions(&path) {
                Ok((w, h)) => {
                    for (i, b) in entry.answer_boxes.iter().enumerate() {
                        if b.x + b.width > w || b.y + b.height > h {
                            problems.push(format!(
                                "sample {:?}: box {i} exceeds image bounds {w}x{h}",
                                sample.id
                            ));
                        }
                    }
                }
                Err(e) => problems.push(format!(
                    "sample {:?}: cannot read {}: {e}",
                    sample.id,
                    path.display()
                )),
            }
        }
        problems
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Predictor for RegionOracle {
    fn predict(&self, request: &InferenceRequest) -> Result<Prediction, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let entry = self.config.entries.get(&request.sample_id).ok_or_else(|| {
            ClientError::OracleMissingSample {
                sample_id: request.sample_id.clone(),
            }
        })?;
        let truth = self.answers.get(&request.sample_id).ok_or_else(|| {
            ClientError::OracleMissingSample {
                sample_id: request.sample_id.clone(),
            }
        })?;

        let solvable = !entry.answer_boxes.is_empty();
        let correct = match &request.region {
            Region::Full => solvable && entry.full_image_behavior == FullImageBehavior::Correct,
            Region::Patch { region, .. } => {
                solvable
                    && entry
                        .answer_boxes
                        .iter()
                        .all(|b| b.coverage(region) >= entry.coverage_threshold)
            }
        };
        let answer_text = if correct {
            truth.clone()
        } else {
            entry.wrong_answer.clone()
        };
        Ok(Prediction {
            answer_text,
            attempts: 1,
        })
    }
}
