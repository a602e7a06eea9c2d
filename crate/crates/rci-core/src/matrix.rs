//! Per-item per-region score matrix.
//!
//! `EvalMatrix` sits between raw cached answers and the aggregate indices:
//! every (item, region) cell holds one score, already averaged across
//! repetitions. FIP and MPP are means over its rows.

use std::collections::BTreeMap;

use crate::client::InferenceRecord;
use crate::grid::{GridSpec, RegionKey};
use crate::manifest::BenchmarkManifest;
use crate::scoring::{score_item, ItemScore, ScorerId, ScoringError};

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix needs at least one item")]
    Empty,
    #[error("matrix has no granularity n={n}")]
    UnknownGranularity { n: u32 },
    #[error("matrix shape invalid: {detail}")]
    Shape { detail: String },
    #[error("{count} cell(s) missing from inference records, first: {first}")]
    MissingCells { count: usize, first: String },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    manifest_name: String,
    model_id: String,
    item_ids: Vec<String>,
    full_scores: Vec<ItemScore>,
    /// Per granularity n, item-major rows of n*n patch scores.
    patch_scores: BTreeMap<u32, Vec<Vec<ItemScore>>>,
}

impl EvalMatrix {
    pub fn new(
        manifest_name: String,
        model_id: String,
        item_ids: Vec<String>,
        full_scores: Vec<ItemScore>,
        patch_scores: BTreeMap<u32, Vec<Vec<ItemScore>>>,
    ) -> Result<Self, MatrixError> {
        let n_items = item_ids.len();
        if n_items == 0 {
            return Err(MatrixError::Empty);
        }
        if full_scores.len() != n_items {
            return Err(MatrixError::Shape {
                detail: format!("{} full scores for {} items", full_scores.len(), n_items),
            });
        }
        for (&n, rows) in &patch_scores {
            if n < 2 {
                return Err(MatrixError::Shape {
                    detail: format!("granularity n={n} below 2"),
                });
            }
            if rows.len() != n_items {
                return Err(MatrixError::Shape {
                    detail: format!("n={n}: {} rows for {} items", rows.len(), n_items),
                });
            }
            let want = (n * n) as usize;
            if let Some(row) = rows.iter().find(|r| r.len() != want) {
                return Err(MatrixError::Shape {
                    detail: format!("n={n}: row of {} patch scores, expected {want}", row.len()),
                });
            }
        }
        Ok(EvalMatrix {
            manifest_name,
            model_id,
            item_ids,
            full_scores,
            patch_scores,
        })
    }

    pub fn manifest_name(&self) -> &str {
        &self.manifest_name
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn granularities(&self) -> Vec<u32> {
        self.patch_scores.keys().copied().collect()
    }

    pub fn full_scores(&self) -> &[ItemScore] {
        &self.full_scores
    }

    pub fn patch_rows(&self, n: u32) -> Result<&[Vec<ItemScore>], MatrixError> {
        self.patch_scores
            .get(&n)
            .map(Vec::as_slice)
            .ok_or(MatrixError::UnknownGranularity { n })
    }

    /// Mean full-image score (FIP).
    pub fn fip(&self) -> f64 {
        self.fip_over(&identity_indices(self.len()))
    }

    /// Mean over items of the best patch score at granularity n (MPP_n).
    pub fn mpp(&self, n: u32) -> Result<f64, MatrixError> {
        self.mpp_over(n, &identity_indices(self.len()))
    }

    /// FIP over a resampled index multiset.
    pub(crate) fn fip_over(&self, indices: &[usize]) -> f64 {
        let sum: f64 = indices.iter().map(|&i| self.full_scores[i].value()).sum();
        sum / indices.len() as f64
    }

    /// MPP_n over a resampled index multiset.
    pub(crate) fn mpp_over(&self, n: u32, indices: &[usize]) -> Result<f64, MatrixError> {
        let rows = self.patch_rows(n)?;
        let sum: f64 = indices.iter().map(|&i| best_score(&rows[i])).sum();
        Ok(sum / indices.len() as f64)
    }
}

pub(crate) fn best_score(row: &[ItemScore]) -> f64 {
    row.iter().map(|s| s.value()).fold(0.0, f64::max)
}

fn identity_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Scores cached inference records into a matrix. Repetitions of one cell are
/// averaged before anything else; a cell with no record at any repetition is
/// a missing cell.
pub fn assemble_matrix(
    manifest: &BenchmarkManifest,
    records: &[InferenceRecord],
    scorer: ScorerId,
    grids: &[GridSpec],
) -> Result<EvalMatrix, MatrixError> {
    if manifest.samples.is_empty() {
        return Err(MatrixError::Empty);
    }

    // (sample, region) -> repetition -> answer; the repetition map dedupes
    // records that differ only in cache metadata
    let mut answers: BTreeMap<(&str, RegionKey), BTreeMap<u32, &str>> = BTreeMap::new();
    for record in records {
        answers
            .entry((record.sample_id.as_str(), record.region))
            .or_default()
            .insert(record.repetition, record.answer_text.as_str());
    }

    let mut regions = vec![RegionKey::Full];
    for spec in grids {
        for patch_id in 1..=spec.patch_count() {
            regions.push(RegionKey::Patch {
                n: spec.n(),
                patch_id,
            });
        }
    }

    let mut missing: Vec<String> = Vec::new();
    let mut cell = |sample: &crate::manifest::SampleRecord,
                    region: RegionKey|
     -> Result<ItemScore, MatrixError> {
        let Some(reps) = answers.get(&(sample.id.as_str(), region)) else {
            missing.push(format!("({:?}, {region})", sample.id));
            return Ok(ItemScore::new(0.0)?);
        };
        let mut scores = Vec::with_capacity(reps.len());
        for answer in reps.values() {
            scores.push(score_item(answer, sample, scorer)?.value());
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(ItemScore::new(mean)?)
    };

    let mut full_scores = Vec::with_capacity(manifest.samples.len());
    let mut patch_scores: BTreeMap<u32, Vec<Vec<ItemScore>>> = BTreeMap::new();
    for sample in &manifest.samples {
        full_scores.push(cell(sample, RegionKey::Full)?);
        for spec in grids {
            let mut row = Vec::with_capacity(spec.patch_count() as usize);
            for patch_id in 1..=spec.patch_count() {
                row.push(cell(
                    sample,
                    RegionKey::Patch {
                        n: spec.n(),
                        patch_id,
                    },
                )?);
            }
            patch_scores.entry(spec.n()).or_default().push(row);
        }
    }

    if !missing.is_empty() {
        return Err(MatrixError::MissingCells {
            count: missing.len(),
            first: missing[0].clone(),
        });
    }

    EvalMatrix::new(
        manifest.name.clone(),
        records
            .first()
            .map(|r| r.model_id.clone())
            .unwrap_or_default(),
        manifest.samples.iter().map(|s| s.id.clone()).collect(),
        full_scores,
        patch_scores,
    )
}
