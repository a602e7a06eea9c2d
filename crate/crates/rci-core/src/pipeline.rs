//! End-to-end audit orchestration shared by the CLI and integration tests.
//!
//! `run_audit` drives inference (oracle or endpoint), scoring, index
//! computation, and artifact writing from one config. `run_score` replays a
//! warm cache through the scorer without touching any model, which makes
//! scorer A/B comparisons cheap and exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{
    plan_cells, run_inference_plan, ClientError, EndpointClient, InferenceCache, InferenceRecord,
    ModelKind, ModelRef, OracleConfig, Predictor, RegionOracle,
};
use crate::engine::{BootstrapConfig, EngineError, DEFAULT_DELTA};
use crate::grid::{GridError, GridSpec, RegionKey, MAX_GRANULARITY};
use crate::heatmap::write_heatmap;
use crate::manifest::{label_stats, load_manifest, BenchmarkManifest, ManifestError};
use crate::matrix::{assemble_matrix, MatrixError};
use crate::report::{
    build_report, render_report, write_atomic, AuditReport, ReportError, ReportFormat,
};
use crate::scoring::{chance_floor, ScorerId, ScoringError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config invalid: {detail}")]
    Config { detail: String },
    #[error("oracle config does not fit the manifest: {first} ({count} problem(s))")]
    OracleMismatch { count: usize, first: String },
    #[error("cache has no full-image record for sample {sample_id:?}; run audit before score")]
    ColdCache { sample_id: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub manifest: PathBuf,
    pub model: ModelRef,
    #[serde(default = "default_grids")]
    pub grids: Vec<u32>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    /// Directory relative paths resolve against; the config file's directory
    /// after `load_config`.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_grids() -> Vec<u32> {
    vec![2, 3]
}

fn default_repetitions() -> u32 {
    1
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |detail: String| Err(PipelineError::Config { detail });
        if self.grids.is_empty() {
            return bad("grids must name at least one granularity".into());
        }
        for window in self.grids.windows(2) {
            if window[0] >= window[1] {
                return bad(format!(
                    "grids must be strictly ascending, got {:?}",
                    self.grids
                ));
            }
        }
        for &n in &self.grids {
            if !(2..=MAX_GRANULARITY).contains(&n) {
                return bad(format!(
                    "granularity {n} outside 2..={MAX_GRANULARITY}; the full image is always \
                     evaluated separately"
                ));
            }
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        Ok(())
    }

    pub fn resolved_manifest(&self) -> PathBuf {
        resolve(&self.base_dir, &self.manifest)
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.output_dir)
    }

    pub fn resolved_cache_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.cache_dir)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn load_config(path: &Path) -> Result<AuditConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config {
        detail: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut config: AuditConfig =
        serde_json::from_str(&text).map_err(|e| PipelineError::Config {
            detail: format!("{}: {e}", path.display()),
        })?;
    config.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ".".into());
    config.validate()?;
    Ok(config)
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub output_files: Vec<PathBuf>,
    pub terminal: String,
    pub any_invalid: bool,
    pub dispatched: usize,
    pub cache_hits: usize,
}

fn build_predictor(
    model: &ModelRef,
    manifest: &BenchmarkManifest,
    base_dir: &Path,
) -> Result<Box<dyn Predictor>, PipelineError> {
    match model.kind()? {
        ModelKind::Oracle { config_path } => {
            let config = OracleConfig::load(&resolve(base_dir, &config_path))?;
            let oracle = RegionOracle::new(config, manifest)?;
            let problems = oracle.validate_against(manifest);
            if let Some(first) = problems.first() {
                return Err(PipelineError::OracleMismatch {
                    count: problems.len(),
                    first: first.clone(),
                });
            }
            Ok(Box::new(oracle))
        }
        ModelKind::Endpoint { .. } => Ok(Box::new(EndpointClient::new(model)?)),
    }
}

fn grid_specs(ns: &[u32]) -> Result<Vec<GridSpec>, PipelineError> {
    Ok(ns
        .iter()
        .map(|&n| GridSpec::new(n))
        .collect::<Result<_, _>>()?)
}

fn write_artifacts(report: &AuditReport, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    let json_path = out_dir.join("report.json");
    write_atomic(&json_path, &render_report(report, ReportFormat::Json))?;
    files.push(json_path);
    let csv_path = out_dir.join("report.csv");
    write_atomic(&csv_path, &render_report(report, ReportFormat::Csv))?;
    files.push(csv_path);
    for contribution in &report.contributions {
        let path = out_dir.join(format!("heatmap_n{}.svg", contribution.n));
        write_heatmap(contribution, &path)?;
        files.push(path);
    }
    Ok(files)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    manifest: &BenchmarkManifest,
    model_id: &str,
    records: &[InferenceRecord],
    grids: &[GridSpec],
    delta: f64,
    bootstrap: Option<BootstrapConfig>,
    repetitions: u32,
    out_dir: &Path,
    dispatched: usize,
    cache_hits: usize,
) -> Result<AuditOutcome, PipelineError> {
    let matrix = assemble_matrix(manifest, records, manifest.scorer, grids)?;
    let stats = label_stats(manifest);
    let chance = chance_floor(manifest, &stats)?;
    let ns: Vec<u32> = grids.iter().map(|g| g.n()).collect();
    let report = build_report(
        manifest,
        model_id,
        &matrix,
        &ns,
        chance,
        delta,
        bootstrap,
        repetitions,
    )?;
    let output_files = write_artifacts(&report, out_dir)?;
    let terminal = String::from_utf8(render_report(&report, ReportFormat::Terminal))
        .expect("terminal rendering is utf-8");
    let any_invalid = report.results.iter().any(|r| !r.valid);
    Ok(AuditOutcome {
        report,
        output_files,
        terminal,
        any_invalid,
        dispatched,
        cache_hits,
    })
}

/// Full audit: inference plan (cache-aware), scoring, indices, artifacts.
pub fn run_audit(config: &AuditConfig) -> Result<AuditOutcome, PipelineError> {
    config.validate()?;
    let manifest = load_manifest(&config.resolved_manifest())?;
    let grids = grid_specs(&config.grids)?;
    let predictor = build_predictor(&config.model, &manifest, &config.base_dir)?;
    let mut cache = InferenceCache::open(
        &config.resolved_cache_dir(),
        &config.model.model_id,
        &manifest.name,
    )?;
    let outcome = run_inference_plan(
        &config.model,
        predictor.as_ref(),
        &manifest,
        &grids,
        config.repetitions,
        &mut cache,
    )?;
    finish(
        &manifest,
        &config.model.model_id,
        &outcome.records,
        &grids,
        config.delta,
        config.bootstrap,
        config.repetitions,
        &config.resolved_output_dir(),
        outcome.dispatched,
        outcome.cache_hits,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub manifest: PathBuf,
    pub model_id: String,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub scorer_override: Option<ScorerId>,
    pub grids: Vec<u32>,
    pub delta: f64,
    pub bootstrap: Option<BootstrapConfig>,
    /// Repetition count to expect in the cache; probed from the cache when
    /// absent.
    pub repetitions: Option<u32>,
}

/// Re-scores a warm cache without model access. The cache must cover the
/// whole plan for the requested grids.
pub fn run_score(request: &ScoreRequest) -> Result<AuditOutcome, PipelineError> {
    let mut manifest = load_manifest(&request.manifest)?;
    if let Some(scorer) = request.scorer_override {
        if !scorer.compatible_with(manifest.task_type) {
            return Err(PipelineError::Config {
                detail: format!(
                    "scorer {scorer} is incompatible with task type {}",
                    manifest.task_type.as_str()
                ),
            });
        }
        manifest.scorer = scorer;
    }
    let grids = grid_specs(&request.grids)?;
    let cache = InferenceCache::open(&request.cache_dir, &request.model_id, &manifest.name)?;

    let repetitions = match request.repetitions {
        Some(r) if r > 0 => r,
        Some(_) => {
            return Err(PipelineError::Config {
                detail: "repetitions must be at least 1".into(),
            })
        }
        None => probe_repetitions(&cache, &request.model_id, &manifest)?,
    };

    let plan = plan_cells(&request.model_id, &manifest, &grids, repetitions);
    let total = plan.len();
    let mut records = Vec::with_capacity(total);
    let mut missing: Option<String> = None;
    let mut missing_count = 0usize;
    for cell in plan {
        match cache.get(&cell.cache_key) {
            Some(record) => records.push(record.clone()),
            None => {
                missing_count += 1;
                missing.get_or_insert(format!("({:?}, {})", cell.sample_id, cell.region));
            }
        }
    }
    if let Some(first) = missing {
        return Err(MatrixError::MissingCells {
            count: missing_count,
            first,
        }
        .into());
    }

    finish(
        &manifest,
        &request.model_id,
        &records,
        &grids,
        request.delta,
        request.bootstrap,
        repetitions,
        &request.output_dir,
        0,
        total,
    )
}

/// Counts consecutive repetitions cached for the first sample's full-image
/// cell; the plan is uniform, so that count is the run's repetition count.
fn probe_repetitions(
    cache: &InferenceCache,
    model_id: &str,
    manifest: &BenchmarkManifest,
) -> Result<u32, PipelineError> {
    let sample = manifest.samples.first().ok_or(MatrixError::Empty)?;
    let prompt = crate::client::build_prompt(sample, manifest.task_type);
    let mut repetitions = 0u32;
    while cache
        .get(&crate::client::cache_key(
            model_id,
            &sample.id,
            RegionKey::Full,
            &prompt,
            repetitions,
        ))
        .is_some()
    {
        repetitions += 1;
    }
    if repetitions == 0 {
        return Err(PipelineError::ColdCache {
            sample_id: sample.id.clone(),
        });
    }
    Ok(repetitions)
}
