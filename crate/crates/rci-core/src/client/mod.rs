//! Model access: prompt construction, inference dispatch, and caching.
//!
//! A model is either a remote vision-chat endpoint or a deterministic
//! geometric oracle (model_id "oracle:<config-path>"). Every (sample, region,
//! repetition) cell is keyed into an append-only JSONL cache, so re-running a
//! plan with a warm cache dispatches nothing.

pub mod cache;
pub mod endpoint;
pub mod oracle;
pub mod prompt;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{self, GridError, GridSpec, PatchRegion, RegionKey};
use crate::manifest::{BenchmarkManifest, TaskType};

pub use cache::InferenceCache;
pub use endpoint::EndpointClient;
pub use oracle::{
    FullImageBehavior, OracleConfig, OracleEntry, PixelBox, RegionOracle,
    DEFAULT_COVERAGE_THRESHOLD,
};
pub use prompt::{build_prompt, PROMPT_TEMPLATE_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("model_id {model_id:?} uses the oracle scheme but an endpoint is also configured")]
    AmbiguousModel { model_id: String },
    #[error("model_id {model_id:?} is not an oracle reference and no endpoint is configured")]
    MissingEndpoint { model_id: String },
    #[error("max_in_flight must be at least 1")]
    ZeroInFlight,
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("auth environment variable {var:?} is not set")]
    MissingAuthEnv { var: String },
    #[error("endpoint request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("endpoint returned status {status}: {detail}")]
    HttpStatus { status: u16, detail: String },
    #[error("endpoint response missing choices[0].message.content: {detail}")]
    MalformedResponse { detail: String },
    #[error("request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("oracle config has no entry for sample {sample_id:?}")]
    OracleMissingSample { sample_id: String },
    #[error("oracle config invalid: {detail}")]
    OracleConfig { detail: String },
    #[error("cache conflict: key {key} already holds a different answer")]
    CacheConflict { key: String },
    #[error("{path}:{line}: bad cache record: {detail}")]
    CacheParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("cache io on {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to read image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(
        "inference plan incomplete: {failed} cell(s) failed, {unattempted} not attempted; \
         first failure at {first_cell}: {first_error}"
    )]
    PartialCoverage {
        failed: usize,
        unattempted: usize,
        first_cell: String,
        first_error: String,
    },
}

/// How to reach a model. Exactly one of the two shapes is valid: an
/// "oracle:<path>" model_id with no endpoint, or a plain model_id with one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

pub const ORACLE_SCHEME: &str = "oracle:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    Oracle { config_path: PathBuf },
    Endpoint { base_url: String },
}

impl ModelRef {
    pub fn oracle(config_path: &str) -> ModelRef {
        ModelRef {
            model_id: format!("{ORACLE_SCHEME}{config_path}"),
            endpoint: None,
            auth_env: None,
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn kind(&self) -> Result<ModelKind, ClientError> {
        if self.max_in_flight == 0 {
            return Err(ClientError::ZeroInFlight);
        }
        match (self.model_id.strip_prefix(ORACLE_SCHEME), &self.endpoint) {
            (Some(path), None) => Ok(ModelKind::Oracle {
                config_path: PathBuf::from(path),
            }),
            (Some(_), Some(_)) => Err(ClientError::AmbiguousModel {
                model_id: self.model_id.clone(),
            }),
            (None, Some(base_url)) => Ok(ModelKind::Endpoint {
                base_url: base_url.clone(),
            }),
            (None, None) => Err(ClientError::MissingEndpoint {
                model_id: self.model_id.clone(),
            }),
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageEncoding {
    Png,
    Jpeg,
}

impl ImageEncoding {
    pub fn mime(self) -> &'static str {
        match self {
            ImageEncoding::Png => "image/png",
            ImageEncoding::Jpeg => "image/jpeg",
        }
    }
}

/// Geometry of the queried region: the whole image or one grid patch with
/// its pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Full,
    Patch { n: u32, region: PatchRegion },
}

impl Region {
    pub fn key(&self) -> RegionKey {
        match self {
            Region::Full => RegionKey::Full,
            Region::Patch { n, region } => RegionKey::Patch {
                n: *n,
                patch_id: region.patch_id,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceRequest {
    pub sample_id: String,
    pub region: Region,
    pub image_bytes: Vec<u8>,
    pub image_encoding: ImageEncoding,
    pub prompt: String,
    pub task_type: TaskType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub answer_text: String,
    pub attempts: u32,
}

/// One cached model answer. `cache_key` is the unique index; the remaining
/// fields keep the JSONL humanly auditable and let the matrix assembler map
/// records back to cells without recomputing keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub cache_key: String,
    pub model_id: String,
    pub sample_id: String,
    pub region: RegionKey,
    pub repetition: u32,
    pub answer_text: String,
    pub created_at: String,
    pub attempt_count: u32,
}

pub trait Predictor: Send + Sync {
    fn predict(&self, request: &InferenceRequest) -> Result<Prediction, ClientError>;
}

/// Stable cell key: sha256 over the template version, model id, sample id,
/// region descriptor, prompt digest, and repetition index. Any change to the
/// prompt template or its version yields distinct keys.
pub fn cache_key(
    model_id: &str,
    sample_id: &str,
    region: RegionKey,
    prompt: &str,
    repetition: u32,
) -> String {
    let prompt_digest = hex::encode(Sha256::digest(prompt.as_bytes()));
    let material = format!(
        "{PROMPT_TEMPLATE_VERSION}\n{model_id}\n{sample_id}\n{region}\n{prompt_digest}\n{repetition}"
    );
    hex::encode(Sha256::digest(material.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PlanCell {
    sample_index: usize,
    region: RegionKey,
    repetition: u32,
}

impl fmt::Display for PlanCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sample#{} {} rep{}",
            self.sample_index, self.region, self.repetition
        )
    }
}

/// Outcome of a plan run. `records` covers every planned cell in plan order;
/// `dispatched` counts predictor invocations made by this run (zero on a
/// fully warm cache).
#[derive(Debug)]
pub struct PlanOutcome {
    pub records: Vec<InferenceRecord>,
    pub dispatched: usize,
    pub cache_hits: usize,
}

/// One cell of the inference plan with its cache key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedCell {
    pub sample_id: String,
    pub region: RegionKey,
    pub repetition: u32,
    pub cache_key: String,
}

/// Enumerates the full plan in dispatch order: per sample, the full image,
/// then each grid's patches in id order, with repetitions innermost.
pub fn plan_cells(
    model_id: &str,
    manifest: &BenchmarkManifest,
    grids: &[GridSpec],
    repetitions: u32,
) -> Vec<PlannedCell> {
    let (plan, keys) = build_plan(model_id, manifest, grids, repetitions);
    plan.into_iter()
        .zip(keys)
        .map(|(cell, cache_key)| PlannedCell {
            sample_id: manifest.samples[cell.sample_index].id.clone(),
            region: cell.region,
            repetition: cell.repetition,
            cache_key,
        })
        .collect()
}

fn build_plan(
    model_id: &str,
    manifest: &BenchmarkManifest,
    grids: &[GridSpec],
    repetitions: u32,
) -> (Vec<PlanCell>, Vec<String>) {
    let mut plan = Vec::new();
    let mut keys = Vec::new();
    for (sample_index, sample) in manifest.samples.iter().enumerate() {
        let prompt = build_prompt(sample, manifest.task_type);
        let mut regions = vec![RegionKey::Full];
        for spec in grids {
            for patch_id in 1..=spec.patch_count() {
                regions.push(RegionKey::Patch {
                    n: spec.n(),
                    patch_id,
                });
            }
        }
        for region in regions {
            for repetition in 0..repetitions {
                plan.push(PlanCell {
                    sample_index,
                    region,
                    repetition,
                });
                keys.push(cache_key(model_id, &sample.id, region, &prompt, repetition));
            }
        }
    }
    (plan, keys)
}

/// Runs the full inference plan: every sample x ({full} + every patch of
/// every grid) x repetitions. Cached cells are skipped; fresh answers are
/// appended to the cache as they arrive, so an interrupted run loses at most
/// in-flight work. The first exhausted failure stops dispatch and surfaces as
/// `PartialCoverage`; completed answers stay cached.
pub fn run_inference_plan(
    model: &ModelRef,
    predictor: &dyn Predictor,
    manifest: &BenchmarkManifest,
    grids: &[GridSpec],
    repetitions: u32,
    cache: &mut InferenceCache,
) -> Result<PlanOutcome, ClientError> {
    model.kind()?;
    if repetitions == 0 {
        return Err(ClientError::ZeroRepetitions);
    }

    let (plan, keys) = build_plan(&model.model_id, manifest, grids, repetitions);

    let todo: Vec<usize> = (0..plan.len())
        .filter(|&i| cache.get(&keys[i]).is_none())
        .collect();
    let cache_hits = plan.len() - todo.len();
    let dispatched = todo.len();

    if !todo.is_empty() {
        execute_cells(
            model, predictor, manifest, grids, &plan, &keys, &todo, cache,
        )?;
    }

    let mut records = Vec::with_capacity(plan.len());
    for key in &keys {
        // every planned key is present now: hits were present up front and
        // execute_cells errors unless all dispatched cells landed
        records.push(
            cache
                .get(key)
                .expect("planned cell missing after run")
                .clone(),
        );
    }
    Ok(PlanOutcome {
        records,
        dispatched,
        cache_hits,
    })
}

#[allow(clippy::too_many_arguments)]
fn execute_cells(
    model: &ModelRef,
    predictor: &dyn Predictor,
    manifest: &BenchmarkManifest,
    grids: &[GridSpec],
    plan: &[PlanCell],
    keys: &[String],
    todo: &[usize],
    cache: &mut InferenceCache,
) -> Result<(), ClientError> {
    let workers = model.max_in_flight.min(todo.len()).max(1);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Prediction, ClientError>)>();

    let mut landed = BTreeSet::new();
    let mut failed = 0usize;
    let mut first_failure: Option<(usize, ClientError)> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let abort = &abort;
            scope.spawn(move || {
                let mut loaded: Option<(usize, image::DynamicImage)> = None;
                loop {
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    if slot >= todo.len() || abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let idx = todo[slot];
                    let cell = plan[idx];
                    let result = build_request(manifest, grids, cell, &mut loaded)
                        .and_then(|request| predictor.predict(&request));
                    if result.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    if tx.send((idx, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        for (idx, result) in rx {
            match result {
                Ok(prediction) => {
                    let cell = plan[idx];
                    let sample = &manifest.samples[cell.sample_index];
                    let record = InferenceRecord {
                        cache_key: keys[idx].clone(),
                        model_id: model.model_id.clone(),
                        sample_id: sample.id.clone(),
                        region: cell.region,
                        repetition: cell.repetition,
                        answer_text: prediction.answer_text,
                        created_at: now_rfc3339(),
                        attempt_count: prediction.attempts,
                    };
                    if let Err(err) = cache.append(record) {
                        abort.store(true, Ordering::SeqCst);
                        failed += 1;
                        if first_failure.is_none() {
                            first_failure = Some((idx, err));
                        }
                        continue;
                    }
                    landed.insert(idx);
                }
                Err(err) => {
                    failed += 1;
                    if first_failure.is_none() {
                        first_failure = Some((idx, err));
                    }
                }
            }
        }
    });

    if landed.len() == todo.len() {
        return Ok(());
    }
    let (first_idx, first_error) = first_failure
        .map(|(idx, err)| (plan[idx].to_string(), err.to_string()))
        .unwrap_or_else(|| ("unknown".to_string(), "no failure captured".to_string()));
    let unattempted = todo.len() - landed.len() - failed;
    Err(ClientError::PartialCoverage {
        failed,
        unattempted,
        first_cell: first_idx,
        first_error,
    })
}

fn build_request(
    manifest: &BenchmarkManifest,
    grids: &[GridSpec],
    cell: PlanCell,
    loaded: &mut Option<(usize, image::DynamicImage)>,
) -> Result<InferenceRequest, ClientError> {
    let sample = &manifest.samples[cell.sample_index];
    let path = manifest.resolve_image(sample);
    let prompt = build_prompt(sample, manifest.task_type);

    match cell.region {
        RegionKey::Full => {
            let bytes = std::fs::read(&path).map_err(|e| ClientError::Image {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            let encoding = match path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("png") => ImageEncoding::Png,
                _ => ImageEncoding::Jpeg,
            };
            Ok(InferenceRequest {
                sample_id: sample.id.clone(),
                region: Region::Full,
                image_bytes: bytes,
                image_encoding: encoding,
                prompt,
                task_type: manifest.task_type,
            })
        }
        RegionKey::Patch { n, patch_id } => {
            if loaded.as_ref().map(|(i, _)| *i) != Some(cell.sample_index) {
                let img = image::open(&path).map_err(|e| ClientError::Image {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                *loaded = Some((cell.sample_index, img));
            }
            let img = &loaded.as_ref().unwrap().1;
            let spec = grids
                .iter()
                .copied()
                .find(|g| g.n() == n)
                .unwrap_or(GridSpec::new(n)?);
            let regions = grid::grid_regions(img.width(), img.height(), spec)?;
            let region = regions[(patch_id - 1) as usize];
            let patch = grid::extract_patch(img, region)?;
            let mut bytes = Vec::new();
            patch
                .write_to(
                    &mut std::io::Cursor::new(&mut bytes),
                    image::ImageFormat::Png,
                )
                .map_err(|e| ClientError::Image {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
            Ok(InferenceRequest {
                sample_id: sample.id.clone(),
                region: Region::Patch { n, region },
                image_bytes: bytes,
                image_encoding: ImageEncoding::Png,
                prompt,
                task_type: manifest.task_type,
            })
        }
    }
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
