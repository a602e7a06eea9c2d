//! Audit report artifacts and cross-model agreement.
//!
//! The JSON report is the canonical, lossless record; CSV and terminal
//! renderings are human-facing and suppress RCI on invalid cells while the
//! JSON keeps raw fip/mpp for audit. All renderings are byte-deterministic
//! for fixed report content.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::PROMPT_TEMPLATE_VERSION;
use crate::engine::{granularity_result, BootstrapConfig, EngineError, RciResult};
use crate::manifest::BenchmarkManifest;
use crate::matrix::EvalMatrix;
use crate::scoring::{ChanceFloor, ScorerId};
use crate::spatial::{patch_contributions, PatchContribution};

pub const REPORT_SCHEMA: &str = "rci-report/1";

/// Validity flag string shared by the terminal renderer and its tests.
pub const INVALID_FLAG: &str = "INVALID (FIP \u{2264} chance+\u{394})";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("vector lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("correlation needs at least 2 points, got {got}")]
    TooShort { got: usize },
    #[error("correlation undefined for a constant vector")]
    ZeroVariance,
    #[error("model coverage mismatch: {detail}")]
    CoverageMismatch { detail: String },
    #[error("cell ({dataset}, {model}, n={n}) is invalid or has no RCI; comparison requires valid cells")]
    InvalidCell {
        dataset: String,
        model: String,
        n: u32,
    },
    #[error("report schema {found:?}, expected {REPORT_SCHEMA:?}")]
    Schema { found: String },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema: String,
    pub dataset: String,
    pub model_id: String,
    pub scorer: ScorerId,
    pub chance: ChanceFloor,
    pub repetitions: u32,
    pub prompt_template_version: String,
    pub created_at: String,
    /// One row per granularity, ascending n.
    pub results: Vec<RciResult>,
    pub contributions: Vec<PatchContribution>,
}

/// Computes every granularity row and contribution map for a scored matrix.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    manifest: &BenchmarkManifest,
    model_id: &str,
    matrix: &EvalMatrix,
    grid_ns: &[u32],
    chance: ChanceFloor,
    delta: f64,
    bootstrap: Option<BootstrapConfig>,
    repetitions: u32,
) -> Result<AuditReport, EngineError> {
    let mut results = Vec::with_capacity(grid_ns.len());
    let mut contributions = Vec::with_capacity(grid_ns.len());
    for &n in grid_ns {
        results.push(granularity_result(matrix, n, chance, delta, bootstrap)?);
        contributions.push(patch_contributions(matrix, n)?);
    }
    Ok(AuditReport {
        schema: REPORT_SCHEMA.to_string(),
        dataset: manifest.name.clone(),
        model_id: model_id.to_string(),
        scorer: manifest.scorer,
        chance,
        repetitions,
        prompt_template_version: PROMPT_TEMPLATE_VERSION.to_string(),
        created_at: crate::client::now_rfc3339(),
        results,
        contributions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Terminal,
}

pub const CSV_HEADER: &str = "dataset,model,n,fip,mpp,rci,band,valid,chance,delta_min,se_fip";

pub fn render_report(report: &AuditReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut text =
                serde_json::to_string_pretty(report).expect("report serialization is infallible");
            text.push('\n');
            text.into_bytes()
        }
        ReportFormat::Csv => render_csv(report).into_bytes(),
        ReportFormat::Terminal => render_terminal(report).into_bytes(),
    }
}

fn fmt_num(value: f64) -> String {
    format!("{value}")
}

fn render_csv(report: &AuditReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &report.results {
        let (rci, band) = if row.valid {
            (
                row.rci.map(fmt_num).unwrap_or_default(),
                row.band.map(|b| b.to_string()).unwrap_or_default(),
            )
        } else {
            (String::new(), String::new())
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            report.dataset,
            report.model_id,
            row.n,
            fmt_num(row.fip),
            fmt_num(row.mpp),
            rci,
            band,
            row.valid,
            fmt_num(row.chance.value),
            fmt_num(row.delta_min),
            row.se_fip.map(fmt_num).unwrap_or_default(),
        ));
    }
    out
}

fn render_terminal(report: &AuditReport) -> String {
    let mut out = format!(
        "dataset {}  model {}  scorer {}  chance {:.4}  repetitions {}\n",
        report.dataset, report.model_id, report.scorer, report.chance.value, report.repetitions
    );
    out.push_str(&format!(
        "{:>2}  {:>7}  {:>7}  {:>7}  {:<16}  {}\n",
        "n", "FIP", "MPP", "RCI", "band", "validity"
    ));
    for row in &report.results {
        let (rci, band, flag) = if !row.valid {
            ("-".to_string(), "-".to_string(), INVALID_FLAG)
        } else {
            (
                row.rci
                    .map(|v| format!("{v:+.3}"))
                    .unwrap_or_else(|| "-".into()),
                row.band
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "-".into()),
                "ok",
            )
        };
        out.push_str(&format!(
            "{:>2}  {:>7.4}  {:>7.4}  {:>7}  {:<16}  {}\n",
            row.n, row.fip, row.mpp, rci, band, flag
        ));
    }
    out
}

pub fn load_report(path: &Path) -> Result<AuditReport, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let report: AuditReport = serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if report.schema != REPORT_SCHEMA {
        return Err(ReportError::Schema {
            found: report.schema,
        });
    }
    Ok(report)
}

/// Writes via a temp file in the same directory plus rename, so readers never
/// observe a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io_err = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let file_name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, ReportError> {
    if x.len() != y.len() {
        return Err(ReportError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(ReportError::TooShort { got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(ReportError::ZeroVariance);
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Pairwise RCI agreement across models over a shared dataset list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: u32,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub dataset_count: usize,
    /// Row-major models x models, symmetric, unit diagonal.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn pair_r(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == a)?;
        let j = self.models.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }
}

/// Builds the cross-model correlation matrix at granularity n. Every model
/// must cover the identical dataset list with valid cells.
pub fn compare_models(reports: &[AuditReport], n: u32) -> Result<CorrelationMatrix, ReportError> {
    use std::collections::BTreeMap;

    let mut by_model: BTreeMap<&str, BTreeMap<&str, &RciResult>> = BTreeMap::new();
    for report in reports {
        let Some(row) = report.results.iter().find(|r| r.n == n) else {
            return Err(ReportError::CoverageMismatch {
                detail: format!(
                    "report ({}, {}) has no granularity n={n}",
                    report.dataset, report.model_id
                ),
            });
        };
        let prior = by_model
            .entry(report.model_id.as_str())
            .or_default()
            .insert(report.dataset.as_str(), row);
        if prior.is_some() {
            return Err(ReportError::CoverageMismatch {
                detail: format!(
                    "duplicate report for ({}, {})",
                    report.dataset, report.model_id
                ),
            });
        }
    }

    if by_model.len() < 2 {
        return Err(ReportError::CoverageMismatch {
            detail: format!("need at least 2 models, got {}", by_model.len()),
        });
    }
    let datasets: Vec<String> = by_model
        .values()
        .next()
        .map(|m| m.keys().map(|d| d.to_string()).collect())
        .unwrap_or_default();
    for (model, cells) in &by_model {
        let mine: Vec<String> = cells.keys().map(|d| d.to_string()).collect();
        if mine != datasets {
            return Err(ReportError::CoverageMismatch {
                detail: format!("model {model} covers {mine:?}, expected {datasets:?}"),
            });
        }
    }
    if datasets.len() < 2 {
        return Err(ReportError::TooShort {
            got: datasets.len(),
        });
    }

    let mut vectors: Vec<(String, Vec<f64>)> = Vec::with_capacity(by_model.len());
    for (model, cells) in &by_model {
        let mut vector = Vec::with_capacity(datasets.len());
        for dataset in &datasets {
            let row = cells[dataset.as_str()];
            let Some(rci_value) = row.rci.filter(|_| row.valid) else {
                return Err(ReportError::InvalidCell {
                    dataset: dataset.clone(),
                    model: model.to_string(),
                    n,
                });
            };
            vector.push(rci_value);
        }
        vectors.push((model.to_string(), vector));
    }

    let k = vectors.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let r = pearson_r(&vectors[i].1, &vectors[j].1)?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }

    Ok(CorrelationMatrix {
        n,
        models: vectors.iter().map(|(m, _)| m.clone()).collect(),
        dataset_count: datasets.len(),
        datasets,
        values,
    })
}

pub fn render_correlation(matrix: &CorrelationMatrix) -> String {
    let width = matrix
        .models
        .iter()
        .map(|m| m.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = format!(
        "RCI agreement at n={} over {} dataset(s)\n",
        matrix.n,
        matrix.datasets.len()
    );
    out.push_str(&format!("{:width$}", ""));
    for model in &matrix.models {
        out.push_str(&format!("  {model:>width$}"));
    }
    out.push('\n');
    for (i, model) in matrix.models.iter().enumerate() {
        out.push_str(&format!("{model:width$}"));
        for value in &matrix.values[i] {
            out.push_str(&format!("  {value:>width$.4}"));
        }
        out.push('\n');
    }
    out
}
