//! Aggregate indices over an EvalMatrix: RCI, chance validity, bootstrap
//! uncertainty, and interpretation bands.
//!
//! RCI_n = 1 - MPP_n / FIP. Negative values mean some patch beats the full
//! image (localized cues suffice); positive values mean the full image is
//! required. The index is unbounded below and capped at 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::{EvalMatrix, MatrixError};
use crate::scoring::ChanceFloor;

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_RESAMPLES: u32 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("RCI undefined at FIP = 0")]
    ZeroFip,
    #[error("bootstrap needs at least 2 items, got {got}")]
    TooFewItems { got: usize },
    #[error("bootstrap degenerate: {skipped} of {resamples} resamples had zero FIP")]
    DegenerateBootstrap { skipped: usize, resamples: u32 },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Qualitative reading of an RCI value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InterpretationBand {
    StrongLocal,
    ModerateLocal,
    Balanced,
    ModerateGlobal,
    StrongGlobal,
}

impl InterpretationBand {
    pub fn as_str(self) -> &'static str {
        match self {
            InterpretationBand::StrongLocal => "STRONG_LOCAL",
            InterpretationBand::ModerateLocal => "MODERATE_LOCAL",
            InterpretationBand::Balanced => "BALANCED",
            InterpretationBand::ModerateGlobal => "MODERATE_GLOBAL",
            InterpretationBand::StrongGlobal => "STRONG_GLOBAL",
        }
    }
}

impl std::fmt::Display for InterpretationBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Band thresholds: ≤ -0.30 | (-0.30, -0.10] | (-0.10, 0.10] | (0.10, 0.30] |
/// > 0.30. Both ±0.30 boundaries land on the moderate side.
pub fn band(rci_value: f64) -> InterpretationBand {
    if rci_value <= -0.30 {
        InterpretationBand::StrongLocal
    } else if rci_value <= -0.10 {
        InterpretationBand::ModerateLocal
    } else if rci_value <= 0.10 {
        InterpretationBand::Balanced
    } else if rci_value <= 0.30 {
        InterpretationBand::ModerateGlobal
    } else {
        InterpretationBand::StrongGlobal
    }
}

/// RCI = 1 - mpp/fip. Errors when fip is zero; the validity gate keeps such
/// cells out of reported results anyway.
pub fn rci(fip_value: f64, mpp_value: f64) -> Result<f64, EngineError> {
    if fip_value <= 0.0 {
        return Err(EngineError::ZeroFip);
    }
    Ok(1.0 - mpp_value / fip_value)
}

/// Inclusive chance gate: valid iff fip >= chance + delta_min, where
/// delta_min = max(delta, 2 * se) when a standard error is known.
pub fn validity(
    fip_value: f64,
    chance: &ChanceFloor,
    se_fip: Option<f64>,
    delta: f64,
) -> (bool, f64) {
    let delta_min = se_fip.map_or(delta, |se| delta.max(2.0 * se));
    (fip_value >= chance.value + delta_min, delta_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapStatistic {
    Fip,
    Rci { n: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(default = "default_resamples")]
    pub resamples: u32,
    pub seed: u64,
}

fn default_resamples() -> u32 {
    DEFAULT_RESAMPLES
}

/// Draws the resampled statistic values. Each resample uses its own RNG
/// substream (stream b+1 of the seed), so results are independent of
/// evaluation order. RCI resamples with zero FIP are skipped; more than 10%
/// skipped is degenerate.
fn resampled(
    matrix: &EvalMatrix,
    statistic: BootstrapStatistic,
    config: BootstrapConfig,
) -> Result<Vec<f64>, EngineError> {
    let n_items = matrix.len();
    if n_items < 2 {
        return Err(EngineError::TooFewItems { got: n_items });
    }
    if let BootstrapStatistic::Rci { n } = statistic {
        matrix.patch_rows(n)?;
    }

    let mut values = Vec::with_capacity(config.resamples as usize);
    let mut skipped = 0usize;
    for b in 0..config.resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64 + 1);
        let indices: Vec<usize> = (0..n_items).map(|_| rng.gen_range(0..n_items)).collect();
        match statistic {
            BootstrapStatistic::Fip => values.push(matrix.fip_over(&indices)),
            BootstrapStatistic::Rci { n } => {
                let f = matrix.fip_over(&indices);
                if f == 0.0 {
                    skipped += 1;
                    continue;
                }
                let m = matrix.mpp_over(n, &indices)?;
                values.push(1.0 - m / f);
            }
        }
    }

    if skipped * 10 > config.resamples as usize {
        return Err(EngineError::DegenerateBootstrap {
            skipped,
            resamples: config.resamples,
        });
    }
    Ok(values)
}

/// Bootstrap standard error: sample standard deviation of the resampled
/// statistic. Deterministic for a fixed seed.
pub fn bootstrap_se(
    matrix: &EvalMatrix,
    statistic: BootstrapStatistic,
    config: BootstrapConfig,
) -> Result<f64, EngineError> {
    let values = resampled(matrix, statistic, config)?;
    Ok(sample_std_dev(&values))
}

/// 95% percentile interval of the resampled RCI.
pub fn bootstrap_rci_ci(
    matrix: &EvalMatrix,
    n: u32,
    config: BootstrapConfig,
) -> Result<(f64, f64), EngineError> {
    let mut values = resampled(matrix, BootstrapStatistic::Rci { n }, config)?;
    values.sort_by(|a, b| a.total_cmp(b));
    Ok((percentile(&values, 0.025), percentile(&values, 0.975)))
}

fn sample_std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// One granularity's full result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RciResult {
    pub n: u32,
    pub fip: f64,
    pub mpp: f64,
    /// Absent only when fip = 0 (the ratio is undefined there).
    pub rci: Option<f64>,
    pub chance: ChanceFloor,
    pub delta_min: f64,
    pub valid: bool,
    pub se_fip: Option<f64>,
    pub rci_ci: Option<(f64, f64)>,
    pub band: Option<InterpretationBand>,
}

/// Computes the complete result row for one granularity, bootstrapping the
/// FIP standard error and an RCI interval when configured.
pub fn granularity_result(
    matrix: &EvalMatrix,
    n: u32,
    chance: ChanceFloor,
    delta: f64,
    bootstrap: Option<BootstrapConfig>,
) -> Result<RciResult, EngineError> {
    let fip_value = matrix.fip();
    let mpp_value = matrix.mpp(n)?;

    let se_fip = match bootstrap {
        Some(config) => Some(bootstrap_se(matrix, BootstrapStatistic::Fip, config)?),
        None => None,
    };
    let (valid, delta_min) = validity(fip_value, &chance, se_fip, delta);

    let rci_value = (fip_value > 0.0).then(|| 1.0 - mpp_value / fip_value);
    let rci_ci = match (bootstrap, rci_value) {
        (Some(config), Some(_)) if valid => Some(bootstrap_rci_ci(matrix, n, config)?),
        _ => None,
    };

    Ok(RciResult {
        n,
        fip: fip_value,
        mpp: mpp_value,
        rci: rci_value,
        chance,
        delta_min,
        valid,
        se_fip,
        rci_ci,
        band: rci_value.map(band),
    })
}
