//! Spatial bias diagnostics: which patch positions carry best-patch
//! performance.
//!
//! For each item the best patch score is distributed as mass over the argmax
//! positions (split equally on ties, so tie noise cannot fabricate bias).
//! Shares are the per-position fraction of total mass. An item whose patches
//! all score zero has no correct predictions and contributes nothing.

use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;
use crate::matrix::{EvalMatrix, MatrixError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchContribution {
    pub n: u32,
    /// Length n*n, indexed by patch_id - 1; sums to 1 unless zero_mass.
    pub shares: Vec<f64>,
    /// Sum of per-item best-patch scores.
    pub total_mass: f64,
    pub items_counted: usize,
    /// Set when no item had a positive patch score; shares are all zero.
    pub zero_mass: bool,
}

pub fn patch_contributions(matrix: &EvalMatrix, n: u32) -> Result<PatchContribution, MatrixError> {
    let rows = matrix.patch_rows(n)?;
    let cells = (n * n) as usize;
    let mut masses = vec![0.0f64; cells];
    let mut total_mass = 0.0f64;

    for row in rows {
        let best = row.iter().map(|s| s.value()).fold(0.0, f64::max);
        if best == 0.0 {
            continue;
        }
        let argmax: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, s)| s.value() == best)
            .map(|(i, _)| i)
            .collect();
        let split = best / argmax.len() as f64;
        for i in argmax {
            masses[i] += split;
        }
        total_mass += best;
    }

    let zero_mass = total_mass == 0.0;
    let shares = if zero_mass {
        masses
    } else {
        masses.into_iter().map(|m| m / total_mass).collect()
    };
    Ok(PatchContribution {
        n,
        shares,
        total_mass,
        items_counted: rows.len(),
        zero_mass,
    })
}

/// Share at the geometric center patch; only odd grids have one.
pub fn center_bias_share(contribution: &PatchContribution) -> Option<f64> {
    let spec = GridSpec::new(contribution.n).ok()?;
    let center = spec.center_patch_id()?;
    Some(contribution.shares[(center - 1) as usize])
}
