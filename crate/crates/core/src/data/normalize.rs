//! Per-feature standardization fitted on training rows only.

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;

/// Column means and standard deviations. Stored in checkpoints so inference
/// normalizes exactly the way training did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits column statistics in one streaming pass (Welford's update). Standard
/// deviation uses the population variance; constant columns get std 1.0 so
/// normalization maps them to exactly zero instead of dividing by zero.
pub fn fit_normalization(rows: &[FeatureVector]) -> NormStats {
    let dims = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; dims];
    let mut m2 = vec![0.0; dims];
    for (n, row) in rows.iter().enumerate() {
        for k in 0..dims {
            let delta = row[k] - mean[k];
            mean[k] += delta / (n + 1) as f64;
            m2[k] += delta * (row[k] - mean[k]);
        }
    }
    let std = m2
        .iter()
        .map(|&s| {
            let var = if rows.is_empty() { 0.0 } else { s / rows.len() as f64 };
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    NormStats { mean, std }
}

/// Maps each column to (x - mean) / std in place.
pub fn apply_normalization(rows: &mut [FeatureVector], stats: &NormStats) {
    for row in rows {
        for k in 0..row.len() {
            row[k] = (row[k] - stats.mean[k]) / stats.std[k];
        }
    }
}
