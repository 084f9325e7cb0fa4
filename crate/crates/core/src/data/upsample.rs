//! Minority-class upsampling for heavily imbalanced training sets.

use rand::seq::SliceRandom;
use rand::Rng;

use super::DataError;
use crate::rng::SeedRng;

/// Returns a shuffled multiset of row indices in which the anomalous class
/// is grown (by sampling with replacement) to `ceil(normal * ratio)`. A
/// ratio of 1.0 targets class balance, 0.1 targets one anomaly per ten
/// normals. Classes already at or above the target are left alone; rows are
/// never dropped.
pub fn upsample(
    labels: &[bool],
    ratio: f64,
    rng: &mut SeedRng,
) -> Result<Vec<usize>, DataError> {
    let anomalous: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let normal_count = labels.len() - anomalous.len();
    let target = ((normal_count as f64) * ratio).ceil() as usize;
    if anomalous.is_empty() && target > 0 {
        return Err(DataError::NoAnomalies);
    }
    let mut rows: Vec<usize> = (0..labels.len()).collect();
    for _ in anomalous.len()..target {
        rows.push(anomalous[rng.gen_range(0..anomalous.len())]);
    }
    rows.shuffle(rng);
    Ok(rows)
}
