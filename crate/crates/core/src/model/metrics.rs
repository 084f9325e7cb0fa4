//! Ranking and loss metrics for the imbalanced detection task.

use super::ModelError;

/// Area under the precision-recall curve by step-wise interpolation:
/// thresholds sweep the distinct scores from high to low, tied scores enter
/// as one group, and each recall increment contributes at the precision
/// reached after the group.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::ShapeMismatch { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(ModelError::NoPositives);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut at = 0;
    while at < order.len() {
        let mut end = at;
        while end < order.len() && scores[order[end]] == scores[order[at]] {
            if labels[order[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        at = end;
    }
    Ok(area)
}

/// Mean binary cross-entropy of scores against labels, with probabilities
/// clamped away from 0 and 1 so saturated predictions stay finite.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let n = scores.len().max(1) as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(1e-12, 1.0 - 1e-12);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}
