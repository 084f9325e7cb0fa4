//! Centralized SGD training loops.
//!
//! `train_centralized` is both the plaintext baseline and the reference the
//! federated protocol is checked against: the protocol reproduces exactly
//! this batch schedule and update rule, with the flag input selected
//! obliviously instead of read directly.

use serde::{Deserialize, Serialize};

use super::mlp::{clip_l2, detector_input, Mlp, FLAG_INPUT};
use super::ModelError;
use crate::data::{FeatureVector, PreparedDataset};
use crate::protocol::noise::{sample_noise, NoiseSpec};
use crate::rng::labeled_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Nominal batch size k; every update is scaled by lr/k even if the
    /// final chunk of an epoch is shorter.
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    /// Per-sample gradient L2 bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Perturbation added to each batch-summed gradient, one draw per
    /// parameter.
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Train with the flag input pinned to zero and its weight column dead,
    /// as a no-flag baseline.
    pub flag_blind: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4092,
            lr0: 5e-2,
            weight_decay: 5e-4,
            clip_norm: Some(100.0),
            noise: NoiseSpec::None,
            seed: 42,
            flag_blind: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch-size must be positive");
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight-decay must be non-negative");
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip-norm must be positive");
            }
        }
        Ok(())
    }
}

/// Per-epoch learning rate: lr0 / sqrt(t), epochs counted from 1.
pub fn learning_rate(lr0: f64, epoch: usize) -> f64 {
    lr0 / (epoch as f64).sqrt()
}

/// The epoch's batches: a seeded shuffle of `0..n` chunked by `batch_size`,
/// so each position appears exactly once per epoch. Pure in (seed, epoch);
/// the trainer and every protocol party derive the same schedule without
/// communicating.
pub fn batch_schedule(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut labeled_rng(seed, &format!("batch-schedule-{epoch}")));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Borrowed view of the rows a training run consumes.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a [FeatureVector],
    pub labels: &'a [bool],
    pub flag_bits: &'a [bool],
    /// Row index multiset, typically the upsampled training split.
    pub rows: &'a [usize],
}

impl<'a> TrainData<'a> {
    pub fn training_slice(d: &'a PreparedDataset) -> Self {
        TrainData {
            features: &d.features,
            labels: &d.labels,
            flag_bits: &d.flag_bits,
            rows: &d.train_rows,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.features.len();
        if self.labels.len() != n || self.flag_bits.len() != n {
            return Err(ModelError::ShapeMismatch { expected: n, got: self.labels.len() });
        }
        if self.rows.is_empty() {
            return Err(ModelError::Config("no training rows".into()));
        }
        if let Some(&bad) = self.rows.iter().find(|&&r| r >= n) {
            return Err(ModelError::ShapeMismatch { expected: n, got: bad });
        }
        Ok(())
    }
}

/// Plaintext SGD over flag-aware inputs. Deterministic in `cfg.seed`.
pub fn train_centralized(data: &TrainData, cfg: &TrainConfig) -> Result<Mlp, ModelError> {
    Ok(train_centralized_traced(data, cfg)?.0)
}

/// [`train_centralized`] that also reports the training-set loss after each
/// epoch. The trace is an observation only; the trained model is identical.
pub fn train_centralized_traced(
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<f64>), ModelError> {
    cfg.validate()?;
    data.validate()?;
    let mut model = Mlp::anomaly_detector(&mut labeled_rng(cfg.seed, "model-init"));
    if cfg.flag_blind {
        model.zero_input_column(FLAG_INPUT);
    }
    let mut noise_rng = labeled_rng(cfg.seed, "train-noise");
    let mut sum = vec![0.0; model.param_count()];
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(cfg.lr0, epoch);
        for batch in batch_schedule(data.rows.len(), cfg.batch_size, cfg.seed, epoch) {
            sum.iter_mut().for_each(|s| *s = 0.0);
            for &pos in &batch {
                let row = data.rows[pos];
                let flag = !cfg.flag_blind && data.flag_bits[row];
                let input = detector_input(&data.features[row], flag);
                let label = if data.labels[row] { 1.0 } else { 0.0 };
                let mut g = model.per_sample_gradient(&input, label, cfg.weight_decay);
                if let Some(c) = cfg.clip_norm {
                    clip_l2(&mut g, c);
                }
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            if !cfg.noise.is_none() {
                for s in &mut sum {
                    *s += sample_noise(cfg.noise, &mut noise_rng);
                }
            }
            model.apply_update(&sum, lr, cfg.batch_size)?;
        }
        losses.push(training_loss(&model, data, cfg.flag_blind));
    }
    Ok((model, losses))
}

/// Mean BCE over the training multiset under the model's flag regime.
fn training_loss(model: &Mlp, data: &TrainData, flag_blind: bool) -> f64 {
    let scores: Vec<f64> = data
        .rows
        .iter()
        .map(|&row| {
            let flag = !flag_blind && data.flag_bits[row];
            model.forward(&detector_input(&data.features[row], flag))
        })
        .collect();
    let labels: Vec<bool> = data.rows.iter().map(|&row| data.labels[row]).collect();
    crate::model::bce_loss(&scores, &labels)
}

/// Ordinary mini-batch SGD for an arbitrary-shape net: mean gradient over
/// the actual batch, constant learning rate, no decay, clip, or noise. Used
/// for auxiliary models that are not part of the protocol.
pub fn train_plain(
    inputs: &[Vec<f64>],
    labels: &[bool],
    dims: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Mlp, ModelError> {
    if inputs.len() != labels.len() {
        return Err(ModelError::ShapeMismatch { expected: labels.len(), got: inputs.len() });
    }
    if inputs.is_empty() {
        return Err(ModelError::Config("no rows".into()));
    }
    let mut model = Mlp::new(dims, &mut labeled_rng(seed, "model-init"));
    let mut sum = vec![0.0; model.param_count()];
    for epoch in 1..=epochs {
        for batch in batch_schedule(inputs.len(), batch_size, seed, epoch) {
            sum.iter_mut().for_each(|s| *s = 0.0);
            for &i in &batch {
                let label = if labels[i] { 1.0 } else { 0.0 };
                let g = model.per_sample_gradient(&inputs[i], label, 0.0);
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            model.apply_update(&sum, lr, batch.len())?;
        }
    }
    Ok(model)
}

/// Scores `rows` with the receiver's true flag bit as the 18th input, the
/// way an evaluation with full data access would.
pub fn score_with_true_flags(
    model: &Mlp,
    features: &[FeatureVector],
    flag_bits: &[bool],
    rows: &[usize],
) -> Vec<f64> {
    rows.iter()
        .map(|&r| model.forward(&detector_input(&features[r], flag_bits[r])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::metrics::{auprc, bce_loss};
    use rand::Rng;

    #[test]
    fn schedule_covers_every_position_exactly_once() {
        let batches = batch_schedule(10, 4, 1, 1);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        assert_eq!(batch_schedule(10, 4, 1, 1), batch_schedule(10, 4, 1, 1));
        assert_ne!(batch_schedule(10, 4, 1, 1), batch_schedule(10, 4, 1, 2));
        assert_ne!(batch_schedule(10, 4, 1, 1), batch_schedule(10, 4, 2, 1));
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        assert_eq!(learning_rate(0.05, 1), 0.05);
        assert!((learning_rate(0.05, 4) - 0.025).abs() < 1e-15);
        assert!((learning_rate(0.08, 16) - 0.02).abs() < 1e-15);
    }

    /// Rows where feature 0 alone separates the classes.
    fn separable_toy(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<bool>, Vec<bool>) {
        let mut rng = labeled_rng(seed, "train-test");
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2 == 0;
            let mut f = [0.0; 17];
            for v in f.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
            f[0] += if y { 2.0 } else { -2.0 };
            features.push(f);
            labels.push(y);
        }
        let flags = vec![false; n];
        (features, labels, flags)
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 12,
            batch_size: 32,
            lr0: 0.5,
            weight_decay: 5e-4,
            clip_norm: Some(100.0),
            noise: NoiseSpec::None,
            seed: 5,
            flag_blind: false,
        }
    }

    #[test]
    fn separable_toy_converges() {
        let (features, labels, flags) = separable_toy(240, 1);
        let rows: Vec<usize> = (0..features.len()).collect();
        let data = TrainData { features: &features, labels: &labels, flag_bits: &flags, rows: &rows };
        let model = train_centralized(&data, &toy_cfg()).unwrap();
        let scores = score_with_true_flags(&model, &features, &flags, &rows);
        assert!(auprc(&scores, &labels).unwrap() > 0.9);
    }

    #[test]
    fn training_loss_is_non_increasing_on_the_toy() {
        let (features, labels, flags) = separable_toy(240, 2);
        let rows: Vec<usize> = (0..features.len()).collect();
        let data = TrainData { features: &features, labels: &labels, flag_bits: &flags, rows: &rows };
        let mut prev = f64::INFINITY;
        for epochs in 1..=6 {
            let model =
                train_centralized(&data, &TrainConfig { epochs, ..toy_cfg() }).unwrap();
            let scores = score_with_true_flags(&model, &features, &flags, &rows);
            let loss = bce_loss(&scores, &labels);
            assert!(loss <= prev + 1e-4, "epoch {epochs}: {loss} after {prev}");
            prev = loss;
        }
    }

    #[test]
    fn replay_is_deterministic_per_seed_even_with_noise() {
        let (features, labels, flags) = separable_toy(120, 3);
        let rows: Vec<usize> = (0..features.len()).collect();
        let data = TrainData { features: &features, labels: &labels, flag_bits: &flags, rows: &rows };
        let cfg = TrainConfig {
            epochs: 3,
            noise: NoiseSpec::Gaussian { sigma: 0.5 },
            ..toy_cfg()
        };
        let a = train_centralized(&data, &cfg).unwrap();
        let b = train_centralized(&data, &cfg).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        let c = train_centralized(&data, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.params_flat(), c.params_flat());
    }

    #[test]
    fn flag_carries_signal_only_for_flag_aware_training() {
        // Features are pure noise; the flag bit equals the label.
        let mut rng = labeled_rng(4, "train-test");
        let n = 400;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut f = [0.0; 17];
            for v in f.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            features.push(f);
            labels.push(i % 10 == 0);
        }
        let flags = labels.clone();
        let rows: Vec<usize> = (0..n).collect();
        let data = TrainData { features: &features, labels: &labels, flag_bits: &flags, rows: &rows };
        let cfg = TrainConfig { epochs: 8, ..toy_cfg() };

        let aware = train_centralized(&data, &cfg).unwrap();
        let blind =
            train_centralized(&data, &TrainConfig { flag_blind: true, ..cfg }).unwrap();

        let mean_flag_effect = |m: &Mlp| {
            let anomalous: Vec<&FeatureVector> = (0..n).filter(|&i| labels[i]).map(|i| &features[i]).collect();
            anomalous
                .iter()
                .map(|f| {
                    (m.forward(&detector_input(f, true)) - m.forward(&detector_input(f, false)))
                        .abs()
                })
                .sum::<f64>()
                / anomalous.len() as f64
        };
        assert!(mean_flag_effect(&aware) > 0.1, "got {}", mean_flag_effect(&aware));
        assert_eq!(mean_flag_effect(&blind), 0.0);

        let scores = score_with_true_flags(&aware, &features, &flags, &rows);
        assert!(auprc(&scores, &labels).unwrap() > 0.95);
    }

    #[test]
    fn plain_trainer_fits_an_arbitrary_shape() {
        let mut rng = labeled_rng(8, "train-test");
        let inputs: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let bias = if i % 2 == 0 { 1.5 } else { -1.5 };
                (0..5).map(|_| rng.gen_range(-0.5..0.5) + bias).collect()
            })
            .collect();
        let labels: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let model = train_plain(&inputs, &labels, &[5, 8, 1], 30, 32, 0.5, 1).unwrap();
        let scores: Vec<f64> = inputs.iter().map(|x| model.forward(x)).collect();
        assert!(auprc(&scores, &labels).unwrap() > 0.95);
    }

    #[test]
    fn invalid_configs_and_rows_are_rejected() {
        let (features, labels, flags) = separable_toy(10, 9);
        let rows = vec![0usize, 99];
        let data = TrainData { features: &features, labels: &labels, flag_bits: &flags, rows: &rows };
        assert!(train_centralized(&data, &toy_cfg()).is_err());
        let rows: Vec<usize> = (0..10).collect();
        let data = TrainData { features: &features, labels: &labels, flag_bits: &flags, rows: &rows };
        assert!(train_centralized(&data, &TrainConfig { lr0: -1.0, ..toy_cfg() }).is_err());
        assert!(
            train_centralized(&data, &TrainConfig { clip_norm: Some(0.0), ..toy_cfg() }).is_err()
        );
    }
}
