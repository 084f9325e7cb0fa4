//! Feed-forward network with per-sample gradients.
//!
//! Training never uses framework autograd: the protocol needs one clipped
//! gradient per sample, so backprop is written out directly. All math is
//! f64; fixed-point encoding happens only at the protocol boundary.

use rand::Rng;

use super::ModelError;
use crate::data::FeatureVector;
use crate::rng::SeedRng;

/// Detector layer sizes: 17 velocity features plus the flag input, three
/// hidden ReLU layers, one sigmoid output.
pub const DETECTOR_DIMS: [usize; 5] = [18, 256, 64, 16, 1];
/// Index of the flag column in the detector input.
pub const FLAG_INPUT: usize = 17;

/// Builds a detector input row from features and a flag value.
pub fn detector_input(features: &FeatureVector, flag: bool) -> Vec<f64> {
    let mut x = Vec::with_capacity(features.len() + 1);
    x.extend_from_slice(features);
    x.push(if flag { 1.0 } else { 0.0 });
    x
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Multi-layer perceptron with ReLU hidden layers and a single sigmoid
/// output. Parameters flatten layer by layer, weights (row-major, one row
/// per output unit) before biases; that order is the checkpoint contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Fresh network with uniform He-style fan-in initialization for the
    /// weights and zero biases.
    pub fn new(dims: &[usize], rng: &mut SeedRng) -> Self {
        assert!(dims.len() >= 2, "need input and output layers");
        assert_eq!(*dims.last().unwrap(), 1, "scalar output expected");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Mlp { dims: dims.to_vec(), weights, biases }
    }

    /// Detector-shaped network.
    pub fn anomaly_detector(rng: &mut SeedRng) -> Self {
        Self::new(&DETECTOR_DIMS, rng)
    }

    /// Reassembles a network from its flat parameter vector.
    pub fn from_parts(dims: &[usize], flat: &[f64]) -> Result<Self, ModelError> {
        let mut rng = crate::rng::labeled_rng(0, "from-parts");
        let mut m = Self::new(dims, &mut rng);
        m.set_params_flat(flat)?;
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_len(&self) -> usize {
        self.dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.param_count() {
            return Err(ModelError::ShapeMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in 0..self.weights.len() {
            let wlen = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[at..at + wlen]);
            at += wlen;
            let blen = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[at..at + blen]);
            at += blen;
        }
        Ok(())
    }

    /// Zeroes every first-layer weight reading from one input column, and
    /// with it the network's dependence on that input. Combined with feeding
    /// zero during training, the column receives no data gradient and no
    /// decay gradient, so it stays exactly zero.
    pub fn zero_input_column(&mut self, col: usize) {
        assert!(col < self.dims[0]);
        let fan_in = self.dims[0];
        for row in 0..self.dims[1] {
            self.weights[0][row * fan_in + col] = 0.0;
        }
    }

    /// True if no first-layer weight reads the given input column.
    pub fn input_column_is_dead(&self, col: usize) -> bool {
        let fan_in = self.dims[0];
        (0..self.dims[1]).all(|row| self.weights[0][row * fan_in + col] == 0.0)
    }

    fn layer_forward(&self, l: usize, input: &[f64], z: &mut Vec<f64>) {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        z.clear();
        for o in 0..fan_out {
            let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            z.push(dot + self.biases[l][o]);
        }
    }

    /// Anomaly confidence in (0, 1). Assumes a well-formed input row; use
    /// [`Mlp::predict`] at trust boundaries.
    pub fn forward(&self, input: &[f64]) -> f64 {
        debug_assert_eq!(input.len(), self.dims[0]);
        let mut act = input.to_vec();
        let mut z = Vec::new();
        let layers = self.weights.len();
        for l in 0..layers {
            self.layer_forward(l, &act, &mut z);
            if l + 1 < layers {
                act.clear();
                act.extend(z.iter().map(|&v| v.max(0.0)));
            }
        }
        sigmoid(z[0])
    }

    /// Validating wrapper around [`Mlp::forward`] for externally sourced rows.
    pub fn predict(&self, input: &[f64]) -> Result<f64, ModelError> {
        if input.len() != self.dims[0] {
            return Err(ModelError::ShapeMismatch { expected: self.dims[0], got: input.len() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(self.forward(input))
    }

    /// Gradient of the single-sample loss
    /// `bce(forward(input), label) + (weight_decay / 2) * ||params||^2`
    /// with respect to every parameter, flattened in parameter order.
    pub fn per_sample_gradient(&self, input: &[f64], label: f64, weight_decay: f64) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.dims[0]);
        let layers = self.weights.len();

        // Forward pass, keeping each layer's pre-activation and activation.
        let mut acts: Vec<Vec<f64>> = vec![input.to_vec()];
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut z = Vec::new();
            self.layer_forward(l, &acts[l], &mut z);
            if l + 1 < layers {
                acts.push(z.iter().map(|&v| v.max(0.0)).collect());
            }
            zs.push(z);
        }
        let p = sigmoid(zs[layers - 1][0]);

        // Backward pass. Sigmoid + cross-entropy collapse to (p - y) at the
        // output pre-activation.
        let mut grad_w: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut grad_b: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut delta = vec![p - label];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let mut gw = vec![0.0; fan_in * fan_out];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    gw[o * fan_in + i] = delta[o] * acts[l][i];
                }
            }
            grad_w.push(gw);
            grad_b.push(delta.clone());
            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                for (i, pv) in prev.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for o in 0..fan_out {
                        s += self.weights[l][o * fan_in + i] * delta[o];
                    }
                    // ReLU gate on the upstream pre-activation.
                    *pv = if zs[l - 1][i] > 0.0 { s } else { 0.0 };
                }
                delta = prev;
            }
        }
        grad_w.reverse();
        grad_b.reverse();

        let mut flat = Vec::with_capacity(self.param_count());
        for l in 0..layers {
            flat.extend_from_slice(&grad_w[l]);
            flat.extend_from_slice(&grad_b[l]);
        }
        if weight_decay != 0.0 {
            for (g, p) in flat.iter_mut().zip(self.params_flat()) {
                *g += weight_decay * p;
            }
        }
        flat
    }

    /// Gradient step `params -= (lr / batch_size) * update`, where `update`
    /// is a batch-summed gradient. Dividing by the nominal batch size here
    /// keeps per-batch noise calibration independent of the step scaling.
    pub fn apply_update(
        &mut self,
        update: &[f64],
        lr: f64,
        batch_size: usize,
    ) -> Result<(), ModelError> {
        if update.len() != self.param_count() {
            return Err(ModelError::ShapeMismatch {
                expected: self.param_count(),
                got: update.len(),
            });
        }
        let scale = lr / batch_size as f64;
        let mut at = 0;
        for l in 0..self.weights.len() {
            for w in &mut self.weights[l] {
                *w -= scale * update[at];
                at += 1;
            }
            for b in &mut self.biases[l] {
                *b -= scale * update[at];
                at += 1;
            }
        }
        Ok(())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` down to L2 norm `c` if it exceeds it; direction is preserved.
pub fn clip_l2(v: &mut [f64], c: f64) {
    debug_assert!(c > 0.0);
    let norm = l2_norm(v);
    if norm > c {
        let scale = c / norm;
        for x in v {
            *x *= scale;
        }
    }
}
