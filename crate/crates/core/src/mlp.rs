//! One-hidden-layer perceptron with tanh hidden units and a linear output.
//!
//! Parameters live in a single canonical ordering shared by the Jacobian, the
//! pruning mask, the trainer and the JSON model file:
//!
//! 1. hidden weights, row-major (`neuron * n_inputs + input`),
//! 2. hidden biases,
//! 3. output weights,
//! 4. output bias.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::Scaler;
use crate::error::{Error, Result};

/// Hyperbolic tangent written as `(1 - e^{-2z}) / (1 + e^{-2z})`.
///
/// The exponent is always non-positive, so the result saturates to `±1`
/// instead of overflowing. Odd symmetry holds bit-for-bit.
#[inline]
pub fn activation(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-2.0 * z).exp();
        (1.0 - e) / (1.0 + e)
    } else {
        let e = (2.0 * z).exp();
        (e - 1.0) / (e + 1.0)
    }
}

/// What a canonical parameter index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    HiddenWeight { neuron: usize, input: usize },
    HiddenBias { neuron: usize },
    OutputWeight { neuron: usize },
    OutputBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveStructure {
    pub active_inputs: usize,
    pub active_hidden: usize,
    pub active_weights: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    n_inputs: usize,
    n_hidden: usize,
    hidden_weights: Vec<f64>,
    hidden_biases: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: f64,
    active_mask: Vec<bool>,
}

impl MlpParams {
    /// All-zero network with every parameter active.
    pub fn zeros(n_inputs: usize, n_hidden: usize) -> Result<Self> {
        if n_inputs == 0 || n_hidden == 0 {
            return Err(Error::invalid(format!(
                "network dimensions must be positive (n_inputs={n_inputs}, n_hidden={n_hidden})"
            )));
        }
        let n_params = n_hidden * n_inputs + 2 * n_hidden + 1;
        Ok(Self {
            n_inputs,
            n_hidden,
            hidden_weights: vec![0.0; n_hidden * n_inputs],
            hidden_biases: vec![0.0; n_hidden],
            output_weights: vec![0.0; n_hidden],
            output_bias: 0.0,
            active_mask: vec![true; n_params],
        })
    }

    /// Builds a network from explicit values; the mask defaults to all active.
    pub fn from_parts(
        n_inputs: usize,
        n_hidden: usize,
        hidden_weights: Vec<f64>,
        hidden_biases: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
    ) -> Result<Self> {
        let mut p = Self::zeros(n_inputs, n_hidden)?;
        if hidden_weights.len() != n_hidden * n_inputs
            || hidden_biases.len() != n_hidden
            || output_weights.len() != n_hidden
        {
            return Err(Error::invalid("parameter vector lengths do not match dimensions"));
        }
        p.hidden_weights = hidden_weights;
        p.hidden_biases = hidden_biases;
        p.output_weights = output_weights;
        p.output_bias = output_bias;
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_params();
        if self.active_mask.len() != n {
            return Err(Error::invalid(format!(
                "active mask has {} entries, expected {n}",
                self.active_mask.len()
            )));
        }
        for idx in 0..n {
            let v = self.param(idx);
            if !v.is_finite() {
                return Err(Error::invalid(format!("parameter {idx} is not finite")));
            }
            if !self.active_mask[idx] && v != 0.0 {
                return Err(Error::invalid(format!("masked parameter {idx} is non-zero")));
            }
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * self.n_inputs + 2 * self.n_hidden + 1
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.hidden_weights
    }

    pub fn hidden_biases(&self) -> &[f64] {
        &self.hidden_biases
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.output_weights
    }

    pub fn output_bias(&self) -> f64 {
        self.output_bias
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active_mask
    }

    pub fn hidden_weight_index(&self, neuron: usize, input: usize) -> usize {
        neuron * self.n_inputs + input
    }

    pub fn hidden_bias_index(&self, neuron: usize) -> usize {
        self.n_hidden * self.n_inputs + neuron
    }

    pub fn output_weight_index(&self, neuron: usize) -> usize {
        self.n_hidden * self.n_inputs + self.n_hidden + neuron
    }

    pub fn output_bias_index(&self) -> usize {
        self.n_params() - 1
    }

    pub fn kind(&self, idx: usize) -> ParamKind {
        let hw = self.n_hidden * self.n_inputs;
        if idx < hw {
            ParamKind::HiddenWeight {
                neuron: idx / self.n_inputs,
                input: idx % self.n_inputs,
            }
        } else if idx < hw + self.n_hidden {
            ParamKind::HiddenBias { neuron: idx - hw }
        } else if idx < hw + 2 * self.n_hidden {
            ParamKind::OutputWeight {
                neuron: idx - hw - self.n_hidden,
            }
        } else {
            assert!(idx < self.n_params(), "parameter index {idx} out of range");
            ParamKind::OutputBias
        }
    }

    pub fn param(&self, idx: usize) -> f64 {
        match self.kind(idx) {
            ParamKind::HiddenWeight { .. } => self.hidden_weights[idx],
            ParamKind::HiddenBias { neuron } => self.hidden_biases[neuron],
            ParamKind::OutputWeight { neuron } => self.output_weights[neuron],
            ParamKind::OutputBias => self.output_bias,
        }
    }

    /// Writes a parameter value. Writes to masked parameters are ignored so
    /// that pruned entries stay at exactly zero.
    pub fn set_param(&mut self, idx: usize, value: f64) {
        if !self.active_mask[idx] {
            return;
        }
        match self.kind(idx) {
            ParamKind::HiddenWeight { .. } => self.hidden_weights[idx] = value,
            ParamKind::HiddenBias { neuron } => self.hidden_biases[neuron] = value,
            ParamKind::OutputWeight { neuron } => self.output_weights[neuron] = value,
            ParamKind::OutputBias => self.output_bias = value,
        }
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active_mask[idx]
    }

    /// Masks a parameter and pins it to zero.
    pub fn mask(&mut self, idx: usize) {
        self.set_param(idx, 0.0);
        self.active_mask[idx] = false;
    }

    /// Canonical indices of the active parameters, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.n_params()).filter(|&i| self.active_mask[i]).collect()
    }

    /// Masks every parameter of neurons that have lost all incoming weights
    /// or their outgoing weight. Returns the number of neurons removed.
    pub fn mask_dead_neurons(&mut self) -> usize {
        let mut removed = 0;
        for i in 0..self.n_hidden {
            let incoming = (0..self.n_inputs).any(|h| self.active_mask[self.hidden_weight_index(i, h)]);
            let outgoing = self.active_mask[self.output_weight_index(i)];
            let anything_left = (0..self.n_inputs)
                .map(|h| self.hidden_weight_index(i, h))
                .chain([self.hidden_bias_index(i), self.output_weight_index(i)])
                .any(|idx| self.active_mask[idx]);
            if anything_left && !(incoming && outgoing) {
                for h in 0..self.n_inputs {
                    self.mask(self.hidden_weight_index(i, h));
                }
                self.mask(self.hidden_bias_index(i));
                self.mask(self.output_weight_index(i));
                removed += 1;
            }
        }
        removed
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs {
            return Err(Error::invalid(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.n_inputs
            )));
        }
        Ok(())
    }

    #[inline]
    fn pre_activation(&self, neuron: usize, x: &[f64]) -> f64 {
        let row = &self.hidden_weights[neuron * self.n_inputs..(neuron + 1) * self.n_inputs];
        row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.hidden_biases[neuron]
    }

    /// Hidden-layer outputs `g(z_i)` for one input vector.
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..self.n_hidden)
            .map(|i| activation(self.pre_activation(i, x)))
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict(x))
    }

    /// Forward pass without the length check. `x` must hold `n_inputs` values.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_inputs);
        let mut y = self.output_bias;
        for i in 0..self.n_hidden {
            let w2 = self.output_weights[i];
            if w2 != 0.0 {
                y += w2 * activation(self.pre_activation(i, x));
            }
        }
        y
    }

    /// Derivative of the output with respect to every active parameter, in
    /// canonical order with masked entries omitted.
    pub fn output_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let active = self.active_indices();
        let mut out = vec![0.0; active.len()];
        let mut scratch = vec![0.0; 2 * self.n_hidden];
        self.predict_with_gradient(x, &active, &mut scratch, &mut out);
        Ok(out)
    }

    /// Evaluates the output and its gradient over `indices`.
    ///
    /// `scratch` must hold at least `2 * n_hidden` values; `out` must match
    /// `indices` in length.
    pub fn predict_with_gradient(
        &self,
        x: &[f64],
        indices: &[usize],
        scratch: &mut [f64],
        out: &mut [f64],
    ) -> f64 {
        let nh = self.n_hidden;
        let (act, slope) = scratch[..2 * nh].split_at_mut(nh);
        let mut y = self.output_bias;
        for i in 0..nh {
            let g = activation(self.pre_activation(i, x));
            act[i] = g;
            // dŷ/dz_i = w2_i * (1 - g^2)
            slope[i] = self.output_weights[i] * (1.0 - g * g);
            y += self.output_weights[i] * g;
        }
        let hw = nh * self.n_inputs;
        for (o, &idx) in out.iter_mut().zip(indices) {
            *o = if idx < hw {
                slope[idx / self.n_inputs] * x[idx % self.n_inputs]
            } else if idx < hw + nh {
                slope[idx - hw]
            } else if idx < hw + 2 * nh {
                act[idx - hw - nh]
            } else {
                1.0
            };
        }
        y
    }

    pub fn effective_structure(&self) -> EffectiveStructure {
        let active_inputs = (0..self.n_inputs)
            .filter(|&h| (0..self.n_hidden).any(|i| self.active_mask[self.hidden_weight_index(i, h)]))
            .count();
        let active_hidden = (0..self.n_hidden)
            .filter(|&i| {
                self.active_mask[self.output_weight_index(i)]
                    && (0..self.n_inputs).any(|h| self.active_mask[self.hidden_weight_index(i, h)])
            })
            .count();
        EffectiveStructure {
            active_inputs,
            active_hidden,
            active_weights: self.active_mask.iter().filter(|&&a| a).count(),
        }
    }
}

/// Nguyen-Widrow initialization for inputs scaled to `[-1, 1]`.
///
/// Each hidden row gets a uniform random direction rescaled to norm
/// `0.7 * n_hidden^(1/n_inputs)`; hidden biases are uniform in `[-beta, beta]`,
/// output weights uniform in `[-0.5, 0.5]`, output bias zero.
pub fn nguyen_widrow_init(n_inputs: usize, n_hidden: usize, seed: u64) -> Result<MlpParams> {
    let mut p = MlpParams::zeros(n_inputs, n_hidden)?;
    let beta = 0.7 * (n_hidden as f64).powf(1.0 / n_inputs as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_hidden {
        let row = &mut p.hidden_weights[i * n_inputs..(i + 1) * n_inputs];
        let norm = loop {
            for w in row.iter_mut() {
                *w = rng.random_range(-1.0..=1.0);
            }
            let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break norm;
            }
        };
        for w in row.iter_mut() {
            *w *= beta / norm;
        }
        p.hidden_biases[i] = rng.random_range(-beta..=beta);
    }
    for w in p.output_weights.iter_mut() {
        *w = rng.random_range(-0.5..=0.5);
    }
    Ok(p)
}

/// JSON model document: network, mask, input names and the fitted scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub hidden_weights: Vec<f64>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub active_mask: Vec<bool>,
    pub input_column_names: Vec<String>,
    pub scaler: Option<Scaler>,
}

impl ModelFile {
    pub fn new(params: &MlpParams, input_column_names: Vec<String>, scaler: Option<Scaler>) -> Self {
        Self {
            n_inputs: params.n_inputs,
            n_hidden: params.n_hidden,
            hidden_weights: params.hidden_weights.clone(),
            hidden_biases: params.hidden_biases.clone(),
            output_weights: params.output_weights.clone(),
            output_bias: params.output_bias,
            active_mask: params.active_mask.clone(),
            input_column_names,
            scaler,
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        let mut p = MlpParams::zeros(self.n_inputs, self.n_hidden)?;
        if self.hidden_weights.len() != p.hidden_weights.len()
            || self.hidden_biases.len() != self.n_hidden
            || self.output_weights.len() != self.n_hidden
        {
            return Err(Error::Parse("model file arrays do not match its dimensions".into()));
        }
        p.hidden_weights.clone_from(&self.hidden_weights);
        p.hidden_biases.clone_from(&self.hidden_biases);
        p.output_weights.clone_from(&self.output_weights);
        p.output_bias = self.output_bias;
        p.active_mask.clone_from(&self.active_mask);
        p.validate()?;
        if !self.input_column_names.is_empty() && self.input_column_names.len() != self.n_inputs {
            return Err(Error::Parse(format!(
                "model file names {} input columns for {} inputs",
                self.input_column_names.len(),
                self.n_inputs
            )));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.params()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
