//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! All parameters of a network live in one flat `Vec<f64>`: for each layer
//! the weight matrix (row-major, `out x in`) followed by the bias. Gradients,
//! optimizer moments and snapshots share that layout, which keeps Adam, soft
//! target updates and checkpointing to plain slice arithmetic.

mod adam;

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};

use crate::persist::{Decoder, Encoder, PersistError};
use crate::seed::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
}

fn mismatch(expected: impl ToString, got: impl ToString) -> NnError {
    NnError::ShapeMismatch { expected: expected.to_string(), got: got.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    /// Saturates each output into `[-1, 1]`.
    Tanh,
}

/// Multi-layer perceptron with ReLU hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
}

/// Intermediate activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[k]` is the input to layer `k`; the last entry is the network output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    /// Which hidden rectifiers are active, layer by layer, row-major.
    pub fn active_units(&self) -> Vec<bool> {
        let hidden = &self.activations[1..self.activations.len() - 1];
        hidden.iter().flat_map(|a| a.iter().map(|v| *v > 0.0)).collect()
    }
}

/// Value-equal, mutation-independent copy of a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Network {
    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut Rng) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, output)?;
        for k in 0..net.num_layers() {
            let bound = 1.0 / (sizes[k] as f64).sqrt();
            let range = net.layer_range(k);
            for p in &mut net.params[range] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        if sizes.contains(&0) {
            return Err(mismatch("non-zero layer widths", format!("{sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)], output })
    }

    pub fn from_params(sizes: &[usize], output: OutputActivation, params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, output)?;
        if params.len() != net.params.len() {
            return Err(mismatch(net.params.len(), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat index range holding layer `k`'s weights and bias.
    pub fn layer_range(&self, k: usize) -> Range<usize> {
        let start = param_count(&self.sizes[..=k]);
        start..start + self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1]
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.sizes == other.sizes && self.output == other.output
    }

    fn layer(&self, k: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
        let r = self.layer_range(k);
        let (w, b) = self.params[r].split_at(n_in * n_out);
        let w = ArrayView2::from_shape((n_out, n_in), w).expect("layer shape");
        (w, ArrayView1::from(b))
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<(), NnError> {
        if input.ncols() != self.input_dim() {
            return Err(mismatch(
                format!("{} input columns", self.input_dim()),
                format!("{} columns", input.ncols()),
            ));
        }
        Ok(())
    }

    /// Batched forward pass; one sample per row.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&input)?;
        let last = self.num_layers() - 1;
        let mut x = input.to_owned();
        for k in 0..=last {
            x = self.apply_layer(k, x.view(), k == last);
        }
        Ok(x)
    }

    /// Forward pass for a single sample.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that keeps the activations needed by [`Network::backward`].
    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache, NnError> {
        self.check_input(&input)?;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_owned());
        for k in 0..=last {
            let y = self.apply_layer(k, activations[k].view(), k == last);
            activations.push(y);
        }
        Ok(ForwardCache { activations })
    }

    fn apply_layer(&self, k: usize, x: ArrayView2<f64>, is_output: bool) -> Array2<f64> {
        let (w, b) = self.layer(k);
        let mut z = x.dot(&w.t());
        z += &b;
        if is_output {
            if self.output == OutputActivation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
        } else {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    /// Reverse pass for the scalar loss whose gradient with respect to the
    /// network output is `output_grad`.
    ///
    /// Parameter gradients are accumulated into `param_grads` (same layout as
    /// [`Network::params`]) when given; the gradient with respect to the
    /// input is returned.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        param_grads: Option<&mut [f64]>,
    ) -> Result<Array2<f64>, NnError> {
        let out = cache.output();
        if output_grad.dim() != out.dim() {
            return Err(mismatch(format!("{:?}", out.dim()), format!("{:?}", output_grad.dim())));
        }
        if cache.activations.len() != self.sizes.len() || cache.activations[0].ncols() != self.input_dim() {
            return Err(mismatch("cache from this network", "foreign cache"));
        }
        let mut grads = param_grads;
        if let Some(g) = grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(mismatch(self.params.len(), g.len()));
            }
        }

        let mut delta = output_grad.to_owned();
        if self.output == OutputActivation::Tanh {
            delta.zip_mut_with(out, |d, &y| *d *= 1.0 - y * y);
        }
        for k in (0..self.num_layers()).rev() {
            let x = &cache.activations[k];
            let (w, _) = self.layer(k);
            if let Some(g) = grads.as_deref_mut() {
                let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
                let r = self.layer_range(k);
                let (gw, gb) = g[r].split_at_mut(n_in * n_out);
                let dw = delta.t().dot(x);
                for (acc, v) in gw.iter_mut().zip(dw.iter()) {
                    *acc += v;
                }
                for (acc, v) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                    *acc += v;
                }
            }
            let mut dx = delta.dot(&w);
            if k > 0 {
                // x is the ReLU output of the previous layer.
                dx.zip_mut_with(x, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// `self <- (1 - tau) * self + tau * online`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &Network, tau: f64) -> Result<(), NnError> {
        if !self.same_architecture(online) {
            return Err(mismatch(format!("{:?}", self.sizes), format!("{:?}", online.sizes)));
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot { sizes: self.sizes.clone(), params: self.params.clone() }
    }

    pub fn load_params(&mut self, snapshot: &ParamSnapshot) -> Result<(), NnError> {
        if snapshot.sizes != self.sizes || snapshot.params.len() != self.params.len() {
            return Err(mismatch(format!("{:?}", self.sizes), format!("{:?}", snapshot.sizes)));
        }
        self.params.copy_from_slice(&snapshot.params);
        Ok(())
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self.output {
            OutputActivation::Identity => 0,
            OutputActivation::Tanh => 1,
        });
        enc.usizes(&self.sizes);
        enc.f64s(&self.params);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, PersistError> {
        let output = match dec.u8()? {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Tanh,
            other => return Err(PersistError::Corrupt(format!("unknown activation tag {other}"))),
        };
        let sizes = dec.usizes()?;
        let params = dec.f64s()?;
        Network::from_params(&sizes, output, params).map_err(|e| PersistError::Corrupt(e.to_string()))
    }
}

impl ParamSnapshot {
    pub fn encode(&self, enc: &mut Encoder) {
        enc.usizes(&self.sizes);
        enc.f64s(&self.params);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, PersistError> {
        let sizes = dec.usizes()?;
        let params = dec.f64s()?;
        if params.len() != param_count(&sizes) {
            return Err(PersistError::Corrupt("snapshot parameter count does not match sizes".into()));
        }
        Ok(Self { sizes, params })
    }
}
