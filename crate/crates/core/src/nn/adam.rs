use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::persist::{Decoder, Encoder, PersistError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step_except(params, grads, &[]);
    }

    /// Like [`Adam::step`], but parameters inside any of the `frozen` ranges
    /// (and their moments) are left untouched.
    pub fn step_except(&mut self, params: &mut [f64], grads: &[f64], frozen: &[Range<usize>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.t += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            if frozen.iter().any(|r| r.contains(&i)) {
                continue;
            }
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.f64(self.config.learning_rate);
        enc.f64(self.config.beta1);
        enc.f64(self.config.beta2);
        enc.f64(self.config.epsilon);
        enc.u64(self.t);
        enc.f64s(&self.m);
        enc.f64s(&self.v);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, PersistError> {
        let config = AdamConfig {
            learning_rate: dec.f64()?,
            beta1: dec.f64()?,
            beta2: dec.f64()?,
            epsilon: dec.f64()?,
        };
        let t = dec.u64()?;
        let m = dec.f64s()?;
        let v = dec.f64s()?;
        if m.len() != v.len() {
            return Err(PersistError::Corrupt("adam moment lengths differ".into()));
        }
        Ok(Self { config, m, v, t })
    }
}
