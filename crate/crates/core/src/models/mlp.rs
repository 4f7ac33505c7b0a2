//! Fully connected network applied to one time step at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, View};
use super::optim::{clip_grad_norm, Optimizer};
use super::{shuffled_batches, TrainConfig, TrainLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![20; 5],
            activation: Activation::Tanh,
        }
    }
}

/// Layer `k` maps `sizes[k]` to `sizes[k+1]` with weights `[out × in]`
/// followed by biases `[out]`, stored back to back in `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn parameter_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(input: usize, cfg: &MlpConfig) -> Self {
        let mut sizes = vec![input];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let n = Self::parameter_count(&sizes);
        MlpModel {
            sizes,
            activation: cfg.activation,
            params: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, cfg: &MlpConfig, seed: u64) -> Self {
        let mut m = Self::zeros(input, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in m.sizes.clone().windows(2) {
            let (i, o) = (w[0], w[1]);
            let k = (6.0 / (i + o) as f64).sqrt();
            for p in &mut m.params[off..off + i * o] {
                *p = rng.gen_range(-k..k);
            }
            off += i * o + o;
        }
        m
    }

    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::ShapeMismatch(format!("invalid MLP layer sizes {sizes:?}")));
        }
        if params.len() != Self::parameter_count(&sizes) {
            return Err(Error::ShapeMismatch(format!(
                "MLP parameter block has {} values, expected {}",
                params.len(),
                Self::parameter_count(&sizes)
            )));
        }
        Ok(MlpModel {
            sizes,
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_batch(x, 1)?[0])
    }

    /// Row-major `[n × D_in]` inputs to `n` outputs.
    pub fn forward_batch(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        if x.len() != n * self.sizes[0] {
            return Err(Error::ShapeMismatch(format!(
                "MLP input has {} values, expected {n} × {}",
                x.len(),
                self.sizes[0]
            )));
        }
        let acts = self.activations(x, n);
        Ok(acts.into_iter().last().unwrap())
    }

    fn activations(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (k, w) in self.sizes.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            let weights = &self.params[off..off + i * o];
            let bias = &self.params[off + i * o..off + i * o + o];
            let mut z = vec![0.0; n * o];
            for r in 0..n {
                z[r * o..(r + 1) * o].copy_from_slice(bias);
            }
            gemm(
                1.0,
                View::new(acts.last().unwrap(), n, i),
                View::new(weights, o, i).t(),
                1.0,
                &mut z,
            );
            if k < last {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(z);
            off += i * o + o;
        }
        acts
    }

    /// RMSE over the batch and its parameter gradient.
    pub fn loss_and_grad(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if x.len() != n * self.sizes[0] {
            return Err(Error::ShapeMismatch(format!(
                "MLP input has {} values, expected {n} × {}",
                x.len(),
                self.sizes[0]
            )));
        }
        let acts = self.activations(x, n);
        let out = acts.last().unwrap();
        let sq: f64 = out.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
        let loss = (sq / n as f64).sqrt();
        let scale = if loss > 0.0 { 1.0 / (n as f64 * loss) } else { 0.0 };
        let mut delta: Vec<f64> = out.iter().zip(y).map(|(p, t)| (p - t) * scale).collect();

        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::new();
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for k in (0..self.sizes.len() - 1).rev() {
            let (i, o) = (self.sizes[k], self.sizes[k + 1]);
            let off = offsets[k];
            gemm(
                1.0,
                View::new(&delta, n, o).t(),
                View::new(&acts[k], n, i),
                0.0,
                &mut grad[off..off + i * o],
            );
            let gb = &mut grad[off + i * o..off + i * o + o];
            for r in 0..n {
                for (acc, d) in gb.iter_mut().zip(&delta[r * o..(r + 1) * o]) {
                    *acc += d;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; n * i];
                gemm(
                    1.0,
                    View::new(&delta, n, o),
                    View::new(&self.params[off..off + i * o], o, i),
                    0.0,
                    &mut prev,
                );
                for (d, a) in prev.iter_mut().zip(&acts[k]) {
                    *d *= self.activation.grad_from_output(*a);
                }
                delta = prev;
            }
        }
        Ok((loss, grad))
    }
}

/// Trains on row-major `[n × d]` inputs.
pub fn mlp_train(x: &[f64], y: &[f64], d: usize, arch: &MlpConfig, cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if x.len() != n * d {
        return Err(Error::ShapeMismatch(format!("MLP data has {} values, expected {n} × {d}", x.len())));
    }
    let mut model = MlpModel::init(d, arch, cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0a1b_2c3d);
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, Vec::new());
    let mut stale = 0;
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.lr_at(epoch));
        let batches = shuffled_batches(n, cfg.batch_size, &mut rng);
        let mut total = 0.0;
        let mut evaluated = Vec::new();
        for (k, batch) in batches.iter().enumerate() {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&x[i * d..(i + 1) * d]);
                by.push(y[i]);
            }
            let (loss, mut grad) = model.loss_and_grad(&bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected(loss));
            }
            clip_grad_norm(&mut grad, cfg.grad_clip);
            if k + 1 == batches.len() && cfg.restore_best {
                evaluated = model.params.clone();
            }
            opt.step(&mut model.params, &grad);
            total += loss * loss * batch.len() as f64;
        }
        let epoch_loss = (total / n as f64).sqrt();
        log.epoch_losses.push(epoch_loss);
        if epoch_loss < best.0 - cfg.min_delta {
            best = (epoch_loss, evaluated);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    if cfg.restore_best && !best.1.is_empty() {
        model.params = best.1;
    }
    Ok((model, log))
}
