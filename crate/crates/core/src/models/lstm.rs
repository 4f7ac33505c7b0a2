//! Stacked bidirectional LSTM with a per-step linear head.
//!
//! Parameters live in one flat vector. For every layer and direction
//! (forward first) the block is `W_ih [4H × In]`, `W_hh [4H × H]`,
//! `b [4H]`, gate order input, forget, cell, output. The head `w [2H]`,
//! `b` follows. Layer inputs above the first are `[h_fwd, h_bwd]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, sigmoid, View};
use super::optim::{clip_grad_norm, Optimizer};
use super::{shuffled_batches, TrainConfig, TrainLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    /// initial forget-gate bias
    pub forget_bias: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 128,
            layers: 4,
            dropout: 0.2,
            forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmModel {
    input: usize,
    hidden: usize,
    layers: usize,
    dropout: f64,
    params: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Block {
    w_ih: usize,
    w_hh: usize,
    b: usize,
    input: usize,
}

struct DirCache {
    /// post-activation gates, `[T·B × 4H]`
    gates: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
}

struct LayerCache {
    /// layer input after dropout, `[T·B × In]`
    x: Vec<f64>,
    mask: Option<Vec<f64>>,
    dirs: [DirCache; 2],
}

/// Time index processed at `step` by direction `d`.
#[inline]
fn order(d: usize, step: usize, steps: usize) -> usize {
    if d == 0 {
        step
    } else {
        steps - 1 - step
    }
}

impl BiLstmModel {
    pub fn parameter_count(input: usize, hidden: usize, layers: usize) -> usize {
        let g = 4 * hidden;
        let mut n = 0;
        for l in 0..layers {
            let inp = if l == 0 { input } else { 2 * hidden };
            n += 2 * (g * inp + g * hidden + g);
        }
        n + 2 * hidden + 1
    }

    /// All parameters zero.
    pub fn zeros(input: usize, cfg: &LstmConfig) -> Self {
        BiLstmModel {
            input,
            hidden: cfg.hidden,
            layers: cfg.layers,
            dropout: cfg.dropout,
            params: vec![0.0; Self::parameter_count(input, cfg.hidden, cfg.layers)],
        }
    }

    /// Uniform(±1/√H) weights, forget-gate bias `cfg.forget_bias`.
    pub fn init(input: usize, cfg: &LstmConfig, seed: u64) -> Self {
        let mut m = Self::zeros(input, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (cfg.hidden as f64).sqrt();
        for p in m.params.iter_mut() {
            *p = rng.gen_range(-k..k);
        }
        let h = cfg.hidden;
        for l in 0..m.layers {
            for d in 0..2 {
                let b = m.block(l, d).b;
                for j in 0..h {
                    m.params[b + h + j] = cfg.forget_bias;
                }
            }
        }
        m
    }

    pub fn from_parts(input: usize, hidden: usize, layers: usize, dropout: f64, params: Vec<f64>) -> Result<Self> {
        let expected = Self::parameter_count(input, hidden, layers);
        if params.len() != expected || input == 0 || hidden == 0 || layers == 0 {
            return Err(Error::ShapeMismatch(format!(
                "LSTM parameter block has {} values, expected {expected}",
                params.len()
            )));
        }
        Ok(BiLstmModel {
            input,
            hidden,
            layers,
            dropout,
            params,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block(&self, layer: usize, dir: usize) -> Block {
        let g = 4 * self.hidden;
        let mut off = 0;
        for l in 0..=layer {
            let inp = if l == 0 { self.input } else { 2 * self.hidden };
            let size = g * inp + g * self.hidden + g;
            if l == layer {
                off += dir * size;
                return Block {
                    w_ih: off,
                    w_hh: off + g * inp,
                    b: off + g * inp + g * self.hidden,
                    input: inp,
                };
            }
            off += 2 * size;
        }
        unreachable!()
    }

    fn head(&self) -> usize {
        self.params.len() - 2 * self.hidden - 1
    }

    /// Model of the time-reversed problem: directions swapped, and the
    /// `[h_fwd, h_bwd]` halves of every downstream input swapped with them.
    pub fn time_reversed(&self) -> Self {
        let mut out = self.clone();
        let h = self.hidden;
        let g = 4 * h;
        for l in 0..self.layers {
            let f = self.block(l, 0);
            let b = self.block(l, 1);
            let size = b.w_ih - f.w_ih;
            for (src, dst) in [(f, b), (b, f)] {
                out.params[dst.w_ih..dst.w_ih + size].copy_from_slice(&self.params[src.w_ih..src.w_ih + size]);
                if l > 0 {
                    for row in 0..g {
                        let base = dst.w_ih + row * 2 * h;
                        let from = src.w_ih + row * 2 * h;
                        out.params[base..base + h].copy_from_slice(&self.params[from + h..from + 2 * h]);
                        out.params[base + h..base + 2 * h].copy_from_slice(&self.params[from..from + h]);
                    }
                }
            }
        }
        let hd = self.head();
        out.params[hd..hd + h].copy_from_slice(&self.params[hd + h..hd + 2 * h]);
        out.params[hd + h..hd + 2 * h].copy_from_slice(&self.params[hd..hd + h]);
        out
    }

    fn check_inputs(&self, xs: &[&[f64]], steps: usize) -> Result<()> {
        for x in xs {
            if x.len() != self.input * steps {
                return Err(Error::ShapeMismatch(format!(
                    "window has {} values, expected {} channels × {steps} steps",
                    x.len(),
                    self.input
                )));
            }
        }
        Ok(())
    }

    /// Eval-mode prediction for one channel-major `[C × T]` window.
    pub fn predict(&self, x: &[f64], steps: usize) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[x], steps)?.remove(0))
    }

    /// Eval-mode prediction for a batch of channel-major windows.
    pub fn predict_batch(&self, xs: &[&[f64]], steps: usize) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(xs, steps)?;
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let (y, _, _) = self.forward(xs, steps, None);
        Ok(unbatch(&y, xs.len(), steps))
    }

    fn forward(
        &self,
        xs: &[&[f64]],
        steps: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, Vec<LayerCache>, Vec<f64>) {
        let bsz = xs.len();
        let h = self.hidden;
        let g = 4 * h;
        let rows = steps * bsz;

        // time-major input [T·B × C]
        let mut x = vec![0.0; rows * self.input];
        for (b, w) in xs.iter().enumerate() {
            for c in 0..self.input {
                for t in 0..steps {
                    x[(t * bsz + b) * self.input + c] = w[c * steps + t];
                }
            }
        }

        let mut caches = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let mut mask = None;
            if l > 0 && self.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let keep = 1.0 - self.dropout;
                    let m: Vec<f64> = (0..x.len())
                        .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (v, s) in x.iter_mut().zip(&m) {
                        *v *= s;
                    }
                    mask = Some(m);
                }
            }
            let dirs = [0, 1].map(|d| {
                let blk = self.block(l, d);
                let p = &self.params;
                let mut gates = vec![0.0; rows * g];
                for r in 0..rows {
                    gates[r * g..(r + 1) * g].copy_from_slice(&p[blk.b..blk.b + g]);
                }
                gemm(
                    1.0,
                    View::new(&x, rows, blk.input),
                    View::new(&p[blk.w_ih..blk.w_hh], g, blk.input).t(),
                    1.0,
                    &mut gates,
                );
                let w_hh = View::new(&p[blk.w_hh..blk.b], g, h).t();
                let mut c = vec![0.0; rows * h];
                let mut tc = vec![0.0; rows * h];
                let mut hs = vec![0.0; rows * h];
                for step in 0..steps {
                    let t = order(d, step, steps);
                    let row = t * bsz;
                    if step > 0 {
                        let tp = order(d, step - 1, steps) * bsz;
                        gemm(
                            1.0,
                            View::new(&hs[tp * h..(tp + bsz) * h], bsz, h),
                            w_hh,
                            1.0,
                            &mut gates[row * g..(row + bsz) * g],
                        );
                    }
                    let prev = (step > 0).then(|| order(d, step - 1, steps) * bsz);
                    for b in 0..bsz {
                        let gr = &mut gates[(row + b) * g..(row + b + 1) * g];
                        for j in 0..h {
                            let i = sigmoid(gr[j]);
                            let f = sigmoid(gr[h + j]);
                            let cc = gr[2 * h + j].tanh();
                            let o = sigmoid(gr[3 * h + j]);
                            gr[j] = i;
                            gr[h + j] = f;
                            gr[2 * h + j] = cc;
                            gr[3 * h + j] = o;
                            let cp = prev.map_or(0.0, |pr| c[(pr + b) * h + j]);
                            let cn = f * cp + i * cc;
                            let k = (row + b) * h + j;
                            c[k] = cn;
                            tc[k] = cn.tanh();
                            hs[k] = o * tc[k];
                        }
                    }
                }
                DirCache { gates, c, tc, h: hs }
            });
            let mut next = vec![0.0; rows * 2 * h];
            for r in 0..rows {
                next[r * 2 * h..r * 2 * h + h].copy_from_slice(&dirs[0].h[r * h..(r + 1) * h]);
                next[r * 2 * h + h..(r + 1) * 2 * h].copy_from_slice(&dirs[1].h[r * h..(r + 1) * h]);
            }
            caches.push(LayerCache { x, mask, dirs });
            x = next;
        }

        let hd = self.head();
        let mut y = vec![self.params[hd + 2 * h]; rows];
        gemm(
            1.0,
            View::new(&x, rows, 2 * h),
            View::new(&self.params[hd..hd + 2 * h], 2 * h, 1),
            1.0,
            &mut y,
        );
        (y, caches, x)
    }

    /// RMSE loss over every step of every window and its gradient with
    /// respect to the flat parameter vector. Dropout is active iff `rng`
    /// is given.
    pub fn loss_and_grad(
        &self,
        xs: &[&[f64]],
        ys: &[&[f64]],
        steps: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(xs, steps)?;
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::EmptyData);
        }
        if ys.iter().any(|y| y.len() != steps) {
            return Err(Error::ShapeMismatch(format!("targets must have {steps} steps")));
        }
        let bsz = xs.len();
        let rows = steps * bsz;
        let h = self.hidden;
        let g = 4 * h;
        let (pred, caches, top) = self.forward(xs, steps, rng);

        let mut dy = vec![0.0; rows];
        let mut sq = 0.0;
        for t in 0..steps {
            for b in 0..bsz {
                let e = pred[t * bsz + b] - ys[b][t];
                dy[t * bsz + b] = e;
                sq += e * e;
            }
        }
        let loss = (sq / rows as f64).sqrt();
        let scale = if loss > 0.0 { 1.0 / (rows as f64 * loss) } else { 0.0 };
        for v in dy.iter_mut() {
            *v *= scale;
        }

        let mut grad = vec![0.0; self.params.len()];
        let hd = self.head();
        gemm(
            1.0,
            View::new(&top, rows, 2 * h).t(),
            View::new(&dy, rows, 1),
            0.0,
            &mut grad[hd..hd + 2 * h],
        );
        grad[hd + 2 * h] = dy.iter().sum();
        // gradient w.r.t. the current layer output [T·B × 2H]
        let mut dout = vec![0.0; rows * 2 * h];
        gemm(
            1.0,
            View::new(&dy, rows, 1),
            View::new(&self.params[hd..hd + 2 * h], 1, 2 * h),
            0.0,
            &mut dout,
        );

        for l in (0..self.layers).rev() {
            let cache = &caches[l];
            let inp = self.block(l, 0).input;
            let mut dx = vec![0.0; rows * inp];
            for d in 0..2 {
                let blk = self.block(l, d);
                let dc_ = &cache.dirs[d];
                let mut da = vec![0.0; rows * g];
                let mut dh_rec = vec![0.0; bsz * h];
                let mut dc_next = vec![0.0; bsz * h];
                let w_hh = View::new(&self.params[blk.w_hh..blk.b], g, h);
                for step in (0..steps).rev() {
                    let row = order(d, step, steps) * bsz;
                    let prev = (step > 0).then(|| order(d, step - 1, steps) * bsz);
                    for b in 0..bsz {
                        let r = row + b;
                        let gr = &dc_.gates[r * g..(r + 1) * g];
                        let dar = &mut da[r * g..(r + 1) * g];
                        for j in 0..h {
                            let k = r * h + j;
                            let dh = dout[r * 2 * h + d * h + j] + dh_rec[b * h + j];
                            let (i, f, cc, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                            let tc = dc_.tc[k];
                            let dc = dc_next[b * h + j] + dh * o * (1.0 - tc * tc);
                            let cp = prev.map_or(0.0, |pr| dc_.c[(pr + b) * h + j]);
                            dar[j] = dc * cc * i * (1.0 - i);
                            dar[h + j] = dc * cp * f * (1.0 - f);
                            dar[2 * h + j] = dc * i * (1.0 - cc * cc);
                            dar[3 * h + j] = dh * tc * o * (1.0 - o);
                            dc_next[b * h + j] = dc * f;
                        }
                    }
                    if step > 0 {
                        gemm(1.0, View::new(&da[row * g..(row + bsz) * g], bsz, g), w_hh, 0.0, &mut dh_rec);
                    }
                }
                // h of the previously processed step, zero for the first one
                let mut hprev = vec![0.0; rows * h];
                for step in 1..steps {
                    let row = order(d, step, steps) * bsz;
                    let pr = order(d, step - 1, steps) * bsz;
                    hprev[row * h..(row + bsz) * h].copy_from_slice(&dc_.h[pr * h..(pr + bsz) * h]);
                }
                gemm(
                    1.0,
                    View::new(&da, rows, g).t(),
                    View::new(&hprev, rows, h),
                    0.0,
                    &mut grad[blk.w_hh..blk.b],
                );
                gemm(
                    1.0,
                    View::new(&da, rows, g).t(),
                    View::new(&cache.x, rows, inp),
                    0.0,
                    &mut grad[blk.w_ih..blk.w_hh],
                );
                let gb = &mut grad[blk.b..blk.b + g];
                for r in 0..rows {
                    for (acc, v) in gb.iter_mut().zip(&da[r * g..(r + 1) * g]) {
                        *acc += v;
                    }
                }
                if l > 0 {
                    gemm(
                        1.0,
                        View::new(&da, rows, g),
                        View::new(&self.params[blk.w_ih..blk.w_hh], g, inp),
                        1.0,
                        &mut dx,
                    );
                }
            }
            if l > 0 {
                if let Some(m) = &cache.mask {
                    for (v, s) in dx.iter_mut().zip(m) {
                        *v *= s;
                    }
                }
                dout = dx;
            }
        }
        Ok((loss, grad))
    }
}

fn unbatch(y: &[f64], bsz: usize, steps: usize) -> Vec<Vec<f64>> {
    (0..bsz)
        .map(|b| (0..steps).map(|t| y[t * bsz + b]).collect())
        .collect()
}

/// Trains on channel-major windows `xs` with per-step targets `ys`.
pub fn lstm_train(
    xs: &[&[f64]],
    ys: &[&[f64]],
    steps: usize,
    arch: &LstmConfig,
    cfg: &TrainConfig,
) -> Result<(BiLstmModel, TrainLog)> {
    if xs.is_empty() {
        return Err(Error::EmptyData);
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "LSTM windows vs targets",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let input = xs[0].len() / steps.max(1);
    let mut model = BiLstmModel::init(input, arch, cfg.seed);
    model.check_inputs(xs, steps)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_15f3);
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, Vec::new());
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.lr_at(epoch));
        let mut total = 0.0;
        let batches = shuffled_batches(xs.len(), cfg.batch_size, &mut rng);
        // parameters the last batch was evaluated with
        let mut evaluated = Vec::new();
        for (k, batch) in batches.iter().enumerate() {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i]).collect();
            let by: Vec<&[f64]> = batch.iter().map(|&i| ys[i]).collect();
            let (loss, mut grad) = model.loss_and_grad(&bx, &by, steps, Some(&mut rng))?;
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
        let epoch_loss = (total / xs.len() as f64).sqrt();
        log.epoch_losses.push(epoch_loss);
        log::debug!("lstm epoch {} loss {epoch_loss:.6}", log.epoch_losses.len());
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
    if best.0.is_finite() && cfg.restore_best && !best.1.is_empty() {
        model.params = best.1;
    }
    Ok((model, log))
}
