//! Squared-error loss, backpropagation through time, gradient clipping, the
//! Adam update and the epoch loop.

use std::borrow::Borrow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batched;
use crate::dataset::{Sample, WindowedDataset};
use crate::error::{Error, Result};
use crate::lstm::{init_network, NetworkConfig, NetworkParams};
#[cfg(test)]
use crate::lstm::{forward_window, LstmLayerParams, OutputGateCell, StepTrace};
#[cfg(test)]
use crate::math::axpy;
use crate::math::{Prng, Vector};
use crate::metrics::{rmse, EvalResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without a validation-RMSE improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.clip_norm, self.epsilon];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "learning rate, clip norm and epsilon must be > 0: {self:?}"
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs, batch size and patience must be >= 1: {self:?}"
            )));
        }
        for b in [self.beta1, self.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "moment decay must be in (0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Gradients share the parameter layout.
pub type GradientSet = NetworkParams;

pub fn mse_loss(pred: &Vector, target: &Vector) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mse_loss of an empty batch".into()));
    }
    let sum: f64 = pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

// Per-sample reference implementation of the backward pass; the training
// path uses the batched version in `batched`.

/// Backward pass through one recurrent layer. `dh_ext[t]` is the loss
/// gradient reaching `h_t` from above; returns the gradient with respect to
/// each step's input when `want_dx` is set.
#[cfg(test)]
fn layer_backward(
    p: &LstmLayerParams,
    g: &mut LstmLayerParams,
    steps: &[StepTrace],
    dh_ext: &[Vec<f64>],
    gate_cell: OutputGateCell,
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let hsz = p.hidden_size();
    let isz = p.input_size();
    let mut dh_next = vec![0.0; hsz];
    let mut dc_next = vec![0.0; hsz];
    let mut dx_all = vec![Vec::new(); if want_dx { steps.len() } else { 0 }];

    let mut dzi = vec![0.0; hsz];
    let mut dzf = vec![0.0; hsz];
    let mut dzg = vec![0.0; hsz];
    let mut dzo = vec![0.0; hsz];
    let mut dc = vec![0.0; hsz];

    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        for k in 0..hsz {
            let dh = dh_ext[t][k] + dh_next[k];
            let o = s.o[k];
            let tc = s.tanh_c[k];
            dzo[k] = dh * tc * o * (1.0 - o);
            dc[k] = dc_next[k] + dh * o * (1.0 - tc * tc);
        }
        let o_cell = match gate_cell {
            OutputGateCell::Previous => s.c_prev.as_slice(),
            OutputGateCell::Current => {
                p.w_co.backprop_acc(&dzo, &mut dc);
                s.c.as_slice()
            }
        };
        for k in 0..hsz {
            let (i, f, gv) = (s.i[k], s.f[k], s.g[k]);
            dzi[k] = dc[k] * gv * i * (1.0 - i);
            dzf[k] = dc[k] * s.c_prev[k] * f * (1.0 - f);
            dzg[k] = dc[k] * i * (1.0 - gv * gv);
        }

        // state gradients flowing to t-1
        for k in 0..hsz {
            dc_next[k] = dc[k] * s.f[k];
        }
        p.w_ci.backprop_acc(&dzi, &mut dc_next);
        p.w_cf.backprop_acc(&dzf, &mut dc_next);
        if gate_cell == OutputGateCell::Previous {
            p.w_co.backprop_acc(&dzo, &mut dc_next);
        }
        dh_next.fill(0.0);
        p.w_hi.tmul_acc(&dzi, &mut dh_next);
        p.w_hf.tmul_acc(&dzf, &mut dh_next);
        p.w_hc.tmul_acc(&dzg, &mut dh_next);
        p.w_ho.tmul_acc(&dzo, &mut dh_next);

        if want_dx {
            let mut dx = vec![0.0; isz];
            p.w_xi.tmul_acc(&dzi, &mut dx);
            p.w_xf.tmul_acc(&dzf, &mut dx);
            p.w_xc.tmul_acc(&dzg, &mut dx);
            p.w_xo.tmul_acc(&dzo, &mut dx);
            dx_all[t] = dx;
        }

        let x = s.x.as_slice();
        let h_prev = s.h_prev.as_slice();
        g.w_xi.outer_acc(&dzi, x);
        g.w_xf.outer_acc(&dzf, x);
        g.w_xc.outer_acc(&dzg, x);
        g.w_xo.outer_acc(&dzo, x);
        g.w_hi.outer_acc(&dzi, h_prev);
        g.w_hf.outer_acc(&dzf, h_prev);
        g.w_hc.outer_acc(&dzg, h_prev);
        g.w_ho.outer_acc(&dzo, h_prev);
        g.w_ci.grad_acc(&dzi, s.c_prev.as_slice());
        g.w_cf.grad_acc(&dzf, s.c_prev.as_slice());
        g.w_co.grad_acc(&dzo, o_cell);
        axpy(1.0, &dzi, g.b_i.as_mut_slice());
        axpy(1.0, &dzf, g.b_f.as_mut_slice());
        axpy(1.0, &dzg, g.b_c.as_mut_slice());
        axpy(1.0, &dzo, g.b_o.as_mut_slice());
    }
    dx_all
}

/// Adds `weight · ∂(pred - target)²/∂θ` for one window into `grads`; returns the squared error.
#[cfg(test)]
fn accumulate_sample(
    net: &NetworkParams,
    cfg: &NetworkConfig,
    sample: &Sample,
    weight: f64,
    grads: &mut GradientSet,
) -> Result<f64> {
    let (pred, trace) = forward_window(net, &sample.input, cfg)?;
    let err = pred - sample.target;
    let dpred = 2.0 * err * weight;

    let d = &net.dense;
    let gd = &mut grads.dense;
    gd.b2[0] += dpred;
    gd.w2.outer_acc(&[dpred], trace.dense_act.as_slice());
    let da: Vec<f64> = trace
        .dense_act
        .iter()
        .zip(d.w2.row(0))
        .map(|(u, w)| dpred * w * (1.0 - u * u))
        .collect();
    let top = trace.layers.len() - 1;
    let t_len = trace.len();
    let h_top = trace.layers[top][t_len - 1].h.as_slice();
    gd.w1.outer_acc(&da, h_top);
    axpy(1.0, &da, gd.b1.as_mut_slice());

    let mut dh_ext = vec![vec![0.0; cfg.lstm_hidden_sizes[top]]; t_len];
    d.w1.tmul_acc(&da, &mut dh_ext[t_len - 1]);

    for k in (0..=top).rev() {
        dh_ext = layer_backward(
            &net.layers[k],
            &mut grads.layers[k],
            &trace.layers[k],
            &dh_ext,
            cfg.output_gate_cell,
            k > 0,
        );
    }
    Ok(err * err)
}

/// Mean squared error over `batch` and its exact gradient (mean of per-sample gradients).
pub fn bptt_gradients<S: Borrow<Sample>>(
    net: &NetworkParams,
    batch: &[S],
    cfg: &NetworkConfig,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("bptt_gradients on an empty batch".into()));
    }
    let t_len = cfg.window_size * cfg.input_size;
    for (k, s) in batch.iter().enumerate() {
        let len = s.borrow().input.len();
        if len != t_len {
            return Err(Error::shape(
                format!("bptt_gradients window {k}"),
                format!("length {t_len}"),
                format!("length {len}"),
            ));
        }
    }
    net.validate(cfg)?;
    let weight = 1.0 / batch.len() as f64;
    let windows: Vec<&[f64]> = batch.iter().map(|s| s.borrow().input.as_slice()).collect();
    let trace = batched::forward(net, cfg, &windows);
    let errs: Vec<f64> = trace
        .pred
        .iter()
        .zip(batch)
        .map(|(p, s)| p - s.borrow().target)
        .collect();
    let sum_sq: f64 = errs.iter().map(|e| e * e).sum();
    let dpred: Vec<f64> = errs.iter().map(|e| 2.0 * e * weight).collect();
    let mut grads = net.zeros_like();
    batched::backward(net, cfg, &trace, &dpred, &mut grads);
    let loss = sum_sq * weight;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "batch loss {loss}; parameters have blown up"
        )));
    }
    Ok((loss, grads))
}

pub fn global_norm(grads: &GradientSet) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradientSet, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// First and second moment estimates for the Adam update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: NetworkParams,
    v: NetworkParams,
    step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`, `θ ← θ - lr · m̂ / (√v̂ + ε)`.
pub fn optimizer_step(
    state: &mut AdamState,
    params: &mut NetworkParams,
    grads: &GradientSet,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    let eps = cfg.epsilon;

    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over the epoch's minibatches (model units).
    pub train_loss: f64,
    /// Validation RMSE after the epoch (model units).
    pub val_rmse: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub stopped_early: bool,
    /// Filled in by the caller once predictions are mapped back to microstrain.
    pub final_eval: Option<EvalResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evaluations: Vec<EvalResult>,
}

impl TrainReport {
    /// Copy with wall-clock times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.wall_clock_s = 0.0);
        r
    }
}

fn dataset_rmse(net: &NetworkParams, cfg: &NetworkConfig, ds: &WindowedDataset) -> Result<f64> {
    let windows: Vec<&[f64]> = ds.samples.iter().map(|s| s.input.as_slice()).collect();
    let pred: Vector = batched::predict(net, cfg, &windows).into();
    rmse(&pred, &ds.targets())
}

/// Minibatch Adam over shuffled `train_set`; returns the parameters with the
/// lowest validation RMSE seen.
pub fn train(
    cfg: &NetworkConfig,
    tcfg: &TrainConfig,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
) -> Result<(NetworkParams, TrainReport)> {
    cfg.validate()?;
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for ds in [train_set, val_set] {
        if ds.window != cfg.window_size {
            return Err(Error::shape(
                "dataset window size",
                cfg.window_size,
                ds.window,
            ));
        }
    }

    let mut rng = Prng::new(tcfg.seed);
    let mut params = init_network(cfg, &mut rng)?;
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_val = dataset_rmse(&params, cfg, val_set)?;
    let mut best_epoch = 0;
    let mut records = Vec::with_capacity(tcfg.epochs);
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut sum_loss = 0.0;
        for (b, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &train_set.samples[k]).collect();
            let (loss, mut grads) = match bptt_gradients(&params, &batch, cfg) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b + 1,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            let norm = clip_global_norm(&mut grads, tcfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            optimizer_step(&mut adam, &mut params, &grads, tcfg);
            sum_loss += loss * chunk.len() as f64;
        }
        let train_loss = sum_loss / train_set.len() as f64;
        let val_rmse = dataset_rmse(&params, cfg, val_set)?;
        if !val_rmse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: train_loss,
            });
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse,
            wall_clock_s: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train_loss={train_loss:.6} val_rmse={val_rmse:.6}");

        if val_rmse < best_val {
            best_val = val_rmse;
            best_epoch = epoch;
            best.clone_from(&params);
        } else if epoch - best_epoch >= tcfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let report = TrainReport {
        network: cfg.clone(),
        training: tcfg.clone(),
        seed: tcfg.seed,
        epochs: records,
        best_epoch,
        best_val_rmse: best_val,
        stopped_early,
        final_eval: None,
        evaluations: Vec::new(),
    };
    Ok((best, report))
}
