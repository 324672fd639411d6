//! Mini-batch Adam on mean squared error with early stopping.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochdyn_core::dataset::Window;

use crate::error::{NnError, Result};
use crate::graph::Graph;
use crate::model::Model;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub finetune_lr_factor: f64,
    pub finetune_epoch_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seeds the per-epoch batch shuffle.
    pub shuffle_seed: u64,
    /// Reset batch-norm running statistics to full training-set statistics
    /// after every epoch.
    pub recalibrate_bn: bool,
    /// Before pretraining, set the linear skip map (when the model has one)
    /// to the ridge regression of the one-step increments on the windows.
    pub skip_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            patience: 15,
            finetune_lr_factor: 0.1,
            finetune_epoch_factor: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
            recalibrate_bn: true,
            skip_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let factor_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !factor_ok(self.finetune_lr_factor) || !factor_ok(self.finetune_epoch_factor) {
            return Err(NnError::Structural("fine-tune factors must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(NnError::Structural(format!(
                "batch size {} / learning rate {} invalid",
                self.batch_size, self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(NnError::Structural("Adam moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate and epoch budget for the given mode.
    pub fn schedule(&self, mode: TrainMode) -> (f64, usize) {
        match mode {
            TrainMode::Pretrain => (self.learning_rate, self.epochs),
            TrainMode::Finetune => (
                self.learning_rate * self.finetune_lr_factor,
                ((self.epochs as f64 * self.finetune_epoch_factor).round() as usize).max(1),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub stop_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_stop_loss: f64,
    pub early_stopped: bool,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,t2_loss")?;
        for r in &self.epochs {
            writeln!(out, "{},{:?},{:?}", r.epoch, r.train_loss, r.stop_loss)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.named().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, store: &mut ParamStore, lr: f64, tc: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.step);
        let bc2 = 1.0 - tc.beta2.powi(self.step);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let grad = p.grad().to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let gj = grad[j];
                m[j] = tc.beta1 * m[j] + (1.0 - tc.beta1) * gj;
                v[j] = tc.beta2 * v[j] + (1.0 - tc.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *x -= lr * mh / (vh.sqrt() + tc.adam_eps);
            }
        }
    }
}

/// Inference-mode mean squared error over `windows`.
pub fn evaluate(model: &Model, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(NnError::Structural("cannot evaluate on zero windows".into()));
    }
    const CHUNK: usize = 256;
    let mut total = 0.0;
    for chunk in windows.chunks(CHUNK) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let mut g = Graph::new(false);
        let x = model.batch_input(&mut g, &refs)?;
        let y = model.forward(&mut g, x)?;
        let target: Vec<f64> = chunk.iter().flat_map(|w| w.target.iter().copied()).collect();
        let loss = g.mse(y, &target)?;
        total += g.value(loss)[0] * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Sets every batch-norm running statistic to its value over `windows`
/// taken as a single batch, so inference sees population statistics rather
/// than a lagging moving average. Returns the full-batch loss.
pub fn recalibrate_batch_norm(model: &mut Model, windows: &[Window]) -> Result<f64> {
    if windows.len() < 2 {
        return evaluate(model, windows);
    }
    let refs: Vec<&Window> = windows.iter().collect();
    let mut g = Graph::new(true);
    let x = model.batch_input(&mut g, &refs)?;
    let y = model.forward(&mut g, x)?;
    let target: Vec<f64> = windows.iter().flat_map(|w| w.target.iter().copied()).collect();
    let loss = g.mse(y, &target)?;
    for upd in g.bn_updates() {
        upd.assign(model.store_mut());
    }
    Ok(g.value(loss)[0])
}

/// Ridge strength relative to the mean diagonal of the normal matrix.
pub const SKIP_RIDGE: f64 = 1e-4;

/// Least-squares fit of the linear skip map: regresses `target - last step`
/// on the flattened window plus an intercept, with a ridge of
/// `SKIP_RIDGE` times the mean diagonal. Leaves the model untouched and
/// returns `false` without a skip layer or when the data are not finite.
pub fn fit_linear_skip(model: &mut Model, windows: &[Window]) -> Result<bool> {
    let Some(skip) = model.skip.clone() else {
        return Ok(false);
    };
    if windows.is_empty() {
        return Err(NnError::Structural("cannot fit the skip map on zero windows".into()));
    }
    let (l, n) = (model.config().window, model.config().n_obs());
    if let Some(w) = windows
        .iter()
        .find(|w| w.inputs.len() != l || w.target.len() != n || w.inputs.iter().any(|s| s.len() != n))
    {
        return Err(NnError::Structural(format!(
            "window of {} steps x {} components does not match the model ({l} x {n})",
            w.inputs.len(),
            w.target.len()
        )));
    }
    let finite = windows
        .iter()
        .all(|w| w.target.iter().chain(w.inputs.iter().flatten()).all(|x| x.is_finite()));
    if !finite {
        log::warn!("non-finite training data, skip map left at its initial value");
        return Ok(false);
    }
    let p = l * n + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DMatrix::<f64>::zeros(p, n);
    let mut row = vec![0.0; p];
    for w in windows {
        for (k, step) in w.inputs.iter().enumerate() {
            row[k * n..(k + 1) * n].copy_from_slice(step);
        }
        row[p - 1] = 1.0;
        let last = &w.inputs[l - 1];
        for i in 0..p {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..p {
                xtx[(i, j)] += ri * row[j];
            }
            for c in 0..n {
                xty[(i, c)] += ri * (w.target[c] - last[c]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(i, j)] = xtx[(j, i)];
        }
    }
    let ridge = SKIP_RIDGE * (xtx.trace() / p as f64).max(f64::MIN_POSITIVE);
    for i in 0..p {
        xtx[(i, i)] += ridge;
    }
    let Some(chol) = xtx.cholesky() else {
        log::warn!("skip normal equations are not positive definite, fit skipped");
        return Ok(false);
    };
    let sol = chol.solve(&xty);
    let store = model.store_mut();
    let wdata = store.get_mut(skip.w).data_mut();
    for i in 0..p - 1 {
        for c in 0..n {
            wdata[i * n + c] = sol[(i, c)];
        }
    }
    let bdata = store.get_mut(skip.b).data_mut();
    for c in 0..n {
        bdata[c] = sol[(p - 1, c)];
    }
    Ok(true)
}

/// Batches of `order`; a trailing singleton is folded into the previous
/// batch so batch statistics are always defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// One gradient step on a batch; returns the batch loss.
pub fn train_step(model: &mut Model, batch: &[&Window]) -> Result<(f64, Graph)> {
    let mut g = Graph::new(true);
    let x = model.batch_input(&mut g, batch)?;
    let y = model.forward(&mut g, x)?;
    let target: Vec<f64> = batch.iter().flat_map(|w| w.target.iter().copied()).collect();
    let loss = g.mse(y, &target)?;
    g.backward(loss)?;
    let value = g.value(loss)[0];
    Ok((value, g))
}

/// Minimizes the mean squared one-step error on `train_windows`, keeping
/// the weights with the lowest loss on `stop_windows` and stopping after
/// `patience` epochs without improvement. On divergence the model is left
/// at its best finite weights and an error is returned.
pub fn train(
    model: &mut Model,
    train_windows: &[Window],
    stop_windows: &[Window],
    tc: &TrainConfig,
    mode: TrainMode,
) -> Result<History> {
    tc.validate()?;
    if train_windows.is_empty() || stop_windows.is_empty() {
        return Err(NnError::Structural(format!(
            "training needs windows in both sets (got {} and {})",
            train_windows.len(),
            stop_windows.len()
        )));
    }
    let (lr, max_epochs) = tc.schedule(mode);
    if mode == TrainMode::Pretrain && tc.skip_init {
        fit_linear_skip(model, train_windows)?;
    }
    let mut adam = Adam::new(model.store());
    let mut rng = ChaCha8Rng::seed_from_u64(tc.shuffle_seed);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    let mut history = History {
        best_stop_loss: evaluate(model, stop_windows)?,
        ..History::default()
    };
    let mut best = model.store().clone();
    let mut since_best = 0;

    for epoch in 1..=max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in batches(&order, tc.batch_size) {
            let batch: Vec<&Window> = idx.iter().map(|&i| &train_windows[i]).collect();
            model.store_mut().zero_grads();
            let (loss, g) = train_step(model, &batch)?;
            if !loss.is_finite() {
                *model.store_mut() = best;
                return Err(NnError::Divergence { epoch });
            }
            let store = model.store_mut();
            g.accumulate_param_grads(store);
            for upd in g.bn_updates() {
                upd.apply(store);
            }
            adam.update(store, lr, tc);
            sum += loss * batch.len() as f64;
        }
        let train_loss = if tc.recalibrate_bn {
            recalibrate_batch_norm(model, train_windows)?
        } else {
            sum / train_windows.len() as f64
        };
        let stop_loss = evaluate(model, stop_windows)?;
        if !stop_loss.is_finite() {
            *model.store_mut() = best;
            return Err(NnError::Divergence { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            stop_loss,
        });
        if stop_loss < history.best_stop_loss {
            history.best_stop_loss = stop_loss;
            history.best_epoch = epoch;
            best.clone_from(model.store());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                history.early_stopped = true;
                break;
            }
        }
    }
    *model.store_mut() = best;
    log::debug!(
        "trained {} epochs, best t2 loss {:.3e} at epoch {}",
        history.epochs.len(),
        history.best_stop_loss,
        history.best_epoch
    );
    Ok(history)
}
