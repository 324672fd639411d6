//! Parameterized building blocks. Each layer owns only handles into a
//! shared [`ParamStore`]; forward passes record onto a [`Graph`].

use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Draws `U(-s, s)` entries with `s = 1/sqrt(fan_in)`.
pub(crate) fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches length")
}

/// Affine map over the last axis; on `[B, T, C]` inputs this is a
/// point-wise (kernel-size one) convolution.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.weight"), uniform_tensor(rng, &[n_in, n_out], n_in));
        let b = store.add(format!("{name}.bias"), uniform_tensor(rng, &[n_out], n_in));
        Self { w, b, n_in, n_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.n_in) {
            return Err(NnError::Structural(format!(
                "linear layer expects {} features, got shape {shape:?}",
                self.n_in
            )));
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, &[rows, self.n_in])?;
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(flat, w)?;
        let y = g.add_bias(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.n_out;
        g.reshape(y, &out_shape)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = kernel * c_in;
        let w = store.add(format!("{name}.weight"), uniform_tensor(rng, &[kernel, c_in, c_out], fan_in));
        let b = store.add(format!("{name}.bias"), uniform_tensor(rng, &[c_out], fan_in));
        Self {
            w,
            b,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), vec![0.0; channels]),
            running_var: store.add_buffer(format!("{name}.running_var"), vec![1.0; channels]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm(x, gamma, beta, (self.running_mean, self.running_var), store)
    }
}

/// One LSTM layer with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), uniform_tensor(rng, &[n_in, 4 * hidden], hidden));
        let w_hh = store.add(format!("{name}.w_hh"), uniform_tensor(rng, &[hidden, 4 * hidden], hidden));
        let b = store.add(format!("{name}.bias"), uniform_tensor(rng, &[4 * hidden], hidden));
        Self {
            w_ih,
            w_hh,
            b,
            n_in,
            hidden,
        }
    }

    /// Gate update from precomputed input projection `xw = x W_ih + b`.
    fn step(&self, g: &mut Graph, w_hh: Var, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hw = g.matmul(h, w_hh)?;
        let z = g.add(xw, hw)?;
        let n = self.hidden;
        let zi = g.slice_cols(z, 0, n)?;
        let zf = g.slice_cols(z, n, n)?;
        let zg = g.slice_cols(z, 2 * n, n)?;
        let zo = g.slice_cols(z, 3 * n, n)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gc = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, gc)?;
        let c_new = g.add(fc, ig)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Single cell: `x[B, n_in]`, states `[B, hidden]`; returns `(h, c)`.
    pub fn cell(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w_ih)?;
        let xw = g.add_bias(xw, b)?;
        self.step(g, w_hh, xw, h, c)
    }

    /// Runs over `x[B, T, n_in]` from zero states, returning `[B, T, hidden]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.n_in {
            return Err(NnError::Structural(format!(
                "lstm expects [B, T, {}], got {shape:?}",
                self.n_in
            )));
        }
        let (bsz, t) = (shape[0], shape[1]);
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let b = g.param(store, self.b);
        let flat = g.reshape(x, &[bsz * t, self.n_in])?;
        let xw = g.matmul(flat, w_ih)?;
        let xw = g.add_bias(xw, b)?;
        let xw = g.reshape(xw, &[bsz, t, 4 * self.hidden])?;
        let mut h = g.constant(&[bsz, self.hidden], vec![0.0; bsz * self.hidden])?;
        let mut c = h;
        let mut outputs = Vec::with_capacity(t);
        for s in 0..t {
            let xs = g.time_step(xw, s)?;
            (h, c) = self.step(g, w_hh, xs, h, c)?;
            outputs.push(h);
        }
        g.stack_time(&outputs)
    }
}

/// Point-wise bottleneck `PWConv -> BN -> ReLU -> PWConv -> BN`.
#[derive(Debug, Clone)]
struct ContextPath {
    pw1: Linear,
    bn1: BatchNorm,
    pw2: Linear,
    bn2: BatchNorm,
}

impl ContextPath {
    fn new(store: &mut ParamStore, name: &str, channels: usize, inner: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            pw1: Linear::new(store, &format!("{name}.pw1"), channels, inner, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), inner),
            pw2: Linear::new(store, &format!("{name}.pw2"), inner, channels, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), channels),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.pw1.forward(g, store, x)?;
        let y = self.bn1.forward(g, store, y)?;
        let y = g.relu(y);
        let y = self.pw2.forward(g, store, y)?;
        self.bn2.forward(g, store, y)
    }

    fn params(&self) -> [ParamId; 8] {
        [
            self.pw1.w,
            self.pw1.b,
            self.bn1.gamma,
            self.bn1.beta,
            self.pw2.w,
            self.pw2.b,
            self.bn2.gamma,
            self.bn2.beta,
        ]
    }
}

pub const MS_CAM_REDUCTION: usize = 4;

/// Multi-scale channel attention on `[B, T, C]`: a pooled global context
/// and a per-step local context, summed and squashed by a sigmoid.
#[derive(Debug, Clone)]
pub struct MsCam {
    global: ContextPath,
    local: ContextPath,
    pub channels: usize,
}

impl MsCam {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let inner = (channels / MS_CAM_REDUCTION).max(1);
        Self {
            global: ContextPath::new(store, &format!("{name}.global"), channels, inner, rng),
            local: ContextPath::new(store, &format!("{name}.local"), channels, inner, rng),
            channels,
        }
    }

    /// Attention weights `M(X)`, same shape as `x`.
    pub fn weights(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let pooled = g.mean_time(x)?;
        let gl = self.global.forward(g, store, pooled)?;
        let lo = self.local.forward(g, store, x)?;
        let sum = g.add_time_broadcast(lo, gl)?;
        Ok(g.sigmoid(sum))
    }

    /// Refined feature `X * M(X)`.
    pub fn refine(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let m = self.weights(g, store, x)?;
        g.mul(x, m)
    }

    /// Handles of all trainable tensors, global path first.
    pub fn params(&self) -> Vec<ParamId> {
        self.global.params().into_iter().chain(self.local.params()).collect()
    }
}

/// `M * x + (1 - M) * y` for attention weights `m`.
fn blend(g: &mut Graph, m: Var, x: Var, y: Var) -> Result<Var> {
    let mx = g.mul(m, x)?;
    let rest = g.one_minus(m);
    let ry = g.mul(rest, y)?;
    g.add(mx, ry)
}

fn check_same(g: &Graph, x: Var, y: Var) -> Result<()> {
    if g.shape(x) != g.shape(y) {
        return Err(NnError::Structural(format!(
            "fusion inputs differ in shape: {:?} vs {:?}",
            g.shape(x),
            g.shape(y)
        )));
    }
    Ok(())
}

/// Attentional feature fusion with the element-wise sum as the initial
/// integration.
#[derive(Debug, Clone)]
pub struct Aff {
    pub cam: MsCam,
}

impl Aff {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            cam: MsCam::new(store, &format!("{name}.cam"), channels, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        check_same(g, x, y)?;
        let s = g.add(x, y)?;
        let m = self.cam.weights(g, store, s)?;
        blend(g, m, x, y)
    }
}

/// Iterative fusion: the initial integration is itself an attentional
/// fusion, and its result drives the outer attention.
#[derive(Debug, Clone)]
pub struct Iaff {
    pub inner: MsCam,
    pub outer: MsCam,
}

impl Iaff {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inner: MsCam::new(store, &format!("{name}.inner"), channels, rng),
            outer: MsCam::new(store, &format!("{name}.outer"), channels, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        check_same(g, x, y)?;
        let s = g.add(x, y)?;
        let m1 = self.inner.weights(g, store, s)?;
        let integrated = blend(g, m1, x, y)?;
        let m2 = self.outer.weights(g, store, integrated)?;
        blend(g, m2, x, y)
    }
}
