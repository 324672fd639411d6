//! Branched forecaster: populations and the real and imaginary coherences
//! each pass through a downsampling convolution, a width-preserving
//! convolution and an LSTM stack; the two coherence branches are summed and
//! fused with the population branch by iterative attentional fusion before
//! an affine read-out of the next observable vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochdyn_core::dataset::{observable_len, Window};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Conv1d, Iaff, Linear, Lstm};
use crate::params::ParamStore;

/// Time length produced by the downsampling layer.
pub const SEGMENTS: usize = 10;

/// Kernel size of the second, width-preserving convolution.
pub const MIX_KERNEL: usize = 3;

fn segments(l: usize, p: usize, r: usize) -> Option<usize> {
    (p >= 1 && r >= 1 && p <= l).then(|| (l - p) / r + 1)
}

/// Kernel size and stride that cut a length-`l` window into exactly
/// [`SEGMENTS`] pieces. Starts from `p = round(0.1 (l - 1))`,
/// `r = round(0.1 l)` and tries `p ± 1`; if that is not enough, the
/// stride closest to the nominal one is taken with the nearest working
/// kernel size.
pub fn downsample_geometry(l: usize) -> Result<(usize, usize)> {
    if l < SEGMENTS {
        return Err(NnError::Structural(format!(
            "window length {l} is shorter than {SEGMENTS} segments"
        )));
    }
    let p0 = ((0.1 * (l as f64 - 1.0)).round() as usize).max(1);
    let r0 = ((0.1 * l as f64).round() as usize).max(1);
    for p in [p0, p0 + 1, p0.saturating_sub(1)] {
        if segments(l, p, r0) == Some(SEGMENTS) {
            return Ok((p, r0));
        }
    }
    let mut strides: Vec<usize> = (1..=l).collect();
    strides.sort_by_key(|&r| (r.abs_diff(r0), r));
    let mut kernels: Vec<usize> = (1..=l).collect();
    kernels.sort_by_key(|&p| (p.abs_diff(p0), p));
    for &r in &strides {
        if let Some(&p) = kernels.iter().find(|&&p| segments(l, p, r) == Some(SEGMENTS)) {
            return Ok((p, r));
        }
    }
    unreachable!("stride 1 with kernel l - 9 always gives ten segments")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input window length `L`.
    pub window: usize,
    pub d_s: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Hidden width of each stacked LSTM layer.
    pub lstm_units: Vec<usize>,
    pub seed: u64,
    pub readout: Readout,
}

/// How the affine head output becomes the predicted observable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Readout {
    /// The head output is the prediction.
    Direct,
    /// The head output is added to the last input step.
    LastStep,
    /// Last input step plus head output plus a learned linear map of the
    /// whole flattened window (zero-initialized).
    #[default]
    LinearSkip,
}

impl Readout {
    pub fn code(self) -> u8 {
        match self {
            Readout::Direct => 0,
            Readout::LastStep => 1,
            Readout::LinearSkip => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Readout::Direct),
            1 => Some(Readout::LastStep),
            2 => Some(Readout::LinearSkip),
            _ => None,
        }
    }
}

impl ModelConfig {
    /// Config with the downsampling geometry derived from `window`.
    pub fn new(window: usize, d_s: usize, lstm_units: Vec<usize>, seed: u64) -> Result<Self> {
        let (conv_kernel, conv_stride) = downsample_geometry(window)?;
        let cfg = Self {
            window,
            d_s,
            conv_kernel,
            conv_stride,
            lstm_units,
            seed,
            readout: Readout::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_s < 2 {
            return Err(NnError::Structural(format!("system dimension {} < 2", self.d_s)));
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) {
            return Err(NnError::Structural(format!(
                "lstm widths {:?} must be non-empty and positive",
                self.lstm_units
            )));
        }
        if segments(self.window, self.conv_kernel, self.conv_stride) != Some(SEGMENTS) {
            return Err(NnError::Structural(format!(
                "kernel {} and stride {} do not cut length {} into {SEGMENTS} segments",
                self.conv_kernel, self.conv_stride, self.window
            )));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        observable_len(self.d_s)
    }

    /// Channel widths of the population and coherence branches.
    pub fn branch_widths(&self) -> (usize, usize) {
        (self.d_s - 1, self.d_s * (self.d_s - 1) / 2)
    }

    pub fn hidden(&self) -> usize {
        *self.lstm_units.last().expect("validated")
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub down: Conv1d,
    pub mix: Conv1d,
    pub lstm: Vec<Lstm>,
}

impl Branch {
    fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let down = Conv1d::new(
            store,
            &format!("{name}.down"),
            channels,
            channels,
            cfg.conv_kernel,
            cfg.conv_stride,
            0,
            rng,
        );
        let mix = Conv1d::new(store, &format!("{name}.mix"), channels, channels, MIX_KERNEL, 1, 1, rng);
        let mut lstm = Vec::with_capacity(cfg.lstm_units.len());
        let mut n_in = channels;
        for (k, &h) in cfg.lstm_units.iter().enumerate() {
            lstm.push(Lstm::new(store, &format!("{name}.lstm{k}"), n_in, h, rng));
            n_in = h;
        }
        Self { down, mix, lstm }
    }

    /// `[B, L, C] -> [B, SEGMENTS, hidden]`
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.down.forward(g, store, x)?;
        let y = g.tanh(y);
        let y = self.mix.forward(g, store, y)?;
        let mut y = g.tanh(y);
        for layer in &self.lstm {
            y = layer.forward(g, store, y)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    pub diag: Branch,
    pub re: Branch,
    pub im: Branch,
    pub fusion: Iaff,
    pub head: Linear,
    pub skip: Option<Linear>,
}

/// Deterministic construction: parameters are drawn from a generator
/// seeded by `config.seed`, in a fixed creation order.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let (c_diag, c_off) = config.branch_widths();
    let diag = Branch::new(&mut store, "diag", c_diag, config, &mut rng);
    let re = Branch::new(&mut store, "re", c_off, config, &mut rng);
    let im = Branch::new(&mut store, "im", c_off, config, &mut rng);
    let h = config.hidden();
    let fusion = Iaff::new(&mut store, "fusion", h, &mut rng);
    let head = Linear::new(&mut store, "head", SEGMENTS * h, config.n_obs(), &mut rng);
    let skip = (config.readout == Readout::LinearSkip).then(|| {
        let n = config.n_obs();
        let skip = Linear::new(&mut store, "skip", config.window * n, n, &mut rng);
        store.get_mut(skip.w).data_mut().fill(0.0);
        store.get_mut(skip.b).data_mut().fill(0.0);
        skip
    });

    Ok(Model {
        config: config.clone(),
        store,
        diag,
        re,
        im,
        fusion,
        head,
        skip,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn n_params(&self) -> usize {
        self.store.n_scalars()
    }

    /// `inputs[B, L, d_s² - 1] -> [B, d_s² - 1]`
    pub fn forward(&self, g: &mut Graph, inputs: Var) -> Result<Var> {
        self.forward_with(g, &self.store, inputs)
    }

    /// Forward pass reading parameter values from `st`, which must have the
    /// layout of this model's own store.
    pub fn forward_with(&self, g: &mut Graph, st: &ParamStore, inputs: Var) -> Result<Var> {
        let cfg = &self.config;
        let n = cfg.n_obs();
        let shape = g.shape(inputs).to_vec();
        if shape.len() != 3 || shape[1] != cfg.window || shape[2] != n {
            return Err(NnError::Structural(format!(
                "model expects [B, {}, {n}] inputs, got {shape:?}",
                cfg.window
            )));
        }
        let (bsz, l) = (shape[0], shape[1]);
        let (c_diag, c_off) = cfg.branch_widths();
        let flat = g.reshape(inputs, &[bsz * l, n])?;
        let part = |g: &mut Graph, start: usize, len: usize| -> Result<Var> {
            let cols = g.slice_cols(flat, start, len)?;
            g.reshape(cols, &[bsz, l, len])
        };
        let x_diag = part(g, 0, c_diag)?;
        let x_re = part(g, c_diag, c_off)?;
        let x_im = part(g, c_diag + c_off, c_off)?;

        let f_diag = self.diag.forward(g, st, x_diag)?;
        let f_re = self.re.forward(g, st, x_re)?;
        let f_im = self.im.forward(g, st, x_im)?;
        let f_off = g.add(f_re, f_im)?;
        let fused = self.fusion.forward(g, st, f_diag, f_off)?;
        let h = cfg.hidden();
        let flat_features = g.reshape(fused, &[bsz, SEGMENTS * h])?;
        let out = self.head.forward(g, st, flat_features)?;
        match (cfg.readout, &self.skip) {
            (Readout::Direct, _) => Ok(out),
            (Readout::LastStep, _) => {
                let last = g.time_step(inputs, l - 1)?;
                g.add(out, last)
            }
            (Readout::LinearSkip, Some(skip)) => {
                let last = g.time_step(inputs, l - 1)?;
                let window = g.reshape(inputs, &[bsz, l * n])?;
                let lin = skip.forward(g, st, window)?;
                let y = g.add(out, lin)?;
                g.add(y, last)
            }
            (Readout::LinearSkip, None) => Err(NnError::Structural("linear skip layer missing".into())),
        }
    }

    /// Packs windows into a `[B, L, n]` constant.
    pub fn batch_input(&self, g: &mut Graph, windows: &[&Window]) -> Result<Var> {
        let (l, n) = (self.config.window, self.config.n_obs());
        let mut data = Vec::with_capacity(windows.len() * l * n);
        for w in windows {
            if w.inputs.len() != l || w.inputs.iter().any(|row| row.len() != n) {
                return Err(NnError::Structural(format!(
                    "window at {} does not have shape [{l}, {n}]",
                    w.start_index
                )));
            }
            w.inputs.iter().for_each(|row| data.extend_from_slice(row));
        }
        g.constant(&[windows.len(), l, n], data)
    }

    /// Inference-mode prediction of the step following `inputs`.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (l, n) = (self.config.window, self.config.n_obs());
        if inputs.len() != l || inputs.iter().any(|row| row.len() != n) {
            return Err(NnError::Structural(format!("prediction input must be [{l}, {n}]")));
        }
        let mut g = Graph::new(false);
        let x = g.constant(&[1, l, n], inputs.concat())?;
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).to_vec())
    }
}
