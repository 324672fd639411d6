//! Central finite-difference verification of reverse-mode gradients.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared in absolute terms. With
/// `h = 1e-5` and an O(1) scalar, double-precision round-off in the
/// difference quotient is about `1e-11`, and batch normalization can
/// amplify it by up to `1/sqrt(BN_EPS) ~ 3e2`; at a tolerance of `1e-4`
/// that resolution limit corresponds to a floor near `3e-5`.
pub const REL_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Batch-norm mode used for the forward passes.
    pub training: bool,
    /// Seeds the random projection that reduces the output to a scalar.
    pub seed: u64,
    /// Upper bound on checked entries per tensor; `usize::MAX` checks all.
    pub max_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            training: true,
            seed: 0,
            max_per_tensor: usize::MAX,
        }
    }
}

/// Compares analytic gradients of `sum_i w_i f(inputs)_i` (random `w` with
/// unit l1 norm) against central
/// differences, for every input tensor and every parameter in `store`.
pub fn gradcheck<F>(store: &mut ParamStore, inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let run = |store: &ParamStore, inputs: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new(opts.training);
        let vars = inputs
            .iter()
            .map(|t| g.constant(t.shape(), t.data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, store, &vars)?;
        Ok((g, vars, out))
    };

    let (g0, _, out0) = run(store, inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dist = Uniform::new(-1.0, 1.0).expect("finite bounds");
    let mut weights: Vec<f64> = (0..g0.value(out0).len()).map(|_| dist.sample(&mut rng)).collect();
    // unit l1 norm keeps the scalar O(1)
    let l1: f64 = weights.iter().map(|w| w.abs()).sum();
    weights.iter_mut().for_each(|w| *w /= l1);

    let loss = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let (mut g, _, out) = run(store, inputs)?;
        let s = g.dot(out, weights.clone())?;
        Ok(g.value(s)[0])
    };

    let (mut g, vars, out) = run(store, inputs)?;
    let s = g.dot(out, weights.clone())?;
    g.backward(s)?;
    store.zero_grads();
    g.accumulate_param_grads(store);
    let input_grads: Vec<Vec<f64>> = vars.iter().map(|v| g.grad(*v).to_vec()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_checked: 0,
    };
    let mut record = |a: f64, n: f64| {
        report.max_rel_error = report.max_rel_error.max(relative_error(a, n));
        report.n_checked += 1;
    };

    let mut perturbed = inputs.to_vec();
    for (k, grad) in input_grads.iter().enumerate() {
        for j in 0..grad.len().min(opts.max_per_tensor) {
            let x0 = perturbed[k].data()[j];
            perturbed[k].data_mut()[j] = x0 + FD_STEP;
            let up = loss(store, &perturbed)?;
            perturbed[k].data_mut()[j] = x0 - FD_STEP;
            let down = loss(store, &perturbed)?;
            perturbed[k].data_mut()[j] = x0;
            record(grad[j], (up - down) / (2.0 * FD_STEP));
        }
    }

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let grad = store.get(id).grad().to_vec();
        for (j, &a) in grad.iter().enumerate().take(opts.max_per_tensor) {
            let x0 = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = x0 + FD_STEP;
            let up = loss(store, inputs)?;
            store.get_mut(id).data_mut()[j] = x0 - FD_STEP;
            let down = loss(store, inputs)?;
            store.get_mut(id).data_mut()[j] = x0;
            record(a, (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}

/// Components with a built-in randomized gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    Conv1d,
    Downsample,
    LstmCell,
    BatchNorm,
    PwConv,
    MsCam,
    Aff,
    Iaff,
    Model,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 9] = [
        CheckTarget::Conv1d,
        CheckTarget::Downsample,
        CheckTarget::LstmCell,
        CheckTarget::BatchNorm,
        CheckTarget::PwConv,
        CheckTarget::MsCam,
        CheckTarget::Aff,
        CheckTarget::Iaff,
        CheckTarget::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckTarget::Conv1d => "conv1d",
            CheckTarget::Downsample => "downsample",
            CheckTarget::LstmCell => "lstm_cell",
            CheckTarget::BatchNorm => "batch_norm",
            CheckTarget::PwConv => "pwconv",
            CheckTarget::MsCam => "ms_cam",
            CheckTarget::Aff => "aff",
            CheckTarget::Iaff => "iaff",
            CheckTarget::Model => "model",
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let dist = Uniform::new(-1.0, 1.0).expect("finite bounds");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// Randomly perturbs every parameter so checks do not sit at the
/// deterministic initial values (e.g. unit batch-norm scales).
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let dist = Uniform::new(-0.5, 0.5).expect("finite bounds");
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x += dist.sample(rng));
    }
}

/// Gradient check of `target` on a random instance drawn from `seed`.
pub fn check_target(target: CheckTarget, seed: u64) -> Result<GradCheckReport> {
    use crate::layers::{Aff, BatchNorm, Conv1d, Iaff, Linear, Lstm, MsCam};
    use crate::model::{build_model, downsample_geometry, ModelConfig, Readout};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let opts = GradCheckOptions {
        seed: seed ^ 0x9e37_79b9,
        ..GradCheckOptions::default()
    };
    match target {
        CheckTarget::Conv1d => {
            let conv = Conv1d::new(&mut store, "conv", 2, 3, 3, 2, 1, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_tensor(&mut rng, &[1, 8, 2]);
            gradcheck(&mut store, &[x], opts, |g, st, v| conv.forward(g, st, v[0]))
        }
        CheckTarget::Downsample => {
            let l = 25 + (seed % 20) as usize;
            let (p, r) = downsample_geometry(l)?;
            let conv = Conv1d::new(&mut store, "down", 2, 2, p, r, 0, &mut rng);
            let x = random_tensor(&mut rng, &[2, l, 2]);
            gradcheck(&mut store, &[x], opts, |g, st, v| conv.forward(g, st, v[0]))
        }
        CheckTarget::LstmCell => {
            let cell = Lstm::new(&mut store, "cell", 3, 4, &mut rng);
            let x = random_tensor(&mut rng, &[2, 3]);
            let h = random_tensor(&mut rng, &[2, 4]);
            let c = random_tensor(&mut rng, &[2, 4]);
            gradcheck(&mut store, &[x, h, c], opts, |g, st, v| {
                let (h, c) = cell.cell(g, st, v[0], v[1], v[2])?;
                let hc = g.stack_time(&[h, c])?;
                Ok(hc)
            })
        }
        CheckTarget::BatchNorm => {
            let bn = BatchNorm::new(&mut store, "bn", 3);
            jitter(&mut store, &mut rng);
            let x = random_tensor(&mut rng, &[4, 3]);
            gradcheck(&mut store, &[x], opts, |g, st, v| bn.forward(g, st, v[0]))
        }
        CheckTarget::PwConv => {
            let pw = Linear::new(&mut store, "pw", 3, 2, &mut rng);
            let x = random_tensor(&mut rng, &[2, 5, 3]);
            gradcheck(&mut store, &[x], opts, |g, st, v| pw.forward(g, st, v[0]))
        }
        CheckTarget::MsCam => {
            let cam = MsCam::new(&mut store, "cam", 4, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_tensor(&mut rng, &[3, 5, 4]);
            gradcheck(&mut store, &[x], opts, |g, st, v| cam.refine(g, st, v[0]))
        }
        CheckTarget::Aff => {
            let aff = Aff::new(&mut store, "aff", 4, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_tensor(&mut rng, &[3, 5, 4]);
            let y = random_tensor(&mut rng, &[3, 5, 4]);
            gradcheck(&mut store, &[x, y], opts, |g, st, v| aff.forward(g, st, v[0], v[1]))
        }
        CheckTarget::Iaff => {
            let iaff = Iaff::new(&mut store, "iaff", 4, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_tensor(&mut rng, &[3, 5, 4]);
            let y = random_tensor(&mut rng, &[3, 5, 4]);
            gradcheck(&mut store, &[x, y], opts, |g, st, v| iaff.forward(g, st, v[0], v[1]))
        }
        CheckTarget::Model => {
            let d_s = if seed % 2 == 0 { 2 } else { 3 };
            let readout = [Readout::Direct, Readout::LastStep, Readout::LinearSkip][(seed % 3) as usize];
            let cfg = ModelConfig::new(20, d_s, vec![4, 3], seed)?.with_readout(readout);
            let mut model = build_model(&cfg)?;
            jitter(model.store_mut(), &mut rng);
            let x = random_tensor(&mut rng, &[6, 20, cfg.n_obs()]);
            let mut store = model.store().clone();
            gradcheck(&mut store, &[x], opts, |g, st, v| model.forward_with(g, st, v[0]))
        }
    }
}
