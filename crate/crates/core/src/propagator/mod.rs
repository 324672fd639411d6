//! Fixed-step RK4 integration of forward/backward stochastic trajectories
//! and seed-ordered ensemble statistics.

mod store;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bath::NoiseSampler;
use crate::dataset::{observable_len, vectorize_into};
use crate::error::{CoreError, Result};
use crate::grid::TimeGrid;
use crate::hierarchy::{project_into, EffectiveHamiltonian};
use crate::models::PreparedModel;

pub use store::{StoreManifest, TrajectoryStore};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationOptions {
    /// Evaluate the noise exactly at RK4 half steps instead of interpolating
    /// linearly between grid points.
    pub exact_substeps: bool,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self { exact_substeps: true }
    }
}

/// Reduced density matrices `|Psi_0^f><Psi_0^b|` of one seed on every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub grid: TimeGrid,
    pub d_s: usize,
    /// `(n_steps + 1) * d_s²` entries, each matrix row-major.
    pub rho: Vec<Complex64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rho_at(&self, i: usize) -> &[Complex64] {
        let m = self.d_s * self.d_s;
        &self.rho[i * m..(i + 1) * m]
    }
}

/// Integrates trajectories of one model on one grid; reusable across seeds.
pub struct TrajectoryIntegrator<'a> {
    model: &'a PreparedModel,
    grid: TimeGrid,
    options: PropagationOptions,
    samplers: Vec<NoiseSampler>,
}

struct Rk4Scratch {
    k: [Vec<Complex64>; 4],
    stage: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Rk4Scratch {
    fn new(len: usize, work: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![ZERO; len]),
            stage: vec![ZERO; len],
            work: vec![ZERO; work],
        }
    }
}

fn derivative(h: &EffectiveHamiltonian, noise: &[Complex64], x: &[Complex64], out: &mut [Complex64], work: &mut [Complex64]) {
    h.apply_into(noise, x, out, work);
    for v in out.iter_mut() {
        *v *= MINUS_I;
    }
}

/// One classic RK4 step of `dpsi/dt = -i H(t) psi`; `noise` holds the
/// per-bath values at `t`, `t + dt/2` and `t + dt`.
fn rk4_step(h: &EffectiveHamiltonian, noise: [&[Complex64]; 3], psi: &mut [Complex64], dt: f64, s: &mut Rk4Scratch) {
    let [k1, k2, k3, k4] = &mut s.k;
    derivative(h, noise[0], psi, k1, &mut s.work);
    for ((st, p), k) in s.stage.iter_mut().zip(psi.iter()).zip(k1.iter()) {
        *st = p + k * (0.5 * dt);
    }
    derivative(h, noise[1], &s.stage, k2, &mut s.work);
    for ((st, p), k) in s.stage.iter_mut().zip(psi.iter()).zip(k2.iter()) {
        *st = p + k * (0.5 * dt);
    }
    derivative(h, noise[1], &s.stage, k3, &mut s.work);
    for ((st, p), k) in s.stage.iter_mut().zip(psi.iter()).zip(k3.iter()) {
        *st = p + k * dt;
    }
    derivative(h, noise[2], &s.stage, k4, &mut s.work);
    let w = dt / 6.0;
    for (i, p) in psi.iter_mut().enumerate() {
        *p += (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]) * w;
    }
}

fn noise_slot(table: &[Complex64], nb: usize, i: usize) -> &[Complex64] {
    &table[i * nb..(i + 1) * nb]
}

impl<'a> TrajectoryIntegrator<'a> {
    pub fn new(model: &'a PreparedModel, grid: TimeGrid, options: PropagationOptions) -> Self {
        let noise_grid = if options.exact_substeps { grid.half_step() } else { grid };
        let samplers = model
            .schemes()
            .iter()
            .map(|s| NoiseSampler::new(s.clone(), noise_grid))
            .collect();
        Self {
            model,
            grid,
            options,
            samplers,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Forward (`xi1`) and backward (`conj(xi2*)`) noise on the half-step
    /// grid, laid out `[m * n_baths + b]`.
    fn noise_tables(&self, seed: u64) -> (Vec<Complex64>, Vec<Complex64>) {
        let nb = self.samplers.len();
        let m = 2 * self.grid.n_steps() + 1;
        let mut fwd = vec![ZERO; m * nb];
        let mut bwd = vec![ZERO; m * nb];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (b, sampler) in self.samplers.iter().enumerate() {
            let r = sampler.sample_from(&mut rng, seed);
            for i in 0..m {
                let (f, s) = if self.options.exact_substeps {
                    (r.xi1[i], r.xi2_star[i])
                } else if i % 2 == 0 {
                    (r.xi1[i / 2], r.xi2_star[i / 2])
                } else {
                    let (lo, hi) = (i / 2, i / 2 + 1);
                    (0.5 * (r.xi1[lo] + r.xi1[hi]), 0.5 * (r.xi2_star[lo] + r.xi2_star[hi]))
                };
                fwd[i * nb + b] = f;
                bwd[i * nb + b] = s.conj();
            }
        }
        (fwd, bwd)
    }

    pub fn run(&self, seed: u64) -> Result<Trajectory> {
        let h = self.model.hamiltonian();
        let ds = self.model.system_dim();
        let nb = h.n_baths();
        let (fwd_noise, bwd_noise) = self.noise_tables(seed);
        let (f0, b0) = self.model.initial_states(self.grid.t0());
        let mut psi_f = f0.amplitudes().to_vec();
        let mut psi_b = b0.amplitudes().to_vec();
        let len = psi_f.len();
        let mut scratch = Rk4Scratch::new(len, nb * ds);

        let m = ds * ds;
        let mut rho = vec![ZERO; self.grid.len() * m];
        project_into(&psi_f[..ds], &psi_b[..ds], &mut rho[..m]);
        let dt = self.grid.dt();
        for n in 0..self.grid.n_steps() {
            let fwd = [0, 1, 2].map(|j| noise_slot(&fwd_noise, nb, 2 * n + j));
            let bwd = [0, 1, 2].map(|j| noise_slot(&bwd_noise, nb, 2 * n + j));
            rk4_step(h, fwd, &mut psi_f, dt, &mut scratch);
            rk4_step(h, bwd, &mut psi_b, dt, &mut scratch);
            let finite = |v: &[Complex64]| v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
            if !finite(&psi_f) || !finite(&psi_b) {
                return Err(CoreError::NumericAbort {
                    seed,
                    t: self.grid.time(n + 1),
                });
            }
            project_into(&psi_f[..ds], &psi_b[..ds], &mut rho[(n + 1) * m..(n + 2) * m]);
        }
        Ok(Trajectory {
            seed,
            grid: self.grid,
            d_s: ds,
            rho,
        })
    }
}

pub fn integrate_trajectory(model: &PreparedModel, seed: u64, grid: TimeGrid) -> Result<Trajectory> {
    TrajectoryIntegrator::new(model, grid, PropagationOptions::default()).run(seed)
}

/// Running mean of `rho` and per-component standard error of its observable
/// vector, accumulated strictly in seed order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    grid: TimeGrid,
    d_s: usize,
    seed0: u64,
    n: usize,
    model_hash: u64,
    sum: Vec<Complex64>,
    obs_mean: Vec<f64>,
    obs_m2: Vec<f64>,
}

impl EnsembleStats {
    pub fn empty(grid: TimeGrid, d_s: usize, seed0: u64, model_hash: u64) -> Self {
        let m = observable_len(d_s);
        Self {
            grid,
            d_s,
            seed0,
            n: 0,
            model_hash,
            sum: vec![ZERO; grid.len() * d_s * d_s],
            obs_mean: vec![0.0; grid.len() * m],
            obs_m2: vec![0.0; grid.len() * m],
        }
    }

    /// Folds in the next trajectory; its seed must be `seed0 + n`.
    pub fn push(&mut self, traj: &Trajectory) -> Result<()> {
        if traj.seed != self.next_seed() || traj.grid != self.grid || traj.d_s != self.d_s {
            return Err(CoreError::Structural(format!(
                "trajectory with seed {} does not continue ensemble at seed {}",
                traj.seed,
                self.next_seed()
            )));
        }
        self.n += 1;
        let k = self.n as f64;
        for (s, r) in self.sum.iter_mut().zip(&traj.rho) {
            *s += r;
        }
        let m = observable_len(self.d_s);
        let mut obs = vec![0.0; m];
        for i in 0..self.grid.len() {
            vectorize_into(traj.rho_at(i), self.d_s, &mut obs);
            let mean = &mut self.obs_mean[i * m..(i + 1) * m];
            let m2 = &mut self.obs_m2[i * m..(i + 1) * m];
            for c in 0..m {
                let delta = obs[c] - mean[c];
                mean[c] += delta / k;
                m2[c] += delta * (obs[c] - mean[c]);
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed0(&self) -> u64 {
        self.seed0
    }

    pub fn next_seed(&self) -> u64 {
        self.seed0 + self.n as u64
    }

    pub fn model_hash(&self) -> u64 {
        self.model_hash
    }

    pub fn n_components(&self) -> usize {
        observable_len(self.d_s)
    }

    /// Mean reduced density matrix at grid index `i`.
    pub fn mean_at(&self, i: usize) -> Vec<Complex64> {
        let m = self.d_s * self.d_s;
        let n = self.n.max(1) as f64;
        self.sum[i * m..(i + 1) * m].iter().map(|s| s / n).collect()
    }

    pub fn mean_series(&self) -> Vec<Vec<Complex64>> {
        (0..self.grid.len()).map(|i| self.mean_at(i)).collect()
    }

    /// Observable vector of the mean density matrix at every grid point.
    pub fn observable_series(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let mut v = vec![0.0; self.n_components()];
            vectorize_into(&self.mean_at(i), self.d_s, &mut v);
            out.push(v);
        }
        out
    }

    /// Sample standard deviation over `sqrt(n)` per observable component.
    pub fn se_at(&self, i: usize) -> Vec<f64> {
        let m = self.n_components();
        if self.n < 2 {
            return vec![0.0; m];
        }
        let n = self.n as f64;
        self.obs_m2[i * m..(i + 1) * m]
            .iter()
            .map(|m2| (m2.max(0.0) / (n - 1.0)).sqrt() / n.sqrt())
            .collect()
    }

    /// Largest component standard error at every grid point.
    pub fn se_summary(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.se_at(i).into_iter().fold(0.0, f64::max))
            .collect()
    }
}

/// `||rho - rho^dagger||_F / ||rho||_F` of the ensemble mean per time point.
pub fn hermiticity_diagnostic(stats: &EnsembleStats) -> Vec<f64> {
    let d = stats.d_s();
    (0..stats.grid().len())
        .map(|t| {
            let rho = stats.mean_at(t);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..d {
                for j in 0..d {
                    num += (rho[i * d + j] - rho[j * d + i].conj()).norm_sqr();
                    den += rho[i * d + j].norm_sqr();
                }
            }
            if den > 0.0 {
                (num / den).sqrt()
            } else {
                0.0
            }
        })
        .collect()
}

/// Runs or extends ensembles of one model with bounded parallelism.
pub struct EnsembleRunner<'a> {
    integrator: TrajectoryIntegrator<'a>,
    pool: Option<rayon::ThreadPool>,
    chunk: usize,
}

impl<'a> EnsembleRunner<'a> {
    /// `workers = 0` uses the global rayon pool; `1` runs serially.
    pub fn new(model: &'a PreparedModel, grid: TimeGrid, options: PropagationOptions, workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| CoreError::Structural(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let chunk = match workers {
            1 => 1,
            0 => 4 * rayon::current_num_threads(),
            w => 4 * w,
        };
        Ok(Self {
            integrator: TrajectoryIntegrator::new(model, grid, options),
            pool,
            chunk: chunk.max(1),
        })
    }

    fn integrate_chunk(&self, seeds: std::ops::Range<u64>, parallel: bool) -> Vec<Result<Trajectory>> {
        if !parallel {
            return seeds.map(|s| self.integrator.run(s)).collect();
        }
        let work = || seeds.into_par_iter().map(|s| self.integrator.run(s)).collect();
        match &self.pool {
            Some(pool) => pool.install(work),
            None => work(),
        }
    }

    fn accumulate(&self, stats: &mut EnsembleStats, extra: usize, mut store: Option<&mut TrajectoryStore>) -> Result<()> {
        let parallel = self.chunk > 1;
        let mut remaining = extra;
        while remaining > 0 {
            let take = remaining.min(self.chunk);
            let start = stats.next_seed();
            for traj in self.integrate_chunk(start..start + take as u64, parallel) {
                let traj = traj?;
                if let Some(store) = store.as_deref_mut() {
                    store.append(&traj)?;
                }
                stats.push(&traj)?;
            }
            remaining -= take;
            log::debug!("ensemble at {} trajectories", stats.n());
        }
        Ok(())
    }

    pub fn run(&self, n: usize, seed0: u64, store: Option<&mut TrajectoryStore>) -> Result<EnsembleStats> {
        if n < 2 {
            return Err(CoreError::Domain(format!("ensemble needs at least 2 trajectories, got {n}")));
        }
        let model = self.integrator.model;
        if let Some(s) = store.as_deref() {
            check_store(s, model.hash(), self.integrator.grid, seed0, 0, model.system_dim())?;
        }
        let mut stats = EnsembleStats::empty(self.integrator.grid, model.system_dim(), seed0, model.hash());
        self.accumulate(&mut stats, n, store)?;
        Ok(stats)
    }

    /// Continues the seed range of `stats` by `extra` trajectories.
    pub fn extend(&self, stats: &EnsembleStats, extra: usize, store: Option<&mut TrajectoryStore>) -> Result<EnsembleStats> {
        let model = self.integrator.model;
        if stats.model_hash() != model.hash() || stats.grid() != self.integrator.grid {
            return Err(CoreError::Structural("statistics belong to a different model or grid".into()));
        }
        if let Some(s) = store.as_deref() {
            check_store(s, model.hash(), stats.grid(), stats.seed0(), stats.n(), stats.d_s())?;
        }
        let mut out = stats.clone();
        self.accumulate(&mut out, extra, store)?;
        Ok(out)
    }
}

fn check_store(store: &TrajectoryStore, hash: u64, grid: TimeGrid, seed0: u64, count: usize, d_s: usize) -> Result<()> {
    let m = store.manifest();
    if m.model_hash != hash || m.grid != grid || m.d_s != d_s {
        return Err(CoreError::Structural("store belongs to a different model or grid".into()));
    }
    if m.seed0 != seed0 || m.count != count as u64 {
        return Err(CoreError::Structural(format!(
            "store holds seeds {}..{} but ensemble continues at {}",
            m.seed0,
            m.seed0 + m.count,
            seed0 + count as u64
        )));
    }
    Ok(())
}

pub fn run_ensemble(
    model: &PreparedModel,
    n: usize,
    seed0: u64,
    grid: TimeGrid,
    store: Option<&mut TrajectoryStore>,
) -> Result<EnsembleStats> {
    EnsembleRunner::new(model, grid, PropagationOptions::default(), 0)?.run(n, seed0, store)
}

pub fn extend_ensemble(
    model: &PreparedModel,
    stats: &EnsembleStats,
    extra: usize,
    store: Option<&mut TrajectoryStore>,
) -> Result<EnsembleStats> {
    EnsembleRunner::new(model, stats.grid(), PropagationOptions::default(), 0)?.extend(stats, extra, store)
}
