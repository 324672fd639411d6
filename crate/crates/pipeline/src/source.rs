//! Nested ensembles: every group is the first `n` members of one seed sequence.

use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stochdyn_core::dataset::observable_len;
use stochdyn_core::models::PreparedModel;
use stochdyn_core::propagator::{EnsembleRunner, EnsembleStats, PropagationOptions, TrajectoryStore};
use stochdyn_core::TimeGrid;

use crate::error::{PipelineError, Result};

/// Observable mean and standard-error summary of the first `n` members.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub n: usize,
    pub series: Vec<Vec<f64>>,
    pub se_summary: Vec<f64>,
}

pub trait EnsembleSource {
    fn d_s(&self) -> usize;
    /// Time points of the series returned by [`EnsembleSource::group`].
    fn times(&self) -> Vec<f64>;
    fn group(&mut self, n: usize) -> Result<GroupData>;
}

/// Trajectories persisted in a store and extended on demand.
pub struct StoreSource<'a> {
    runner: EnsembleRunner<'a>,
    store: &'a mut TrajectoryStore,
    stride: usize,
    cursor: EnsembleStats,
}

impl<'a> StoreSource<'a> {
    /// `stride` thins the simulation grid before the data reach the forecaster.
    pub fn new(
        model: &'a PreparedModel,
        grid: TimeGrid,
        store: &'a mut TrajectoryStore,
        stride: usize,
        workers: usize,
    ) -> Result<Self> {
        grid.subsample(stride)?;
        let m = store.manifest();
        if m.model_hash != model.hash() || m.grid != grid {
            return Err(PipelineError::Structural("trajectory store belongs to a different model or grid".into()));
        }
        let cursor = EnsembleStats::empty(grid, model.system_dim(), m.seed0, model.hash());
        Ok(Self {
            runner: EnsembleRunner::new(model, grid, PropagationOptions::default(), workers)?,
            store,
            stride,
            cursor,
        })
    }

    /// Statistics of the members served by the last call to `group`.
    pub fn stats(&self) -> &EnsembleStats {
        &self.cursor
    }
}

impl EnsembleSource for StoreSource<'_> {
    fn d_s(&self) -> usize {
        self.cursor.d_s()
    }

    fn times(&self) -> Vec<f64> {
        self.cursor.grid().times().step_by(self.stride).collect()
    }

    fn group(&mut self, n: usize) -> Result<GroupData> {
        if n < 2 {
            return Err(PipelineError::Config(format!("group of {n} trajectories")));
        }
        if n < self.cursor.n() {
            let c = &self.cursor;
            self.cursor = EnsembleStats::empty(c.grid(), c.d_s(), c.seed0(), c.model_hash());
        }
        let stored = self.store.len().min(n);
        while self.cursor.n() < stored {
            let traj = self.store.read(self.cursor.n())?;
            self.cursor.push(&traj)?;
        }
        if n > self.cursor.n() {
            self.cursor = self
                .runner
                .extend(&self.cursor, n - self.cursor.n(), Some(&mut *self.store))?;
        }
        Ok(GroupData {
            n,
            series: self.cursor.observable_series().into_iter().step_by(self.stride).collect(),
            se_summary: self.cursor.se_summary().into_iter().step_by(self.stride).collect(),
        })
    }
}

/// A known signal plus independent Gaussian member noise of standard
/// deviation `sigma(t)` at every time point, so the group mean carries an
/// error of `sigma(t) / sqrt(n)`.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    times: Vec<f64>,
    clean: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    d_s: usize,
    seed0: u64,
}

impl SyntheticSource {
    pub fn new(times: Vec<f64>, clean: Vec<Vec<f64>>, sigma: Vec<f64>, seed0: u64) -> Result<Self> {
        if times.is_empty() || clean.len() != times.len() || sigma.len() != times.len() {
            return Err(PipelineError::Structural("signal, noise scale and times differ in length".into()));
        }
        let m = clean[0].len();
        let d_s = (2..=16)
            .find(|&d| observable_len(d) == m)
            .ok_or_else(|| PipelineError::Structural(format!("{m} components is not an observable vector")))?;
        if clean.iter().any(|r| r.len() != m) || sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(PipelineError::Structural("ragged signal or negative noise scale".into()));
        }
        Ok(Self {
            times,
            clean,
            sigma,
            d_s,
            seed0,
        })
    }

    pub fn clean(&self) -> &[Vec<f64>] {
        &self.clean
    }

    fn member_noise(&self, k: usize, out: &mut [f64]) {
        let m = self.clean[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed0.wrapping_add(k as u64));
        for (i, s) in self.sigma.iter().enumerate() {
            for x in &mut out[i * m..(i + 1) * m] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = s * z;
            }
        }
    }
}

impl EnsembleSource for SyntheticSource {
    fn d_s(&self) -> usize {
        self.d_s
    }

    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn group(&mut self, n: usize) -> Result<GroupData> {
        if n < 2 {
            return Err(PipelineError::Config(format!("group of {n} members")));
        }
        let m = self.clean[0].len();
        let len = self.times.len() * m;
        let mut mean = vec![0.0; len];
        let mut m2 = vec![0.0; len];
        let mut x = vec![0.0; len];
        for k in 0..n {
            self.member_noise(k, &mut x);
            let kk = (k + 1) as f64;
            for j in 0..len {
                let d = x[j] - mean[j];
                mean[j] += d / kk;
                m2[j] += d * (x[j] - mean[j]);
            }
        }
        let nf = n as f64;
        let series = (0..self.times.len())
            .map(|i| (0..m).map(|c| self.clean[i][c] + mean[i * m + c]).collect())
            .collect();
        let se_summary = (0..self.times.len())
            .map(|i| {
                (0..m)
                    .map(|c| (m2[i * m + c] / (nf - 1.0)).sqrt() / nf.sqrt())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(GroupData { n, series, se_summary })
    }
}

/// Three damped oscillations sampled at `times`.
pub fn damped_cosines(times: &[f64]) -> Vec<Vec<f64>> {
    times
        .iter()
        .map(|&t| {
            vec![
                0.8 * (-0.1 * t).exp() * (1.3 * t).cos(),
                0.4 * (-0.15 * t).exp() * (0.9 * t + 0.5).cos(),
                0.3 * (-0.12 * t).exp() * (1.1 * t).sin(),
            ]
        })
        .collect()
}
