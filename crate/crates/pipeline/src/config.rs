use stochdyn_nn::{ModelConfig, TrainConfig};

use crate::error::{PipelineError, Result};

pub const GROUPS: usize = 10;
pub const DEFAULT_EPS1: f64 = 0.01;
pub const DEFAULT_EPS2: f64 = 0.05;
pub const DEFAULT_GROWTH: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Standard-error threshold of the converged prefix.
    pub eps1: f64,
    /// Threshold on the spread of the group forecasts.
    pub eps2: f64,
    /// Trajectory counts of the ten nested groups, strictly increasing.
    pub group_counts: Vec<usize>,
    pub grid: Vec<ModelConfig>,
    pub train: TrainConfig,
    /// End time of the stitched result; `None` uses the whole source grid.
    pub horizon: Option<f64>,
    pub max_rounds: usize,
    /// Factor applied to every group count after a rejected round.
    pub growth: f64,
    /// Search the grid separately for every group instead of once per round.
    pub full_search: bool,
    /// Seeds the data splits and batch shuffles.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(n_total: usize, grid: Vec<ModelConfig>) -> Result<Self> {
        Ok(Self {
            eps1: DEFAULT_EPS1,
            eps2: DEFAULT_EPS2,
            group_counts: geometric_groups(n_total)?,
            grid,
            train: TrainConfig::default(),
            horizon: None,
            max_rounds: 3,
            growth: DEFAULT_GROWTH,
            full_search: false,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.group_counts.len() != GROUPS {
            return bad(format!("need {GROUPS} group counts, got {}", self.group_counts.len()));
        }
        if self.group_counts[0] < 2 || self.group_counts.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("group counts {:?} must be strictly increasing from at least 2", self.group_counts));
        }
        if !(self.eps1 >= 0.0) || !(self.eps2 >= 0.0) {
            return bad(format!("thresholds must be non-negative (eps1 {}, eps2 {})", self.eps1, self.eps2));
        }
        if self.grid.is_empty() {
            return bad("model grid is empty".into());
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(self.growth > 1.0) || !self.growth.is_finite() {
            return bad(format!("growth factor {} must exceed 1", self.growth));
        }
        let d_s = self.grid[0].d_s;
        for m in &self.grid {
            m.validate()?;
            if m.d_s != d_s {
                return bad("grid mixes system dimensions".into());
            }
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Ten counts spaced geometrically from `n_total / 10` to `n_total`.
pub fn geometric_groups(n_total: usize) -> Result<Vec<usize>> {
    if n_total < 20 {
        return Err(PipelineError::Config(format!("{n_total} trajectories cannot form {GROUPS} nested groups")));
    }
    let lo = n_total as f64 / 10.0;
    let mut out: Vec<usize> = (0..GROUPS)
        .map(|i| (lo * 10f64.powf(i as f64 / (GROUPS - 1) as f64)).round() as usize)
        .collect();
    out[GROUPS - 1] = n_total;
    make_increasing(&mut out);
    Ok(out)
}

/// Scales every count by `factor`, rounding up and keeping the sequence strictly increasing.
pub fn grow_groups(counts: &[usize], factor: f64) -> Vec<usize> {
    let mut out: Vec<usize> = counts
        .iter()
        .map(|&n| ((n as f64 * factor).ceil() as usize).max(n + 1))
        .collect();
    make_increasing(&mut out);
    out
}

fn make_increasing(v: &mut [usize]) {
    v[0] = v[0].max(2);
    for i in 1..v.len() {
        if v[i] <= v[i - 1] {
            v[i] = v[i - 1] + 1;
        }
    }
}
