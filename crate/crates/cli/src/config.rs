//! TOML run configuration. Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use stochdyn_core::models::{
    build_fmo_with, build_sbm_with, FrenkelExcitonSpec, NoiseSettings, PreparedModel, SpinBosonSpec,
};
use stochdyn_core::TimeGrid;
use stochdyn_nn::{ModelConfig, Readout, TrainConfig};
use stochdyn_pipeline::{geometric_groups, PipelineConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub nn: NnSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSection {
    Sbm(SbmSection),
    Fmo(FmoSection),
}

/// Spin-boson model. `case` selects a preset; explicit values override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSection {
    pub case: Option<String>,
    pub epsilon: Option<f64>,
    pub v: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    /// Initial system state `[re_1, im_1, re_2, im_2]`, normalized on load;
    /// defaults to `|1>`.
    pub initial: Option<[f64; 4]>,
    #[serde(default = "default_sbm_nmax")]
    pub n_max: usize,
    #[serde(default)]
    pub noise: NoiseSection,
}

/// Frenkel exciton model; energies in cm^-1, `gamma` in fs^-1, time in fs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmoSection {
    pub site_energies: Vec<f64>,
    /// Full symmetric matrix with zero diagonal.
    pub couplings: Vec<Vec<f64>>,
    #[serde(default = "default_lambda")]
    pub lambda_reorg: f64,
    #[serde(default = "default_fmo_gamma")]
    pub gamma: f64,
    pub temperature: f64,
    /// One-based.
    #[serde(default = "one")]
    pub initial_site: usize,
    #[serde(default = "one")]
    pub n_max: usize,
    #[serde(default)]
    pub noise: NoiseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub cutoff_factor: f64,
    pub n_points: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = NoiseSettings::default();
        Self {
            cutoff_factor: d.cutoff_factor,
            n_points: d.n_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n: usize,
    pub seed0: u64,
    /// 0 uses every available core.
    pub workers: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n: 1000,
            seed0: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSection {
    /// Window lengths of the search grid.
    pub windows: Vec<usize>,
    /// LSTM widths of the search grid; each candidate stacks `lstm_layers` of one width.
    pub lstm_units: Vec<usize>,
    pub lstm_layers: usize,
    /// `linear_skip`, `last_step` or `direct`.
    pub readout: String,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub finetune_lr_factor: f64,
    pub finetune_epoch_factor: f64,
    pub recalibrate_bn: bool,
    pub skip_init: bool,
}

impl Default for NnSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        Self {
            windows: vec![20, 30, 40, 50, 60],
            lstm_units: vec![8, 16, 32, 64, 128],
            lstm_layers: 2,
            readout: "linear_skip".into(),
            seed: 0,
            learning_rate: tc.learning_rate,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            patience: tc.patience,
            finetune_lr_factor: tc.finetune_lr_factor,
            finetune_epoch_factor: tc.finetune_epoch_factor,
            recalibrate_bn: tc.recalibrate_bn,
            skip_init: tc.skip_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub eps1: f64,
    pub eps2: f64,
    /// Explicit group counts; empty spaces ten groups geometrically up to `ensemble.n`.
    pub groups: Vec<usize>,
    /// End time of the stitched result; defaults to `grid.t1`.
    pub horizon: Option<f64>,
    pub max_rounds: usize,
    pub growth: f64,
    pub full_search: bool,
    /// Every `stride`-th grid point is passed to the forecaster.
    pub stride: usize,
    pub seed: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            eps1: stochdyn_pipeline::config::DEFAULT_EPS1,
            eps2: stochdyn_pipeline::config::DEFAULT_EPS2,
            groups: Vec::new(),
            horizon: None,
            max_rounds: 3,
            growth: stochdyn_pipeline::config::DEFAULT_GROWTH,
            full_search: false,
            stride: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Trajectory store; relative paths resolve against `out`.
    pub store: PathBuf,
    pub out: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            store: PathBuf::from("trajectories.bin"),
            out: PathBuf::from("run"),
        }
    }
}

fn default_sbm_nmax() -> usize {
    4
}

fn default_lambda() -> f64 {
    35.0
}

fn default_fmo_gamma() -> f64 {
    1.0 / 50.0
}

fn one() -> usize {
    1
}

fn parse_readout(s: &str) -> Result<Readout> {
    match s {
        "linear_skip" => Ok(Readout::LinearSkip),
        "last_step" => Ok(Readout::LastStep),
        "direct" => Ok(Readout::Direct),
        other => Err(CliError::Config(format!(
            "unknown readout {other:?} (expected linear_skip, last_step or direct)"
        ))),
    }
}

impl SbmSection {
    pub fn spec(&self) -> Result<SpinBosonSpec> {
        let base = match self.case.as_deref() {
            Some(c) => {
                let mut chars = c.chars();
                match (chars.next(), chars.next()) {
                    (Some(l), None) => SpinBosonSpec::case(l.to_ascii_lowercase()),
                    _ => None,
                }
                .ok_or_else(|| CliError::Config(format!("unknown spin-boson case {c:?}")))?
            }
            None => {
                let missing: Vec<&str> = [
                    ("epsilon", self.epsilon),
                    ("v", self.v),
                    ("eta", self.eta),
                    ("gamma", self.gamma),
                    ("beta", self.beta),
                ]
                .iter()
                .filter(|(_, x)| x.is_none())
                .map(|(k, _)| *k)
                .collect();
                if !missing.is_empty() {
                    return Err(CliError::Config(format!(
                        "[model] needs `case` or all of epsilon, v, eta, gamma, beta (missing {})",
                        missing.join(", ")
                    )));
                }
                SpinBosonSpec::new(0.0, 0.0, 0.0, 1.0, 1.0)
            }
        };
        let spec = SpinBosonSpec::new(
            self.epsilon.unwrap_or(base.epsilon),
            self.v.unwrap_or(base.v),
            self.eta.unwrap_or(base.eta),
            self.gamma.unwrap_or(base.gamma),
            self.beta.unwrap_or(base.beta),
        );
        let spec = match self.initial {
            Some([a, b, c, d]) => {
                let norm = (a * a + b * b + c * c + d * d).sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(CliError::Config(format!("initial state {:?} cannot be normalized", [a, b, c, d])));
                }
                spec.with_initial([Complex64::new(a / norm, b / norm), Complex64::new(c / norm, d / norm)])
            }
            None => spec,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }
}

impl FmoSection {
    pub fn spec(&self) -> Result<FrenkelExcitonSpec> {
        if self.initial_site == 0 {
            return Err(CliError::Config("initial_site is one-based".into()));
        }
        let spec = FrenkelExcitonSpec {
            site_energies: self.site_energies.clone(),
            couplings: self.couplings.clone(),
            lambda_reorg: self.lambda_reorg,
            gamma: self.gamma,
            temperature: self.temperature,
            initial_site: self.initial_site - 1,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }
}

fn noise_settings(n: &NoiseSection) -> NoiseSettings {
    NoiseSettings {
        cutoff_factor: n.cutoff_factor,
        n_points: n.n_points,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every section without running anything expensive.
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelSection::Sbm(s) => {
                s.spec()?;
            }
            ModelSection::Fmo(f) => {
                f.spec()?;
            }
        }
        let grid = self.time_grid()?;
        if self.ensemble.n < 2 {
            return Err(CliError::Config("ensemble.n must be at least 2".into()));
        }
        let p = &self.pipeline;
        if p.stride == 0 || grid.n_steps() % p.stride != 0 {
            return Err(CliError::Config(format!(
                "pipeline.stride {} must divide the {} grid steps",
                p.stride,
                grid.n_steps()
            )));
        }
        if let Some(h) = p.horizon {
            if !(h > grid.t0()) || h > grid.t1() + 1e-9 * grid.t1().abs().max(1.0) {
                return Err(CliError::Config(format!("horizon {h} outside the grid")));
            }
        }
        let n = &self.nn;
        if n.windows.is_empty() || n.lstm_units.is_empty() || n.lstm_layers == 0 {
            return Err(CliError::Config("nn grid needs windows, lstm_units and lstm_layers >= 1".into()));
        }
        self.model_grid()?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        // small ensembles are fine for `simulate`; the group layout is
        // checked again when a pipeline is built
        if !p.groups.is_empty() || self.ensemble.n >= 20 {
            self.pipeline_config()?;
        }
        Ok(())
    }

    pub fn d_s(&self) -> usize {
        match &self.model {
            ModelSection::Sbm(_) => 2,
            ModelSection::Fmo(f) => f.site_energies.len(),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_bounds(self.grid.t0, self.grid.t1, self.grid.dt).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Time grid seen by the forecaster.
    pub fn data_grid(&self) -> Result<TimeGrid> {
        Ok(self.time_grid()?.subsample(self.pipeline.stride)?)
    }

    pub fn prepare_model(&self) -> Result<PreparedModel> {
        Ok(match &self.model {
            ModelSection::Sbm(s) => build_sbm_with(&s.spec()?, s.n_max, &noise_settings(&s.noise))?,
            ModelSection::Fmo(f) => build_fmo_with(&f.spec()?, f.n_max, &noise_settings(&f.noise))?,
        })
    }

    /// The `V = 0` spin-boson model, whose exact solution is known.
    pub fn dephasing_spec(&self) -> Option<(SpinBosonSpec, NoiseSettings)> {
        match &self.model {
            ModelSection::Sbm(s) => s
                .spec()
                .ok()
                .filter(|spec| spec.v == 0.0)
                .map(|spec| (spec, noise_settings(&s.noise))),
            ModelSection::Fmo(_) => None,
        }
    }

    pub fn model_grid(&self) -> Result<Vec<ModelConfig>> {
        let readout = parse_readout(&self.nn.readout)?;
        let mut out = Vec::new();
        for &units in &self.nn.lstm_units {
            for &window in &self.nn.windows {
                let cfg = ModelConfig::new(window, self.d_s(), vec![units; self.nn.lstm_layers], self.nn.seed)
                    .map_err(|e| CliError::Config(e.to_string()))?
                    .with_readout(readout);
                out.push(cfg);
            }
        }
        Ok(out)
    }

    pub fn train_config(&self) -> TrainConfig {
        let n = &self.nn;
        TrainConfig {
            learning_rate: n.learning_rate,
            epochs: n.epochs,
            batch_size: n.batch_size,
            patience: n.patience,
            finetune_lr_factor: n.finetune_lr_factor,
            finetune_epoch_factor: n.finetune_epoch_factor,
            shuffle_seed: self.pipeline.seed,
            recalibrate_bn: n.recalibrate_bn,
            skip_init: n.skip_init,
            ..TrainConfig::default()
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let p = &self.pipeline;
        let group_counts = if p.groups.is_empty() {
            geometric_groups(self.ensemble.n).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            p.groups.clone()
        };
        let cfg = PipelineConfig {
            eps1: p.eps1,
            eps2: p.eps2,
            group_counts,
            grid: self.model_grid()?,
            train: self.train_config(),
            horizon: p.horizon,
            max_rounds: p.max_rounds,
            growth: p.growth,
            full_search: p.full_search,
            seed: p.seed,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> &Path {
        &self.io.out
    }

    pub fn store_path(&self) -> PathBuf {
        if self.io.store.is_absolute() {
            self.io.store.clone()
        } else {
            self.io.out.join(&self.io.store)
        }
    }

    /// Command-line overrides. `seed` reseeds the ensemble, the network
    /// initialization and the data splits together.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.io.out = out.clone();
        }
        if let Some(n) = o.n {
            self.ensemble.n = n;
        }
        if let Some(s) = o.seed {
            self.ensemble.seed0 = s;
            self.nn.seed = s;
            self.pipeline.seed = s;
        }
        if let Some(w) = o.workers {
            self.ensemble.workers = w;
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}
