//! The refinement loop: ten nested groups per round, one forecaster per
//! group, acceptance on the spread of the stitched group results.

use std::fmt::Write as _;

use rayon::prelude::*;
use stochdyn_core::dataset::{find_converged_prefix, make_windows, split, MIN_SPLIT_WINDOWS};
use stochdyn_nn::{build_model, candidates, forecast, grid_search, History, Model, ModelConfig, NnError, TrainMode};

use crate::config::{grow_groups, PipelineConfig, GROUPS};
use crate::error::{PipelineError, Result};
use crate::source::{EnsembleSource, GroupData};
use crate::stability::{assess_prediction_stability, stitch, PredictionEnsemble, Stitched};

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub group_counts: Vec<usize>,
    /// Index of the last converged point of the largest group.
    pub tc_index: Option<usize>,
    pub t_c: Option<f64>,
    /// Infinite when the round produced no complete set of forecasts.
    pub max_sd: f64,
    pub accepted: bool,
    pub selected: Option<ModelConfig>,
    pub note: Option<String>,
}

impl RoundRecord {
    pub fn total_trajectories(&self) -> usize {
        *self.group_counts.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub n: usize,
    pub tc_index: usize,
    pub model: Model,
    pub pretrain: History,
    pub finetune: Option<History>,
    pub stitched: Stitched,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rounds: Vec<RoundRecord>,
    pub accepted: bool,
    /// Round whose result is reported, 1-based. Without acceptance this is
    /// the round with the lowest spread and the result is provisional.
    pub final_round: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub times: Vec<f64>,
    /// Largest-group ensemble mean up to its converged index, forecast after.
    pub final_series: Vec<Vec<f64>>,
    /// Spread of the ten stitched group results, `[time][component]`.
    pub sd: Vec<Vec<f64>>,
    pub tc_index: usize,
    pub continuity: Option<f64>,
    /// Per-group products of the reported round, smallest group first.
    pub groups: Vec<GroupResult>,
}

impl ConvergenceReport {
    /// The largest group's result, which is the reported one.
    pub fn final_group(&self) -> &GroupResult {
        self.groups.last().expect("a report holds ten groups")
    }

    /// Round table and references to the files written alongside.
    pub fn to_text(&self, files: &[(&str, &str)]) -> String {
        let mut s = String::new();
        let status = if self.accepted { "accepted" } else { "provisional" };
        let _ = writeln!(s, "status: {status}");
        let _ = writeln!(s, "eps1: {:?}", self.eps1);
        let _ = writeln!(s, "eps2: {:?}", self.eps2);
        let _ = writeln!(s, "final_round: {}", self.final_round);
        let _ = writeln!(s, "t_c: {:?} (index {})", self.times[self.tc_index], self.tc_index);
        match self.continuity {
            Some(c) => {
                let _ = writeln!(s, "continuity: {c:?}");
            }
            None => {
                let _ = writeln!(s, "continuity: none (converged over the whole horizon)");
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "round  n_largest  t_c  max_sd  accepted  window  lstm_units  note");
        for r in &self.rounds {
            let t_c = r.t_c.map_or("-".to_string(), |t| format!("{t:?}"));
            let (window, units) = r
                .selected
                .as_ref()
                .map_or(("-".to_string(), "-".to_string()), |m| {
                    (m.window.to_string(), format!("{:?}", m.lstm_units))
                });
            let _ = writeln!(
                s,
                "{}  {}  {}  {:?}  {}  {}  {}  {}",
                r.round,
                r.total_trajectories(),
                t_c,
                r.max_sd,
                r.accepted,
                window,
                units,
                r.note.as_deref().unwrap_or("-")
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "group counts (final round): {:?}", self.rounds[self.final_round - 1].group_counts);
        if !files.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "files:");
            for (label, path) in files {
                let _ = writeln!(s, "  {label}: {path}");
            }
        }
        s
    }
}

enum RoundFailure {
    /// Too little converged data or a failed training; more trajectories may help.
    Insufficient(String),
    Fatal(PipelineError),
}

impl From<PipelineError> for RoundFailure {
    fn from(e: PipelineError) -> Self {
        RoundFailure::Fatal(e)
    }
}

impl From<NnError> for RoundFailure {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Divergence { .. } | NnError::SearchFailure(_) => RoundFailure::Insufficient(e.to_string()),
            other => RoundFailure::Fatal(other.into()),
        }
    }
}

type RoundResult<T> = std::result::Result<T, RoundFailure>;

fn insufficient<T>(msg: String) -> RoundResult<T> {
    Err(RoundFailure::Insufficient(msg))
}

fn select_architecture(cfg: &PipelineConfig, data: &GroupData, count: usize) -> RoundResult<ModelConfig> {
    let mut tc = cfg.train.clone();
    tc.shuffle_seed = cfg.seed;
    let outcome = grid_search(&candidates(&cfg.grid, &tc), &data.series[..count], cfg.seed)?;
    Ok(outcome.model.config().clone())
}

fn train_group(cfg: &PipelineConfig, arch: &ModelConfig, data: &GroupData, count: usize) -> RoundResult<GroupResult> {
    let l = arch.window;
    if count < l {
        return insufficient(format!("group of {} has {count} converged points, window needs {l}", data.n));
    }
    let mut tc = cfg.train.clone();
    tc.shuffle_seed = cfg.seed;
    let mut model = build_model(arch).map_err(RoundFailure::from)?;

    let all = make_windows(&data.series, l);
    if all.len() < MIN_SPLIT_WINDOWS {
        return insufficient(format!("series of {} points too short for window {l}", data.series.len()));
    }
    let parts = split(&all, cfg.seed).map_err(PipelineError::from)?;
    let pretrain = stochdyn_nn::train(&mut model, &parts.t1, &parts.t2, &tc, TrainMode::Pretrain)?;

    let converged = make_windows(&data.series[..count], l);
    let finetune = if converged.len() >= MIN_SPLIT_WINDOWS {
        let parts = split(&converged, cfg.seed).map_err(PipelineError::from)?;
        Some(stochdyn_nn::train(&mut model, &parts.t1, &parts.t2, &tc, TrainMode::Finetune)?)
    } else {
        log::warn!("group of {}: {} converged windows, fine-tuning skipped", data.n, converged.len());
        None
    };

    let tc_index = count - 1;
    let steps = data.series.len() - count;
    let (forecast_steps, diverged_at) = if steps == 0 {
        (Vec::new(), None)
    } else {
        let f = forecast(&model, &data.series[count - l..count], steps)?;
        (f.steps, f.diverged_at)
    };
    let stitched = stitch(&data.series, tc_index, &forecast_steps, count)?;
    Ok(GroupResult {
        n: data.n,
        tc_index,
        model,
        pretrain,
        finetune,
        stitched,
        diverged_at,
    })
}

struct RoundProduct {
    arch: ModelConfig,
    groups: Vec<GroupResult>,
    ensemble: PredictionEnsemble,
}

fn run_round(cfg: &PipelineConfig, data: &[GroupData]) -> RoundResult<RoundProduct> {
    let counts = data
        .iter()
        .map(|d| find_converged_prefix(&d.se_summary, cfg.eps1).map(|p| p.count))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(PipelineError::from)?;
    if let Some((d, _)) = data.iter().zip(&counts).find(|(_, &c)| c == 0) {
        return insufficient(format!("group of {} has no converged prefix", d.n));
    }
    let largest = GROUPS - 1;
    let archs: Vec<ModelConfig> = if cfg.full_search {
        data.iter()
            .zip(&counts)
            .map(|(d, &c)| select_architecture(cfg, d, c))
            .collect::<RoundResult<_>>()?
    } else {
        vec![select_architecture(cfg, &data[largest], counts[largest])?; GROUPS]
    };
    let groups: Vec<GroupResult> = data
        .par_iter()
        .zip(counts.par_iter())
        .zip(archs.par_iter())
        .map(|((d, &c), a)| train_group(cfg, a, d, c))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<RoundResult<_>>()?;
    let ensemble = PredictionEnsemble::new(groups.iter().map(|g| g.stitched.series.clone()).collect())?;
    Ok(RoundProduct {
        arch: archs[largest].clone(),
        groups,
        ensemble,
    })
}

/// Runs rounds until the ten group results agree within `eps2` or the
/// round cap is reached; the group counts grow by `cfg.growth` after
/// every rejected round.
pub fn run_pipeline(source: &mut dyn EnsembleSource, cfg: &PipelineConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if cfg.grid[0].d_s != source.d_s() {
        return Err(PipelineError::Config(format!(
            "grid is built for d_s = {}, data have d_s = {}",
            cfg.grid[0].d_s,
            source.d_s()
        )));
    }
    let mut times = source.times();
    if let Some(h) = cfg.horizon {
        if !(h >= times[0]) {
            return Err(PipelineError::Config(format!("horizon {h} precedes the first time {}", times[0])));
        }
        let end = times.iter().rposition(|&t| t <= h + 1e-9 * h.abs().max(1.0)).unwrap_or(0);
        times.truncate(end + 1);
    }
    let n_points = times.len();

    let mut counts = cfg.group_counts.clone();
    let mut rounds = Vec::new();
    let mut best: Option<(usize, RoundProduct)> = None;
    let mut last_reason = String::new();

    for round in 1..=cfg.max_rounds {
        let mut data = Vec::with_capacity(GROUPS);
        for &n in &counts {
            let mut d = source.group(n)?;
            if d.series.len() < n_points || d.se_summary.len() < n_points {
                return Err(PipelineError::Structural("source returned fewer points than its time grid".into()));
            }
            d.series.truncate(n_points);
            d.se_summary.truncate(n_points);
            data.push(d);
        }
        let mut record = RoundRecord {
            round,
            group_counts: counts.clone(),
            tc_index: None,
            t_c: None,
            max_sd: f64::INFINITY,
            accepted: false,
            selected: None,
            note: None,
        };
        match run_round(cfg, &data) {
            Ok(product) => {
                let (accepted, max_sd) = assess_prediction_stability(&product.ensemble, cfg.eps2);
                let tc = product.groups[GROUPS - 1].tc_index;
                record.tc_index = Some(tc);
                record.t_c = Some(times[tc]);
                record.max_sd = max_sd;
                record.accepted = accepted;
                record.selected = Some(product.arch.clone());
                let diverged = product.groups.iter().filter(|g| g.diverged_at.is_some()).count();
                if diverged > 0 {
                    record.note = Some(format!("{diverged} group rollouts left the physical range"));
                }
                log::info!("round {round}: n = {}, max sd {max_sd:.4}, accepted {accepted}", counts[GROUPS - 1]);
                let improves = best.as_ref().is_none_or(|(_, b)| max_sd < b.ensemble.max_sd());
                rounds.push(record);
                if improves {
                    best = Some((round, product));
                }
                if accepted {
                    break;
                }
            }
            Err(RoundFailure::Insufficient(reason)) => {
                log::warn!("round {round}: {reason}");
                record.note = Some(reason.clone());
                last_reason = reason;
                rounds.push(record);
            }
            Err(RoundFailure::Fatal(e)) => return Err(e),
        }
        counts = grow_groups(&counts, cfg.growth);
    }

    let (final_round, product) = best.ok_or(PipelineError::NoPrediction {
        rounds: cfg.max_rounds,
        reason: last_reason,
    })?;
    let accepted = rounds[final_round - 1].accepted;
    let last = &product.groups[GROUPS - 1];
    Ok(ConvergenceReport {
        accepted,
        final_round,
        eps1: cfg.eps1,
        eps2: cfg.eps2,
        times,
        final_series: last.stitched.series.clone(),
        sd: product.ensemble.sd,
        tc_index: last.tc_index,
        continuity: last.stitched.continuity,
        rounds,
        groups: product.groups,
    })
}

/// One group outside the refinement loop: converged prefix, architecture
/// search on it, pretraining on the whole series, fine-tuning on the
/// prefix and the stitched forecast.
pub fn fit_group(cfg: &PipelineConfig, data: &GroupData) -> Result<GroupResult> {
    cfg.validate()?;
    let fail = |f: RoundFailure| match f {
        RoundFailure::Insufficient(reason) => PipelineError::NoPrediction { rounds: 1, reason },
        RoundFailure::Fatal(e) => e,
    };
    let count = find_converged_prefix(&data.se_summary, cfg.eps1)?.count;
    if count == 0 {
        return Err(fail(RoundFailure::Insufficient(format!(
            "group of {} has no converged prefix",
            data.n
        ))));
    }
    let arch = select_architecture(cfg, data, count).map_err(fail)?;
    train_group(cfg, &arch, data, count).map_err(fail)
}
