//! Architecture selection over a list of configurations.

use rayon::prelude::*;
use stochdyn_core::dataset::{make_windows, split};

use crate::error::{NnError, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::train::{evaluate, train, History, TrainConfig, TrainMode};

#[derive(Debug, Clone)]
pub struct Candidate {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Pairs every model configuration with the same training settings.
pub fn candidates(configs: &[ModelConfig], tc: &TrainConfig) -> Vec<Candidate> {
    configs
        .iter()
        .map(|m| Candidate {
            model: m.clone(),
            train: tc.clone(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CandidateResult {
    pub config: ModelConfig,
    pub n_params: usize,
    /// Validation loss, or `None` when training failed.
    pub v_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub model: Model,
    pub index: usize,
    pub history: History,
    pub results: Vec<CandidateResult>,
}

type Trained = (Model, History, f64);

fn run_candidate(c: &Candidate, series: &[Vec<f64>], split_seed: u64) -> Result<Trained> {
    let windows = make_windows(series, c.model.window);
    let parts = split(&windows, split_seed)?;
    let mut model = build_model(&c.model)?;
    let history = train(&mut model, &parts.t1, &parts.t2, &c.train, TrainMode::Pretrain)?;
    let v = evaluate(&model, &parts.v)?;
    if !v.is_finite() {
        return Err(NnError::Divergence {
            epoch: history.epochs.len(),
        });
    }
    Ok((model, history, v))
}

/// Trains every candidate on T1 with early stopping on T2, windows being
/// rebuilt from `series` for each window length, and returns the one with
/// the lowest validation loss. Ties go to fewer parameters, then the
/// shorter window, then the earlier candidate.
pub fn grid_search(candidates: &[Candidate], series: &[Vec<f64>], split_seed: u64) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(NnError::SearchFailure("no configurations to search".into()));
    }
    let outcomes: Vec<Result<Trained>> = candidates
        .par_iter()
        .map(|c| run_candidate(c, series, split_seed))
        .collect();

    let mut results = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, Trained)> = None;
    let key = |t: &Trained, i: usize| (t.2, t.0.n_params(), t.0.config().window, i);
    for (i, (c, out)) in candidates.iter().zip(outcomes).enumerate() {
        let n_params = build_model(&c.model).map(|m| m.n_params()).unwrap_or(0);
        match out {
            Ok(trained) => {
                results.push(CandidateResult {
                    config: c.model.clone(),
                    n_params,
                    v_loss: Some(trained.2),
                });
                let better = match &best {
                    None => true,
                    Some((j, b)) => key(&trained, i).partial_cmp(&key(b, *j)) == Some(std::cmp::Ordering::Less),
                };
                if better {
                    best = Some((i, trained));
                }
            }
            Err(e) => {
                log::warn!("candidate {i} failed: {e}");
                results.push(CandidateResult {
                    config: c.model.clone(),
                    n_params,
                    v_loss: None,
                });
            }
        }
    }
    let (index, (model, history, _)) =
        best.ok_or_else(|| NnError::SearchFailure("every configuration failed to train".into()))?;
    Ok(SearchOutcome {
        model,
        index,
        history,
        results,
    })
}
