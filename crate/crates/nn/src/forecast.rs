use crate::error::{NnError, Result};
use crate::model::Model;

/// Any component beyond this magnitude marks a rollout as unphysical.
pub const DIVERGENCE_BOUND: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub steps: Vec<Vec<f64>>,
    /// First step with a component outside the physical bound.
    pub diverged_at: Option<usize>,
}

impl Forecast {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Autoregressive rollout: each prediction is appended to the window,
/// which then slides by one step.
pub fn forecast(model: &Model, seed_window: &[Vec<f64>], steps: usize) -> Result<Forecast> {
    if steps == 0 {
        return Err(NnError::Structural("forecast needs at least one step".into()));
    }
    let mut window = seed_window.to_vec();
    let mut out = Vec::with_capacity(steps);
    let mut diverged_at = None;
    for k in 0..steps {
        let next = model.predict(&window)?;
        if diverged_at.is_none() && next.iter().any(|x| !(x.abs() <= DIVERGENCE_BOUND)) {
            log::warn!("rollout left the physical range at step {k}");
            diverged_at = Some(k);
        }
        window.remove(0);
        window.push(next.clone());
        out.push(next);
    }
    Ok(Forecast {
        steps: out,
        diverged_at,
    })
}
