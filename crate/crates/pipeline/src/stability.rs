use crate::error::{PipelineError, Result};

/// Group predictions on a shared grid and their per-point spread.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEnsemble {
    pub predictions: Vec<Vec<Vec<f64>>>,
    /// Sample standard deviation across predictions, `[time][component]`.
    pub sd: Vec<Vec<f64>>,
}

impl PredictionEnsemble {
    /// Needs at least two series with identical lengths and component counts.
    pub fn new(predictions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if predictions.len() < 2 {
            return Err(PipelineError::Structural(format!(
                "spread needs at least two predictions, got {}",
                predictions.len()
            )));
        }
        let first = &predictions[0];
        for (g, p) in predictions.iter().enumerate().skip(1) {
            if p.len() != first.len() || p.iter().zip(first).any(|(a, b)| a.len() != b.len()) {
                return Err(PipelineError::Structural(format!(
                    "prediction {g} is not aligned with prediction 0"
                )));
            }
        }
        let k = predictions.len() as f64;
        let sd = (0..first.len())
            .map(|i| {
                (0..first[i].len())
                    .map(|c| {
                        // deviations from the first prediction, so identical inputs give exactly 0
                        let x0 = first[i][c];
                        let mean = predictions.iter().map(|p| p[i][c] - x0).sum::<f64>() / k;
                        let ss: f64 = predictions.iter().map(|p| (p[i][c] - x0 - mean).powi(2)).sum();
                        (ss / (k - 1.0)).sqrt()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { predictions, sd })
    }

    /// Largest spread over all points and components; NaN counts as infinite.
    pub fn max_sd(&self) -> f64 {
        self.sd
            .iter()
            .flatten()
            .fold(0.0, |m, &s| if s.is_nan() { f64::INFINITY } else { m.max(s) })
    }
}

/// `(max_sd <= eps2, max_sd)`
pub fn assess_prediction_stability(pe: &PredictionEnsemble, eps2: f64) -> (bool, f64) {
    let max_sd = pe.max_sd();
    (max_sd <= eps2, max_sd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    pub series: Vec<Vec<f64>>,
    /// Largest component jump from the last prefix point to the first forecast step.
    pub continuity: Option<f64>,
}

/// Ensemble mean on `0..=tc` followed by a forecast that starts at
/// `forecast_start`, which must be `tc + 1`.
pub fn stitch(prefix: &[Vec<f64>], tc: usize, forecast: &[Vec<f64>], forecast_start: usize) -> Result<Stitched> {
    if tc >= prefix.len() {
        return Err(PipelineError::Structural(format!(
            "converged index {tc} outside a prefix of {} points",
            prefix.len()
        )));
    }
    if !forecast.is_empty() && forecast_start != tc + 1 {
        let kind = if forecast_start > tc + 1 { "gap" } else { "overlap" };
        return Err(PipelineError::Structural(format!(
            "{kind}: forecast starts at index {forecast_start}, prefix ends at {tc}"
        )));
    }
    let last = &prefix[tc];
    let continuity = forecast.first().map(|f| {
        f.iter()
            .zip(last)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    let mut series = prefix[..=tc].to_vec();
    series.extend_from_slice(forecast);
    Ok(Stitched { series, continuity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_sd() {
        let pe = PredictionEnsemble::new(vec![vec![vec![0.0]], vec![vec![1.0]]]).unwrap();
        assert!((pe.sd[0][0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nan_is_rejected() {
        let pe = PredictionEnsemble::new(vec![vec![vec![f64::NAN]], vec![vec![1.0]]]).unwrap();
        let (ok, m) = assess_prediction_stability(&pe, 1.0);
        assert!(!ok);
        assert!(m.is_infinite());
    }
}
