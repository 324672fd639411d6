use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{BathCorrelation, SpectralDensity};
use crate::error::{CoreError, Result};

/// Relative residual accepted for the analytic Debye-Drude expansion.
const ANALYTIC_TOLERANCE: f64 = 1e-10;

/// One term `d * exp(-nu * t)` of the memory kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub d: Complex64,
    pub nu: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialExpansion {
    pub terms: Vec<ExpTerm>,
}

impl ExponentialExpansion {
    pub fn new(terms: Vec<ExpTerm>) -> Result<Self> {
        if let Some(bad) = terms.iter().find(|term| !(term.nu.re > 0.0)) {
            return Err(CoreError::Domain(format!(
                "expansion decay rate must have positive real part, got {}",
                bad.nu
            )));
        }
        Ok(Self { terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn evaluate(&self, t: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|term| term.d * (-term.nu * t).exp())
            .sum()
    }
}

/// Memory kernel left after the noise absorbs `Re alpha`: `i Im alpha(t)`.
///
/// For the Debye-Drude form the single pole at `w = i gamma` gives
/// `d0 = -i eta gamma / 2`, `nu0 = gamma` exactly.
pub fn fit_expansion(bc: &BathCorrelation) -> Result<ExponentialExpansion> {
    match *bc.spectral() {
        SpectralDensity::DebyeDrudeEta { .. } | SpectralDensity::DebyeDrudeLambda { .. } => {
            let sd = bc.spectral();
            let gamma = sd.gamma();
            let expansion = ExponentialExpansion::new(vec![ExpTerm {
                d: Complex64::new(0.0, -0.5 * sd.eta() * gamma),
                nu: Complex64::new(gamma, 0.0),
            }])?;
            let residual = analytic_residual(sd, &expansion);
            if residual > ANALYTIC_TOLERANCE {
                return Err(CoreError::FitFailure {
                    residual,
                    tolerance: ANALYTIC_TOLERANCE,
                });
            }
            Ok(expansion)
        }
    }
}

/// Worst relative deviation of the expansion from the closed-form kernel
/// `-i (eta gamma / 2) exp(-gamma t)` on `[0, 10/gamma]`.
fn analytic_residual(sd: &SpectralDensity, expansion: &ExponentialExpansion) -> f64 {
    let gamma = sd.gamma();
    let scale = 0.5 * sd.eta() * gamma;
    (0..=200)
        .map(|i| {
            let t = 10.0 / gamma * i as f64 / 200.0;
            let exact = Complex64::new(0.0, -scale * (-gamma * t).exp());
            (expansion.evaluate(t) - exact).norm() / scale
        })
        .fold(0.0, f64::max)
}

/// Fits `sum_k d_k exp(-nu_k t)` to uniformly sampled kernel values with the
/// matrix-pencil method. Used for kernels without a closed-form expansion.
pub fn fit_exponentials(
    times: &[f64],
    values: &[Complex64],
    n_terms: usize,
    tolerance: f64,
) -> Result<ExponentialExpansion> {
    let m = values.len();
    if times.len() != m || n_terms == 0 || m < 2 * n_terms + 2 {
        return Err(CoreError::Domain(format!(
            "need at least {} samples for {n_terms} terms, got {m}",
            2 * n_terms + 2
        )));
    }
    let step = times[1] - times[0];
    if !(step > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0)) {
        return Err(CoreError::Domain("samples must be uniformly spaced in time".into()));
    }

    let pencil = m / 2;
    let rows = m - pencil;
    let hankel = DMatrix::from_fn(rows, pencil + 1, |i, j| values[i + j]);
    let svd = hankel.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CoreError::Domain("SVD failed in exponential fit".into()))?;
    // rows of v_t span the row space of the Hankel matrix, i.e. the pole powers
    let signal = v_t.rows(0, n_terms).transpose();
    let upper = signal.rows(0, pencil).into_owned();
    let lower = signal.rows(1, pencil).into_owned();
    let pinv = upper
        .pseudo_inverse(1e-14)
        .map_err(|e| CoreError::Domain(format!("pencil inversion failed: {e}")))?;
    let reduced = pinv * lower;
    let poles = reduced
        .schur()
        .eigenvalues()
        .ok_or_else(|| CoreError::Domain("pencil eigenvalues did not converge".into()))?;

    let t0 = times[0];
    let vandermonde = DMatrix::from_fn(m, n_terms, |i, k| poles[k].powu(i as u32));
    let rhs = DMatrix::from_column_slice(m, 1, values);
    let amplitudes = vandermonde
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| CoreError::Domain(format!("amplitude solve failed: {e}")))?;

    let mut terms = Vec::with_capacity(n_terms);
    for k in 0..n_terms {
        let nu = -poles[k].ln() / step;
        let d = amplitudes[(k, 0)] * (nu * t0).exp();
        terms.push(ExpTerm { d, nu });
    }
    let expansion = ExponentialExpansion::new(terms)?;

    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let residual = times
        .iter()
        .zip(values)
        .map(|(&t, v)| (expansion.evaluate(t) - v).norm() / scale)
        .fold(0.0, f64::max);
    if residual > tolerance {
        return Err(CoreError::FitFailure { residual, tolerance });
    }
    Ok(expansion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::FrequencyGrid;

    fn debye(eta: f64, gamma: f64) -> BathCorrelation {
        let sd = SpectralDensity::debye_eta(eta, gamma).unwrap();
        BathCorrelation::new(sd, 1.0, FrequencyGrid::new(20.0 * gamma, 101).unwrap()).unwrap()
    }

    #[test]
    fn debye_single_term() {
        let e = fit_expansion(&debye(0.5, 5.0)).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.terms[0].d, Complex64::new(0.0, -1.25));
        assert_eq!(e.terms[0].nu, Complex64::new(5.0, 0.0));

        let e = fit_expansion(&debye(0.5, 0.25)).unwrap();
        assert_eq!(e.terms[0].d, Complex64::new(0.0, -0.0625));
        assert_eq!(e.terms[0].nu, Complex64::new(0.25, 0.0));
    }

    #[test]
    fn doubling_coupling_doubles_prefactor() {
        let a = fit_expansion(&debye(0.5, 1.0)).unwrap();
        let b = fit_expansion(&debye(1.0, 1.0)).unwrap();
        assert_eq!(b.terms[0].d, 2.0 * a.terms[0].d);
        assert_eq!(b.terms[0].nu, a.terms[0].nu);
    }

    #[test]
    fn rejects_growing_terms() {
        let bad = ExpTerm {
            d: Complex64::new(1.0, 0.0),
            nu: Complex64::new(-0.1, 0.0),
        };
        assert!(ExponentialExpansion::new(vec![bad]).is_err());
    }

    #[test]
    fn pencil_recovers_debye_kernel() {
        let gamma = 5.0;
        let times: Vec<f64> = (0..60).map(|i| i as f64 * 0.02).collect();
        let values: Vec<Complex64> = times
            .iter()
            .map(|&t| Complex64::new(0.0, -1.25 * (-gamma * t).exp()))
            .collect();
        let e = fit_exponentials(&times, &values, 1, 1e-9).unwrap();
        assert!((e.terms[0].nu - Complex64::new(gamma, 0.0)).norm() < 1e-8);
        assert!((e.terms[0].d - Complex64::new(0.0, -1.25)).norm() < 1e-8);
    }

    #[test]
    fn pencil_recovers_two_complex_terms() {
        let truth = [
            ExpTerm {
                d: Complex64::new(0.3, -0.2),
                nu: Complex64::new(0.8, 2.0),
            },
            ExpTerm {
                d: Complex64::new(-0.1, 0.5),
                nu: Complex64::new(2.5, -0.4),
            },
        ];
        let exact = ExponentialExpansion::new(truth.to_vec()).unwrap();
        let times: Vec<f64> = (0..80).map(|i| 0.5 + i as f64 * 0.05).collect();
        let values: Vec<Complex64> = times.iter().map(|&t| exact.evaluate(t)).collect();
        let fit = fit_exponentials(&times, &values, 2, 1e-8).unwrap();
        for term in &truth {
            let best = fit
                .terms
                .iter()
                .map(|f| (f.nu - term.nu).norm() + (f.d - term.d).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-7, "term {term:?} not recovered: {fit:?}");
        }
    }

    #[test]
    fn pencil_reports_bad_fit() {
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let values: Vec<Complex64> = times
            .iter()
            .map(|&t| Complex64::new((-t).exp() + 0.5 * (-0.2 * t).exp() * (3.0 * t).cos(), 0.0))
            .collect();
        match fit_exponentials(&times, &values, 1, 1e-10) {
            Err(CoreError::FitFailure { residual, .. }) => assert!(residual > 1e-10),
            other => panic!("expected fit failure, got {other:?}"),
        }
    }
}
