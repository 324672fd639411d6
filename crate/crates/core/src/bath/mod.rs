//! Harmonic bath description: spectral densities, the bath correlation
//! function, its exponential expansion, and the colored noise driving the
//! stochastic equations.

mod chirp;
mod expansion;
mod noise;

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{CoreError, Result};

pub use chirp::ChirpPlan;
pub use expansion::{fit_expansion, fit_exponentials, ExpTerm, ExponentialExpansion};
pub use noise::{
    sample_noise, verify_noise_statistics, MomentCheck, MomentRelation, NoiseDraw, NoiseRealization,
    NoiseReport, NoiseSampler, NoiseScheme,
};

/// Below this value of `beta * omega` the hyperbolic cotangent is replaced by
/// its Laurent expansion.
const COTH_SERIES_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralDensity {
    /// `J(w) = eta * w * gamma / (w^2 + gamma^2)`
    DebyeDrudeEta { eta: f64, gamma: f64 },
    /// `J(w) = 2 * lambda * w * gamma / (w^2 + gamma^2)`
    DebyeDrudeLambda { lambda: f64, gamma: f64 },
}

impl SpectralDensity {
    pub fn debye_eta(eta: f64, gamma: f64) -> Result<Self> {
        let sd = SpectralDensity::DebyeDrudeEta { eta, gamma };
        sd.validate()?;
        Ok(sd)
    }

    pub fn debye_lambda(lambda: f64, gamma: f64) -> Result<Self> {
        let sd = SpectralDensity::DebyeDrudeLambda { lambda, gamma };
        sd.validate()?;
        Ok(sd)
    }

    pub fn validate(&self) -> Result<()> {
        let (strength, gamma) = match *self {
            SpectralDensity::DebyeDrudeEta { eta, gamma } => (eta, gamma),
            SpectralDensity::DebyeDrudeLambda { lambda, gamma } => (lambda, gamma),
        };
        if !(strength > 0.0 && strength.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
            return Err(CoreError::Domain(format!(
                "spectral density parameters must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Coupling strength in the `eta` convention (`eta = 2 lambda`).
    pub fn eta(&self) -> f64 {
        match *self {
            SpectralDensity::DebyeDrudeEta { eta, .. } => eta,
            SpectralDensity::DebyeDrudeLambda { lambda, .. } => 2.0 * lambda,
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            SpectralDensity::DebyeDrudeEta { gamma, .. }
            | SpectralDensity::DebyeDrudeLambda { gamma, .. } => gamma,
        }
    }

    /// Same density with the coupling strength multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            SpectralDensity::DebyeDrudeEta { eta, gamma } => SpectralDensity::DebyeDrudeEta {
                eta: eta * factor,
                gamma,
            },
            SpectralDensity::DebyeDrudeLambda { lambda, gamma } => {
                SpectralDensity::DebyeDrudeLambda {
                    lambda: lambda * factor,
                    gamma,
                }
            }
        }
    }

    pub fn evaluate(&self, omega: f64) -> Result<f64> {
        if !(omega >= 0.0) {
            return Err(CoreError::Domain(format!(
                "spectral density evaluated at negative frequency {omega}"
            )));
        }
        Ok(self.value(omega))
    }

    pub(crate) fn value(&self, omega: f64) -> f64 {
        omega * self.over_omega(omega)
    }

    /// `J(w) / w`, finite at `w = 0`.
    pub(crate) fn over_omega(&self, omega: f64) -> f64 {
        let gamma = self.gamma();
        self.eta() * gamma / (omega * omega + gamma * gamma)
    }
}

pub fn evaluate_spectral_density(sd: &SpectralDensity, omega: f64) -> Result<f64> {
    sd.evaluate(omega)
}

/// Bose occupation `1 / (exp(beta * omega) - 1)`.
pub fn thermal_occupation(omega: f64, beta: f64) -> Result<f64> {
    let x = beta * omega;
    if !(omega > 0.0) || !(beta > 0.0) || !(x > 0.0) {
        return Err(CoreError::Domain(format!(
            "thermal occupation needs beta*omega > 0, got beta={beta}, omega={omega}"
        )));
    }
    Ok(bose(x))
}

pub(crate) fn bose(x: f64) -> f64 {
    if x > 700.0 {
        // exp(-x) underflows gracefully; avoids inf in the denominator
        (-x).exp()
    } else {
        1.0 / x.exp_m1()
    }
}

/// `J(w) coth(beta w / 2)`, using the small-argument series where the
/// cotangent blows up.
pub fn thermal_weighted_density(sd: &SpectralDensity, omega: f64, beta: f64) -> f64 {
    let x = beta * omega;
    if x < COTH_SERIES_CUTOFF {
        sd.over_omega(omega) * 2.0 / beta + sd.value(omega) * x / 6.0
    } else {
        sd.value(omega) / (0.5 * x).tanh()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub omega_max: f64,
    pub n_points: usize,
}

impl FrequencyGrid {
    pub fn new(omega_max: f64, n_points: usize) -> Result<Self> {
        if !(omega_max > 0.0) || n_points < 2 {
            return Err(CoreError::Domain(format!(
                "frequency grid needs omega_max > 0 and >= 2 points, got {omega_max}, {n_points}"
            )));
        }
        Ok(Self { omega_max, n_points })
    }

    pub fn spacing(&self) -> f64 {
        self.omega_max / (self.n_points - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureDiagnostic {
    /// Order-of-magnitude size of the neglected frequency tail.
    pub tail_estimate: f64,
    /// `omega_max` relative to the larger of `gamma` and the thermal frequency.
    pub cutoff_ratio: f64,
    pub converged: bool,
}

/// `alpha(t) = int_0^inf dw J(w)/pi [coth(beta w/2) cos(w t) - i sin(w t)]`
/// by composite trapezoid on a uniform grid.
#[derive(Debug, Clone)]
pub struct BathCorrelation {
    spectral: SpectralDensity,
    beta: f64,
    quadrature: FrequencyGrid,
    omegas: Vec<f64>,
    real_weights: Vec<f64>,
    imag_weights: Vec<f64>,
}

impl BathCorrelation {
    pub fn new(spectral: SpectralDensity, beta: f64, quadrature: FrequencyGrid) -> Result<Self> {
        spectral.validate()?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(CoreError::Domain(format!("inverse temperature must be positive, got {beta}")));
        }
        let dw = quadrature.spacing();
        let n = quadrature.n_points;
        let mut omegas = Vec::with_capacity(n);
        let mut real_weights = Vec::with_capacity(n);
        let mut imag_weights = Vec::with_capacity(n);
        for i in 0..n {
            let w = i as f64 * dw;
            let trap = if i == 0 || i == n - 1 { 0.5 * dw } else { dw };
            omegas.push(w);
            real_weights.push(trap * thermal_weighted_density(&spectral, w, beta) / PI);
            imag_weights.push(trap * spectral.value(w) / PI);
        }
        let bc = Self {
            spectral,
            beta,
            quadrature,
            omegas,
            real_weights,
            imag_weights,
        };
        let diag = bc.diagnose();
        if !diag.converged {
            log::warn!(
                "bath correlation quadrature cutoff omega_max={} is only {:.1}x the bath scale; tail estimate {:.3e}",
                quadrature.omega_max,
                diag.cutoff_ratio,
                diag.tail_estimate
            );
        }
        Ok(bc)
    }

    /// Quadrature matching the default noise discretization for this bath.
    pub fn with_default_grid(spectral: SpectralDensity, beta: f64) -> Result<Self> {
        let omega_max = default_cutoff(&spectral, beta);
        Self::new(spectral, beta, FrequencyGrid::new(omega_max, 8001)?)
    }

    pub fn spectral(&self) -> &SpectralDensity {
        &self.spectral
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn quadrature(&self) -> FrequencyGrid {
        self.quadrature
    }

    pub fn real_part(&self, t: f64) -> f64 {
        self.omegas
            .iter()
            .zip(&self.real_weights)
            .map(|(w, c)| c * (w * t).cos())
            .sum()
    }

    pub fn imag_part(&self, t: f64) -> f64 {
        -self
            .omegas
            .iter()
            .zip(&self.imag_weights)
            .map(|(w, c)| c * (w * t).sin())
            .sum::<f64>()
    }

    pub fn evaluate(&self, t: f64) -> Complex64 {
        Complex64::new(self.real_part(t), self.imag_part(t))
    }

    pub fn diagnose(&self) -> QuadratureDiagnostic {
        let wmax = self.quadrature.omega_max;
        let scale = self.spectral.gamma().max(1.0 / self.beta);
        let tail = wmax * thermal_weighted_density(&self.spectral, wmax, self.beta) / PI;
        let ratio = wmax / scale;
        QuadratureDiagnostic {
            tail_estimate: tail,
            cutoff_ratio: ratio,
            converged: ratio >= 10.0,
        }
    }
}

pub fn bath_correlation(bc: &BathCorrelation, t: f64) -> Complex64 {
    bc.evaluate(t)
}

/// Frequency cutoff `20 * max(gamma, 1/beta)` shared by the noise scheme and
/// the correlation quadrature.
pub fn default_cutoff(spectral: &SpectralDensity, beta: f64) -> f64 {
    20.0 * spectral.gamma().max(1.0 / beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn debye_values() {
        let sd = SpectralDensity::debye_eta(0.5, 5.0).unwrap();
        assert_eq!(sd.evaluate(0.0).unwrap(), 0.0);
        assert!(close(sd.evaluate(5.0).unwrap(), 0.25, 1e-15));
        assert!(sd.evaluate(-1.0).is_err());
    }

    #[test]
    fn lambda_form_matches_eta_form() {
        let a = SpectralDensity::debye_lambda(0.3, 2.0).unwrap();
        let b = SpectralDensity::debye_eta(0.6, 2.0).unwrap();
        for w in [0.0, 0.1, 1.0, 2.0, 7.5, 100.0] {
            assert_eq!(a.evaluate(w).unwrap(), b.evaluate(w).unwrap());
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SpectralDensity::debye_eta(0.0, 1.0).is_err());
        assert!(SpectralDensity::debye_eta(1.0, -1.0).is_err());
        assert!(SpectralDensity::debye_lambda(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn bose_factor() {
        assert!(close(thermal_occupation(2f64.ln(), 1.0).unwrap(), 1.0, 1e-14));
        // 1 / (e^0.1 - 1)
        assert!(close(thermal_occupation(0.1, 1.0).unwrap(), 9.508331944775044, 1e-12));
        assert_eq!(thermal_occupation(1e6, 1.0).unwrap(), 0.0);
        assert!(thermal_occupation(1e3, 1.0).unwrap().is_finite());
        assert!(thermal_occupation(0.0, 1.0).is_err());
        assert!(thermal_occupation(1.0, -1.0).is_err());
    }

    #[test]
    fn bose_is_monotone() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let g = thermal_occupation(0.05 * i as f64, 1.0).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn coth_series_is_continuous() {
        let sd = SpectralDensity::debye_eta(0.5, 1.0).unwrap();
        let beta = 2.0;
        let below = thermal_weighted_density(&sd, 0.999e-3 / beta, beta);
        let above = thermal_weighted_density(&sd, 1.001e-3 / beta, beta);
        assert!((below - above).abs() < 1e-6);
        // J coth -> 2 eta / (beta gamma) as w -> 0
        assert!(close(thermal_weighted_density(&sd, 0.0, beta), 0.5, 1e-15));
    }

    #[test]
    fn correlation_imaginary_part_matches_closed_form() {
        let sd = SpectralDensity::debye_eta(0.5, 5.0).unwrap();
        let bc = BathCorrelation::new(sd, 0.5, FrequencyGrid::new(20_000.0, 2_000_001).unwrap())
            .unwrap();
        for t in [0.5f64, 1.0, 2.0] {
            let exact = -(0.5 * 5.0 / 2.0) * (-5.0 * t).exp();
            let got = bc.imag_part(t);
            assert!((got - exact).abs() < 2e-4, "t={t}: {got} vs {exact}");
        }
        assert_eq!(bc.imag_part(0.0), 0.0);
    }

    #[test]
    fn correlation_is_hermitian_in_time() {
        let sd = SpectralDensity::debye_eta(0.5, 1.0).unwrap();
        let bc = BathCorrelation::with_default_grid(sd, 5.0).unwrap();
        for t in [0.1, 0.7, 3.0] {
            let a = bc.evaluate(t);
            let b = bc.evaluate(-t);
            assert!((a - b.conj()).norm() < 1e-13);
        }
        assert!(bc.evaluate(0.0).re > 0.0);
    }

    #[test]
    fn real_part_at_zero_grows_with_temperature() {
        let sd = SpectralDensity::debye_eta(0.5, 5.0).unwrap();
        let grid = FrequencyGrid::new(2000.0, 200_001).unwrap();
        let values: Vec<f64> = [5.0, 0.5, 0.05]
            .iter()
            .map(|&beta| BathCorrelation::new(sd, beta, grid).unwrap().real_part(0.0))
            .collect();
        assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
    }

    #[test]
    fn imaginary_part_independent_of_beta() {
        let sd = SpectralDensity::debye_eta(0.5, 1.0).unwrap();
        let grid = FrequencyGrid::new(50.0, 5001).unwrap();
        let a = BathCorrelation::new(sd, 0.5, grid).unwrap();
        let b = BathCorrelation::new(sd, 5.0, grid).unwrap();
        for t in [0.2, 1.0, 4.0] {
            assert_eq!(a.imag_part(t), b.imag_part(t));
        }
    }

    #[test]
    fn small_cutoff_is_diagnosed() {
        let sd = SpectralDensity::debye_eta(0.5, 5.0).unwrap();
        let bc = BathCorrelation::new(sd, 0.5, FrequencyGrid::new(10.0, 101).unwrap()).unwrap();
        let d = bc.diagnose();
        assert!(!d.converged);
        assert!(d.tail_estimate > 0.0);
        let ok = BathCorrelation::with_default_grid(sd, 0.5).unwrap().diagnose();
        assert!(ok.converged);
    }
}
