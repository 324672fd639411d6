//! Spin-boson and Frenkel-exciton problem builders, and the exact
//! pure-dephasing solution used as a reference.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::bath::{
    default_cutoff, fit_expansion, thermal_weighted_density, BathCorrelation, FrequencyGrid, NoiseScheme,
    SpectralDensity,
};
use crate::error::{CoreError, Result};
use crate::hierarchy::{
    build_space, BathCoupling, EffectiveHamiltonian, Flavor, HierarchySpace, OperatorRole, StochasticState,
    SystemOperator,
};

/// Speed of light in cm/fs.
pub const SPEED_OF_LIGHT_CM_PER_FS: f64 = 2.997_924_58e-5;
/// Boltzmann constant in cm⁻¹/K.
pub const BOLTZMANN_CM_PER_K: f64 = 0.695_034_8;

/// Angular frequency in fs⁻¹ of a wavenumber in cm⁻¹.
pub fn wavenumber_to_angular(cm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT_CM_PER_FS * cm
}

pub fn angular_to_wavenumber(per_fs: f64) -> f64 {
    per_fs / (2.0 * PI * SPEED_OF_LIGHT_CM_PER_FS)
}

/// `1 / (k_B T)` in fs.
pub fn beta_from_temperature(kelvin: f64) -> Result<f64> {
    if !(kelvin > 0.0) || !kelvin.is_finite() {
        return Err(CoreError::Domain(format!("temperature must be positive, got {kelvin}")));
    }
    Ok(1.0 / wavenumber_to_angular(BOLTZMANN_CM_PER_K * kelvin))
}

/// Frequency discretization of the noise construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSettings {
    /// `k_max = cutoff_factor * max(gamma, 1/beta)`
    pub cutoff_factor: f64,
    pub n_points: usize,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            cutoff_factor: 20.0,
            n_points: 2000,
        }
    }
}

impl NoiseSettings {
    fn scheme(&self, sd: SpectralDensity, beta: f64) -> Result<NoiseScheme> {
        if !(self.cutoff_factor > 0.0) {
            return Err(CoreError::Domain("noise cutoff factor must be positive".into()));
        }
        let k_max = self.cutoff_factor / 20.0 * default_cutoff(&sd, beta);
        NoiseScheme::new(sd, beta, k_max, self.n_points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinBosonSpec {
    pub epsilon: f64,
    pub v: f64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub initial: [Complex64; 2],
}

impl SpinBosonSpec {
    /// `H_s = eps sigma_z + V sigma_x`, initial state `|1>`.
    pub fn new(epsilon: f64, v: f64, eta: f64, gamma: f64, beta: f64) -> Self {
        Self {
            epsilon,
            v,
            eta,
            gamma,
            beta,
            initial: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        }
    }

    pub fn with_initial(mut self, initial: [Complex64; 2]) -> Self {
        self.initial = initial;
        self
    }

    /// Parameter sets (a)-(f): eps = V = 1, eta = 0.5,
    /// (beta, gamma) = (5, 5), (5, 1), (5, 0.25), (0.5, 5), (0.5, 1), (0.5, 0.25).
    pub fn case(label: char) -> Option<Self> {
        let (beta, gamma) = match label {
            'a' => (5.0, 5.0),
            'b' => (5.0, 1.0),
            'c' => (5.0, 0.25),
            'd' => (0.5, 5.0),
            'e' => (0.5, 1.0),
            'f' => (0.5, 0.25),
            _ => return None,
        };
        Some(Self::new(1.0, 1.0, 0.5, gamma, beta))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.epsilon, self.v, self.eta, self.gamma, self.beta]
            .iter()
            .all(|x| x.is_finite());
        if !finite || !(self.beta > 0.0) || self.eta < 0.0 || !(self.gamma > 0.0) {
            return Err(CoreError::Domain(format!("invalid spin-boson parameters: {self:?}")));
        }
        check_normalized(&self.initial)
    }

    pub fn spectral_density(&self) -> Result<SpectralDensity> {
        SpectralDensity::debye_eta(self.eta, self.gamma)
    }
}

fn check_normalized(state: &[Complex64]) -> Result<()> {
    let norm: f64 = state.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(CoreError::Validation(format!("initial state has norm² {norm}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrenkelExcitonSpec {
    /// cm⁻¹
    pub site_energies: Vec<f64>,
    /// cm⁻¹, symmetric with zero diagonal
    pub couplings: Vec<Vec<f64>>,
    /// cm⁻¹
    pub lambda_reorg: f64,
    /// fs⁻¹
    pub gamma: f64,
    /// K
    pub temperature: f64,
    /// zero-based
    pub initial_site: usize,
}

impl FrenkelExcitonSpec {
    pub fn new(site_energies: Vec<f64>, couplings: Vec<Vec<f64>>, temperature: f64) -> Self {
        Self {
            site_energies,
            couplings,
            lambda_reorg: 35.0,
            gamma: 1.0 / 50.0,
            temperature,
            initial_site: 0,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.site_energies.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        if n < 2 {
            return Err(CoreError::Domain(format!("exciton model needs at least 2 sites, got {n}")));
        }
        if self.couplings.len() != n || self.couplings.iter().any(|r| r.len() != n) {
            return Err(CoreError::Validation(format!("coupling matrix must be {n}x{n}")));
        }
        for i in 0..n {
            if self.couplings[i][i] != 0.0 {
                return Err(CoreError::Validation(format!("coupling diagonal ({i}, {i}) must be zero")));
            }
            for j in 0..i {
                if self.couplings[i][j] != self.couplings[j][i] {
                    return Err(CoreError::Validation(format!(
                        "coupling matrix not symmetric at ({i}, {j}): {} vs {}",
                        self.couplings[i][j], self.couplings[j][i]
                    )));
                }
            }
        }
        let finite = self.site_energies.iter().chain(self.couplings.iter().flatten()).all(|x| x.is_finite());
        if !finite || self.lambda_reorg < 0.0 || !(self.gamma > 0.0) {
            return Err(CoreError::Domain("exciton parameters must be finite with lambda >= 0, gamma > 0".into()));
        }
        if self.initial_site >= n {
            return Err(CoreError::Domain(format!("initial site {} out of range", self.initial_site)));
        }
        beta_from_temperature(self.temperature)?;
        Ok(())
    }

    pub fn spectral_density(&self) -> Result<SpectralDensity> {
        SpectralDensity::debye_lambda(wavenumber_to_angular(self.lambda_reorg), self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    SpinBoson(SpinBosonSpec),
    Exciton(FrenkelExcitonSpec),
}

/// Everything a trajectory needs: effective Hamiltonian, one noise scheme
/// per bath and the initial system state (forward and backward start equal).
#[derive(Debug, Clone)]
pub struct PreparedModel {
    kind: ModelKind,
    n_max: usize,
    hamiltonian: Arc<EffectiveHamiltonian>,
    schemes: Vec<Arc<NoiseScheme>>,
    initial: Vec<Complex64>,
    hash: u64,
}

impl PreparedModel {
    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn hamiltonian(&self) -> &EffectiveHamiltonian {
        &self.hamiltonian
    }

    pub fn schemes(&self) -> &[Arc<NoiseScheme>] {
        &self.schemes
    }

    pub fn system_dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial_system_state(&self) -> &[Complex64] {
        &self.initial
    }

    pub fn initial_states(&self, t0: f64) -> (StochasticState, StochasticState) {
        let dh = self.hamiltonian.hierarchy_dim();
        (
            StochasticState::vacuum(&self.initial, dh, Flavor::Forward, t0),
            StochasticState::vacuum(&self.initial, dh, Flavor::Backward, t0),
        )
    }

    /// Initial reduced density matrix, row-major.
    pub fn initial_rho(&self) -> Vec<Complex64> {
        let d = self.initial.len();
        let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
        crate::hierarchy::project_into(&self.initial, &self.initial, &mut rho);
        rho
    }

    /// Content hash over every parameter that influences trajectories.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn is_closed(&self) -> bool {
        self.schemes.is_empty()
    }
}

struct Hasher(Sha256);

impl Hasher {
    fn new(tag: &str) -> Self {
        let mut h = Sha256::new();
        h.update(tag.as_bytes());
        Self(h)
    }

    fn f64(&mut self, x: f64) {
        self.0.update(x.to_le_bytes());
    }

    fn usize(&mut self, x: usize) {
        self.0.update((x as u64).to_le_bytes());
    }

    fn complex(&mut self, z: Complex64) {
        self.f64(z.re);
        self.f64(z.im);
    }

    fn finish(self) -> u64 {
        let digest = self.0.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

fn assemble(
    kind: ModelKind,
    n_max: usize,
    hs: SystemOperator,
    baths: Vec<(SystemOperator, SpectralDensity)>,
    beta: f64,
    noise: &NoiseSettings,
    initial: Vec<Complex64>,
) -> Result<PreparedModel> {
    let mut hasher = Hasher::new("stochdyn-model-v1");
    hasher.usize(n_max);
    hasher.usize(hs.dim());
    hs.matrix().iter().for_each(|z| hasher.complex(*z));
    initial.iter().for_each(|z| hasher.complex(*z));
    hasher.f64(beta);
    hasher.f64(noise.cutoff_factor);
    hasher.usize(noise.n_points);

    let mut couplings = Vec::with_capacity(baths.len());
    let mut schemes = Vec::with_capacity(baths.len());
    let mut first_mode = 0;
    for (op, sd) in baths {
        let bc = BathCorrelation::new(sd, beta, FrequencyGrid::new(default_cutoff(&sd, beta), 201)?)?;
        let expansion = fit_expansion(&bc)?;
        op.matrix().iter().for_each(|z| hasher.complex(*z));
        for term in &expansion.terms {
            hasher.complex(term.d);
            hasher.complex(term.nu);
        }
        schemes.push(Arc::new(noise.scheme(sd, beta)?));
        let n_terms = expansion.len();
        couplings.push(BathCoupling {
            operator: op,
            expansion,
            first_mode,
        });
        first_mode += n_terms;
    }
    let space = if first_mode == 0 {
        HierarchySpace::closed()
    } else {
        build_space(first_mode, n_max)?
    };
    let hamiltonian = EffectiveHamiltonian::new(hs, couplings, Arc::new(space))?;
    Ok(PreparedModel {
        kind,
        n_max,
        hamiltonian: Arc::new(hamiltonian),
        schemes,
        initial,
        hash: hasher.finish(),
    })
}

pub fn build_sbm(spec: &SpinBosonSpec, n_max: usize) -> Result<PreparedModel> {
    build_sbm_with(spec, n_max, &NoiseSettings::default())
}

/// Two-level system coupled through `sigma_z` to one Debye-Drude bath.
/// With `eta = 0` the bath is dropped and the model is closed.
pub fn build_sbm_with(spec: &SpinBosonSpec, n_max: usize, noise: &NoiseSettings) -> Result<PreparedModel> {
    spec.validate()?;
    if n_max == 0 {
        return Err(CoreError::Domain("n_max must be at least 1".into()));
    }
    let hs = SystemOperator::from_real(
        &[vec![spec.epsilon, spec.v], vec![spec.v, -spec.epsilon]],
        OperatorRole::SystemHamiltonian,
    )?;
    let mut baths = Vec::new();
    if spec.eta > 0.0 {
        let sigma_z = SystemOperator::diagonal_real(&[1.0, -1.0], OperatorRole::Coupling)?;
        baths.push((sigma_z, spec.spectral_density()?));
    }
    assemble(
        ModelKind::SpinBoson(spec.clone()),
        n_max,
        hs,
        baths,
        spec.beta,
        noise,
        spec.initial.to_vec(),
    )
}

pub fn build_fmo(spec: &FrenkelExcitonSpec, n_max: usize) -> Result<PreparedModel> {
    build_fmo_with(spec, n_max, &NoiseSettings::default())
}

/// Exciton Hamiltonian in fs⁻¹ with one independent bath per site coupled
/// through `|n><n|`. Site energies are shifted by their mean, which only
/// changes a global phase.
pub fn build_fmo_with(spec: &FrenkelExcitonSpec, n_max: usize, noise: &NoiseSettings) -> Result<PreparedModel> {
    spec.validate()?;
    if n_max == 0 {
        return Err(CoreError::Domain("n_max must be at least 1".into()));
    }
    let n = spec.n_sites();
    let mean = spec.site_energies.iter().sum::<f64>() / n as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let cm = if i == j {
                        spec.site_energies[i] - mean
                    } else {
                        spec.couplings[i][j]
                    };
                    wavenumber_to_angular(cm)
                })
                .collect()
        })
        .collect();
    let hs = SystemOperator::from_real(&rows, OperatorRole::SystemHamiltonian)?;
    let beta = beta_from_temperature(spec.temperature)?;
    let mut baths = Vec::new();
    if spec.lambda_reorg > 0.0 {
        let sd = spec.spectral_density()?;
        for site in 0..n {
            let mut diag = vec![0.0; n];
            diag[site] = 1.0;
            baths.push((SystemOperator::diagonal_real(&diag, OperatorRole::Coupling)?, sd));
        }
    }
    let mut initial = vec![Complex64::new(0.0, 0.0); n];
    initial[spec.initial_site] = Complex64::new(1.0, 0.0);
    assemble(ModelKind::Exciton(spec.clone()), n_max, hs, baths, beta, noise, initial)
}

/// Exact reduced dynamics of the spin-boson model at `V = 0`.
///
/// Populations are frozen and the coherence evolves as
/// `rho_12(t) = rho_12(0) exp(-2 i eps t) exp(-4 G(t))` with
/// `G(t) = int_0^t int_0^s alpha_r(u) du ds`, tabulated by nested trapezoid
/// over the same real bath correlation the noise reproduces.
#[derive(Debug, Clone)]
pub struct PureDephasing {
    epsilon: f64,
    rho0: [Complex64; 4],
    step: f64,
    exponent: Vec<f64>,
}

impl PureDephasing {
    pub fn new(spec: &SpinBosonSpec, t_max: f64) -> Result<Self> {
        Self::with_noise(spec, t_max, &NoiseSettings::default())
    }

    pub fn with_noise(spec: &SpinBosonSpec, t_max: f64, noise: &NoiseSettings) -> Result<Self> {
        spec.validate()?;
        if spec.v != 0.0 {
            return Err(CoreError::Domain(format!(
                "pure-dephasing solution requires V = 0, got {}",
                spec.v
            )));
        }
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(CoreError::Domain(format!("invalid horizon {t_max}")));
        }
        let s = spec.initial;
        let rho0 = [
            s[0] * s[0].conj(),
            s[0] * s[1].conj(),
            s[1] * s[0].conj(),
            s[1] * s[1].conj(),
        ];
        let sd = spec.spectral_density()?;
        let k_max = noise.cutoff_factor / 20.0 * default_cutoff(&sd, spec.beta);
        let step = (1e-3f64).min(0.1 / k_max);
        let n = (t_max / step).ceil() as usize + 1;
        let mut exponent = vec![0.0; n + 1];
        if spec.eta > 0.0 {
            let bc = BathCorrelation::new(sd, spec.beta, FrequencyGrid::new(k_max, 8001)?)?;
            let alpha: Vec<f64> = (0..=n).map(|i| bc.real_part(i as f64 * step)).collect();
            let mut inner = 0.0;
            for i in 1..=n {
                let prev_inner = inner;
                inner += 0.5 * step * (alpha[i - 1] + alpha[i]);
                exponent[i] = exponent[i - 1] + 0.5 * step * (prev_inner + inner);
            }
        }
        Ok(Self {
            epsilon: spec.epsilon,
            rho0,
            step,
            exponent,
        })
    }

    /// `G(t)`, linearly interpolated between tabulation points.
    pub fn exponent(&self, t: f64) -> f64 {
        let x = t / self.step;
        let i = (x.floor() as usize).min(self.exponent.len() - 2);
        let frac = x - i as f64;
        self.exponent[i] * (1.0 - frac) + self.exponent[i + 1] * frac
    }

    pub fn horizon(&self) -> f64 {
        self.step * (self.exponent.len() - 1) as f64
    }

    pub fn rho(&self, t: f64) -> [Complex64; 4] {
        let decay = (-4.0 * self.exponent(t)).exp();
        let phase = Complex64::from_polar(decay, -2.0 * self.epsilon * t);
        [
            self.rho0[0],
            self.rho0[1] * phase,
            self.rho0[2] * phase.conj(),
            self.rho0[3],
        ]
    }
}

pub fn pure_dephasing_exact(spec: &SpinBosonSpec, t: f64) -> Result<[Complex64; 4]> {
    Ok(PureDephasing::new(spec, t)?.rho(t))
}

/// `G(t)` via the spectral representation
/// `(1/pi) int J(w) coth(beta w / 2) (1 - cos w t) / w^2 dw` up to `omega_max`.
pub fn dephasing_exponent_spectral(
    sd: &SpectralDensity,
    beta: f64,
    t: f64,
    omega_max: f64,
    n_points: usize,
) -> f64 {
    let h = omega_max / (n_points - 1) as f64;
    let integrand = |w: f64| {
        let kernel = if w * t < 1e-4 {
            0.5 * t * t * (1.0 - (w * t).powi(2) / 12.0)
        } else {
            (1.0 - (w * t).cos()) / (w * w)
        };
        thermal_weighted_density(sd, w, beta) * kernel
    };
    let mut sum = 0.5 * (integrand(0.0) + integrand(omega_max));
    for i in 1..n_points - 1 {
        sum += integrand(i as f64 * h);
    }
    sum * h / PI
}
