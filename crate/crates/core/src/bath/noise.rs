use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::chirp::ChirpPlan;
use super::{bose, default_cutoff, BathCorrelation, SpectralDensity};
use crate::error::{CoreError, Result};
use crate::grid::TimeGrid;

/// Minimum ensemble size accepted by [`verify_noise_statistics`].
pub const MIN_REALIZATIONS: usize = 1000;

/// Discretized k-integral of the Gaussian noise construction.
///
/// Frequencies are identified with `k` on a uniform midpoint grid up to
/// `k_max`; the weight `h(k)` carries `sqrt(J(w) dk / pi)` so that the white
/// noises become unit normal draws.
#[derive(Debug, Clone)]
pub struct NoiseScheme {
    spectral: SpectralDensity,
    beta: f64,
    k_max: f64,
    delta_k: f64,
    omegas: Vec<f64>,
    weights: Vec<f64>,
    occupations: Vec<f64>,
}

impl NoiseScheme {
    pub fn new(spectral: SpectralDensity, beta: f64, k_max: f64, n_points: usize) -> Result<Self> {
        spectral.validate()?;
        if !(beta > 0.0) || !(k_max > 0.0) || n_points == 0 {
            return Err(CoreError::Domain(format!(
                "noise scheme needs beta > 0, k_max > 0, n_points > 0 (got {beta}, {k_max}, {n_points})"
            )));
        }
        let delta_k = k_max / n_points as f64;
        let omegas: Vec<f64> = (0..n_points).map(|j| (j as f64 + 0.5) * delta_k).collect();
        let weights = omegas
            .iter()
            .map(|&w| (spectral.value(w) * delta_k / PI).sqrt())
            .collect();
        let occupations = omegas.iter().map(|&w| bose(beta * w)).collect();
        Ok(Self {
            spectral,
            beta,
            k_max,
            delta_k,
            omegas,
            weights,
            occupations,
        })
    }

    /// `k_max = 20 max(gamma, 1/beta)` with 2000 points.
    pub fn with_defaults(spectral: SpectralDensity, beta: f64) -> Result<Self> {
        Self::new(spectral, beta, default_cutoff(&spectral, beta), 2000)
    }

    pub fn spectral(&self) -> &SpectralDensity {
        &self.spectral
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn delta_k(&self) -> f64 {
        self.delta_k
    }

    pub fn n_points(&self) -> usize {
        self.omegas.len()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn occupations(&self) -> &[f64] {
        &self.occupations
    }

    /// Exact covariances of the discretized processes:
    /// `(<xi1(t) xi1(s)>, <xi1(t) xi2*(s)>)` at `tau = t - s`.
    pub fn discrete_covariance(&self, tau: f64) -> (Complex64, Complex64) {
        let mut a1 = 0.0;
        let mut a2 = Complex64::new(0.0, 0.0);
        for ((w, h), g) in self.omegas.iter().zip(&self.weights).zip(&self.occupations) {
            let h2 = h * h;
            let (s, c) = (w * tau).sin_cos();
            a1 += h2 * (2.0 * g + 1.0) * c;
            a2 += Complex64::new(h2 * (2.0 * g + 1.0) * c, h2 * s);
        }
        (Complex64::new(a1, 0.0), a2)
    }
}

/// Frequency-domain coefficients of one noise draw.
///
/// `xi1(t) = A(t) + conj(Bc(t)) + Re C(t)` and
/// `xi2*(t) = conj(A(t)) + Bc(t) + Re D(t)` where `X(t) = sum_j X_j e^{i w_j t}`.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub a: Vec<Complex64>,
    pub b_conj: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub d: Vec<Complex64>,
}

impl NoiseDraw {
    /// Consumes six standard normals per frequency point, in order.
    pub fn from_rng<R: Rng + ?Sized>(scheme: &NoiseScheme, rng: &mut R) -> Self {
        let n = scheme.n_points();
        let mut draw = NoiseDraw {
            a: Vec::with_capacity(n),
            b_conj: Vec::with_capacity(n),
            c: Vec::with_capacity(n),
            d: Vec::with_capacity(n),
        };
        for (h, g) in scheme.weights.iter().zip(&scheme.occupations) {
            let mu: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let z = Complex64::new(mu[0], mu[1]);
            let up = ((g + 1.0) / 2.0).sqrt();
            let down = (g / 2.0).sqrt();
            // sqrt(g+1) - sqrt(g) without cancellation
            let diff = 1.0 / ((g + 1.0).sqrt() + g.sqrt());
            draw.a.push(z * (h * up));
            draw.b_conj.push(z * (h * down));
            draw.c.push(Complex64::new(mu[2], -mu[3]) * (h * diff));
            draw.d.push(Complex64::new(mu[4], -mu[5]) * (h * diff));
        }
        draw
    }

    /// Direct evaluation of `(xi1(t), xi2*(t))` at an arbitrary time.
    pub fn evaluate_direct(&self, scheme: &NoiseScheme, t: f64) -> (Complex64, Complex64) {
        let mut a = Complex64::new(0.0, 0.0);
        let mut b = Complex64::new(0.0, 0.0);
        let mut c = 0.0;
        let mut d = 0.0;
        for (j, w) in scheme.omegas.iter().enumerate() {
            let e = Complex64::from_polar(1.0, w * t);
            a += self.a[j] * e;
            b += self.b_conj[j] * e;
            c += (self.c[j] * e).re;
            d += (self.d[j] * e).re;
        }
        (a + b.conj() + c, a.conj() + b + d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub grid: TimeGrid,
    pub xi1: Vec<Complex64>,
    pub xi2_star: Vec<Complex64>,
    pub seed: u64,
}

/// Evaluates noise draws on a fixed time grid; reusable across seeds.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    scheme: Arc<NoiseScheme>,
    grid: TimeGrid,
    plan: Arc<ChirpPlan>,
}

impl NoiseSampler {
    pub fn new(scheme: Arc<NoiseScheme>, grid: TimeGrid) -> Self {
        let plan = ChirpPlan::new(scheme.delta_k, scheme.n_points(), grid.t0(), grid.dt(), grid.len());
        Self {
            scheme,
            grid,
            plan: Arc::new(plan),
        }
    }

    pub fn scheme(&self) -> &NoiseScheme {
        &self.scheme
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn sample(&self, seed: u64) -> NoiseRealization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_from(&mut rng, seed)
    }

    /// Draws from a caller-owned generator; `seed` is only recorded.
    pub fn sample_from<R: Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> NoiseRealization {
        let draw = NoiseDraw::from_rng(&self.scheme, rng);
        let (xi1, xi2_star) = self.realize(&draw);
        NoiseRealization {
            grid: self.grid,
            xi1,
            xi2_star,
            seed,
        }
    }

    /// Evaluates `(xi1, xi2*)` on the sampler grid.
    pub fn realize(&self, draw: &NoiseDraw) -> (Vec<Complex64>, Vec<Complex64>) {
        let m = self.grid.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut scratch = Vec::new();
        let mut a = vec![zero; m];
        let mut b = vec![zero; m];
        let mut c = vec![zero; m];
        let mut d = vec![zero; m];
        self.plan.evaluate_into(&draw.a, &mut scratch, &mut a);
        self.plan.evaluate_into(&draw.b_conj, &mut scratch, &mut b);
        self.plan.evaluate_into(&draw.c, &mut scratch, &mut c);
        self.plan.evaluate_into(&draw.d, &mut scratch, &mut d);
        let xi1 = (0..m).map(|n| a[n] + b[n].conj() + c[n].re).collect();
        let xi2_star = (0..m).map(|n| a[n].conj() + b[n] + d[n].re).collect();
        (xi1, xi2_star)
    }
}

pub fn sample_noise(scheme: &NoiseScheme, grid: TimeGrid, seed: u64) -> NoiseRealization {
    NoiseSampler::new(Arc::new(scheme.clone()), grid).sample(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentRelation {
    /// `<xi1(t)> = <xi2*(t)> = 0`
    Mean,
    /// `<xi1(t) xi1(s)> = alpha_r(t - s)`
    Xi1Xi1,
    /// `<xi2*(t) xi2*(s)> = alpha_r(t - s)`
    Xi2Xi2,
    /// `<xi1(t) xi2*(s)> = alpha_2(t - s)`
    Xi1Xi2,
    /// `<xi2*(t) xi1(s)> = alpha_2*(t - s)`
    Xi2Xi1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub relation: MomentRelation,
    pub t: f64,
    pub s: f64,
    pub empirical: Complex64,
    pub target: Complex64,
    pub z_re: f64,
    pub z_im: f64,
}

impl MomentCheck {
    pub fn max_abs_z(&self) -> f64 {
        self.z_re.abs().max(self.z_im.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseReport {
    pub n_realizations: usize,
    pub checks: Vec<MomentCheck>,
}

impl NoiseReport {
    /// Fraction of checks with every |z| below `threshold` (1 when empty).
    pub fn fraction_within(&self, threshold: f64) -> f64 {
        if self.checks.is_empty() {
            return 1.0;
        }
        let ok = self.checks.iter().filter(|c| c.max_abs_z() < threshold).count();
        ok as f64 / self.checks.len() as f64
    }

    /// True when fewer than 95% of checks fall within three standard errors.
    pub fn flagged(&self) -> bool {
        self.fraction_within(3.0) < 0.95
    }
}

fn z_score(samples: &[Complex64], target: Complex64) -> (Complex64, f64, f64) {
    let n = samples.len() as f64;
    let mean: Complex64 = samples.iter().sum::<Complex64>() / n;
    let (mut var_re, mut var_im) = (0.0, 0.0);
    for s in samples {
        var_re += (s.re - mean.re).powi(2);
        var_im += (s.im - mean.im).powi(2);
    }
    let se_re = (var_re / (n - 1.0)).sqrt() / n.sqrt();
    let se_im = (var_im / (n - 1.0)).sqrt() / n.sqrt();
    let z = |diff: f64, se: f64| {
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    (mean, z(mean.re - target.re, se_re), z(mean.im - target.im, se_im))
}

/// Compares empirical first and second moments of an ensemble of noise
/// realizations against the bath correlation, at the given `(t, s)` index
/// pairs of the realization grid.
pub fn verify_noise_statistics(
    realizations: &[NoiseRealization],
    bc: &BathCorrelation,
    pairs: &[(usize, usize)],
) -> Result<NoiseReport> {
    if realizations.len() < MIN_REALIZATIONS {
        return Err(CoreError::InsufficientStatistics {
            got: realizations.len(),
            need: MIN_REALIZATIONS,
        });
    }
    let grid = realizations[0].grid;
    if realizations.iter().any(|r| r.grid != grid) {
        return Err(CoreError::Structural("realizations live on different grids".into()));
    }
    let len = grid.len();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= len || j >= len) {
        return Err(CoreError::Structural(format!("pair ({i}, {j}) outside grid of {len} points")));
    }

    let mut report = NoiseReport {
        n_realizations: realizations.len(),
        checks: Vec::with_capacity(pairs.len() * 6),
    };
    let zero = Complex64::new(0.0, 0.0);
    let mut buf = Vec::with_capacity(realizations.len());
    for &(i, j) in pairs {
        let (t, s) = (grid.time(i), grid.time(j));
        let alpha = bc.evaluate(t - s);
        let alpha_r = Complex64::new(alpha.re, 0.0);
        let alpha_2 = alpha.conj();

        let mut push = |relation, products: &mut Vec<Complex64>, target| {
            let (empirical, z_re, z_im) = z_score(products, target);
            report.checks.push(MomentCheck {
                relation,
                t,
                s,
                empirical,
                target,
                z_re,
                z_im,
            });
        };

        buf.clear();
        buf.extend(realizations.iter().map(|r| r.xi1[i]));
        push(MomentRelation::Mean, &mut buf, zero);
        buf.clear();
        buf.extend(realizations.iter().map(|r| r.xi2_star[i]));
        push(MomentRelation::Mean, &mut buf, zero);
        buf.clear();
        buf.extend(realizations.iter().map(|r| r.xi1[i] * r.xi1[j]));
        push(MomentRelation::Xi1Xi1, &mut buf, alpha_r);
        buf.clear();
        buf.extend(realizations.iter().map(|r| r.xi2_star[i] * r.xi2_star[j]));
        push(MomentRelation::Xi2Xi2, &mut buf, alpha_r);
        buf.clear();
        buf.extend(realizations.iter().map(|r| r.xi1[i] * r.xi2_star[j]));
        push(MomentRelation::Xi1Xi2, &mut buf, alpha_2);
        buf.clear();
        buf.extend(realizations.iter().map(|r| r.xi2_star[i] * r.xi1[j]));
        push(MomentRelation::Xi2Xi1, &mut buf, alpha_2.conj());
    }
    Ok(report)
}
