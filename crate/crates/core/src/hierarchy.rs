//! Pseudo-Fock hierarchy space and the forward/backward effective
//! Hamiltonians acting on it.
//!
//! A stochastic state is `sum_n |Psi_n> (x) |n>` with `n = (n_1..n_K)` the
//! occupation of each exponential bath mode. Amplitudes are stored with the
//! hierarchy index outermost, so every `|Psi_n>` is a contiguous system
//! vector.

use std::sync::Arc;

use num_complex::Complex64;

use crate::bath::{ExponentialExpansion, NoiseRealization};
use crate::error::{CoreError, Result};

pub const DEFAULT_DIM_CAP: usize = 1_000_000;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpace {
    n_modes: usize,
    n_max: usize,
    dim: usize,
    strides: Vec<usize>,
    occupations: Vec<usize>,
}

impl HierarchySpace {
    /// Vacuum-only space of a closed system (no bath modes).
    pub fn closed() -> Self {
        Self {
            n_modes: 0,
            n_max: 0,
            dim: 1,
            strides: Vec::new(),
            occupations: Vec::new(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lexicographic flat index; the first mode is most significant.
    pub fn flat_index(&self, multi: &[usize]) -> Option<usize> {
        if multi.len() != self.n_modes || multi.iter().any(|&n| n > self.n_max) {
            return None;
        }
        Some(multi.iter().zip(&self.strides).map(|(n, s)| n * s).sum())
    }

    pub fn multi_index(&self, flat: usize) -> Option<Vec<usize>> {
        (flat < self.dim).then(|| self.occupation_row(flat).to_vec())
    }

    pub fn occupation(&self, flat: usize, mode: usize) -> usize {
        self.occupations[flat * self.n_modes + mode]
    }

    fn occupation_row(&self, flat: usize) -> &[usize] {
        &self.occupations[flat * self.n_modes..(flat + 1) * self.n_modes]
    }

    pub fn stride(&self, mode: usize) -> usize {
        self.strides[mode]
    }
}

pub fn build_space(n_modes: usize, n_max: usize) -> Result<HierarchySpace> {
    build_space_with_cap(n_modes, n_max, DEFAULT_DIM_CAP)
}

pub fn build_space_with_cap(n_modes: usize, n_max: usize, cap: usize) -> Result<HierarchySpace> {
    if n_modes == 0 || n_max == 0 {
        return Err(CoreError::Domain(format!(
            "hierarchy needs K >= 1 and n_max >= 1, got K={n_modes}, n_max={n_max}"
        )));
    }
    let base = n_max + 1;
    let mut dim: usize = 1;
    for _ in 0..n_modes {
        dim = match dim.checked_mul(base) {
            Some(d) if d <= cap => d,
            _ => {
                return Err(CoreError::Size {
                    dim: dim.saturating_mul(base),
                    cap,
                })
            }
        };
    }
    let mut strides = vec![1; n_modes];
    for k in (0..n_modes.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * base;
    }
    let mut occupations = Vec::with_capacity(dim * n_modes);
    for i in 0..dim {
        for s in &strides {
            occupations.push((i / s) % base);
        }
    }
    Ok(HierarchySpace {
        n_modes,
        n_max,
        dim,
        strides,
        occupations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorRole {
    SystemHamiltonian,
    Coupling,
}

/// Hermitian operator on the system Hilbert space, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOperator {
    dim: usize,
    matrix: Vec<Complex64>,
    role: OperatorRole,
    diagonal: Option<Vec<Complex64>>,
}

impl SystemOperator {
    pub fn new(dim: usize, matrix: Vec<Complex64>, role: OperatorRole) -> Result<Self> {
        if dim == 0 || matrix.len() != dim * dim {
            return Err(CoreError::Structural(format!(
                "operator of dimension {dim} needs {} entries, got {}",
                dim * dim,
                matrix.len()
            )));
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        for i in 0..dim {
            for j in 0..=i {
                if (matrix[i * dim + j] - matrix[j * dim + i].conj()).norm() > 1e-12 * scale {
                    return Err(CoreError::Validation(format!(
                        "{role:?} operator is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let is_diagonal = (0..dim).all(|i| (0..dim).all(|j| i == j || matrix[i * dim + j] == ZERO));
        let diagonal = is_diagonal.then(|| (0..dim).map(|i| matrix[i * dim + i]).collect());
        Ok(Self {
            dim,
            matrix,
            role,
            diagonal,
        })
    }

    pub fn from_real(rows: &[Vec<f64>], role: OperatorRole) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::Structural("operator rows must form a square matrix".into()));
        }
        let matrix = rows
            .iter()
            .flat_map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)))
            .collect();
        Self::new(dim, matrix, role)
    }

    pub fn diagonal_real(values: &[f64], role: OperatorRole) -> Result<Self> {
        let n = values.len();
        let mut m = vec![ZERO; n * n];
        for (i, v) in values.iter().enumerate() {
            m[i * n + i] = Complex64::new(*v, 0.0);
        }
        Self::new(n, m, role)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> OperatorRole {
        self.role
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[i * self.dim + j]
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }

    /// `out += scale * M x`
    #[inline]
    pub fn apply_add(&self, scale: Complex64, x: &[Complex64], out: &mut [Complex64]) {
        match &self.diagonal {
            Some(diag) => {
                for ((o, d), v) in out.iter_mut().zip(diag).zip(x) {
                    *o += scale * d * v;
                }
            }
            None => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                    let acc: Complex64 = row.iter().zip(x).map(|(m, v)| m * v).sum();
                    *o += scale * acc;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticState {
    dim_s: usize,
    dim_h: usize,
    amplitudes: Vec<Complex64>,
    pub flavor: Flavor,
    pub t: f64,
}

impl StochasticState {
    pub fn zeros(dim_s: usize, dim_h: usize, flavor: Flavor, t: f64) -> Self {
        Self {
            dim_s,
            dim_h,
            amplitudes: vec![ZERO; dim_s * dim_h],
            flavor,
            t,
        }
    }

    /// `|system> (x) |0>`
    pub fn vacuum(system: &[Complex64], dim_h: usize, flavor: Flavor, t: f64) -> Self {
        let mut s = Self::zeros(system.len(), dim_h, flavor, t);
        s.amplitudes[..system.len()].copy_from_slice(system);
        s
    }

    pub fn from_amplitudes(
        dim_s: usize,
        dim_h: usize,
        amplitudes: Vec<Complex64>,
        flavor: Flavor,
        t: f64,
    ) -> Result<Self> {
        if amplitudes.len() != dim_s * dim_h {
            return Err(CoreError::Structural(format!(
                "expected {} amplitudes, got {}",
                dim_s * dim_h,
                amplitudes.len()
            )));
        }
        Ok(Self {
            dim_s,
            dim_h,
            amplitudes,
            flavor,
            t,
        })
    }

    pub fn dim_s(&self) -> usize {
        self.dim_s
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    /// Amplitude of system level `s` in hierarchy component `h`.
    pub fn amplitude(&self, s: usize, h: usize) -> Complex64 {
        self.amplitudes[h * self.dim_s + s]
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    /// The `n = 0` hierarchy component.
    pub fn vacuum_component(&self) -> &[Complex64] {
        &self.amplitudes[..self.dim_s]
    }

    pub fn is_finite(&self) -> bool {
        self.amplitudes.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderDirection {
    Raise,
    Lower,
}

/// Applies `b_k^dagger` or `b_k`; raising beyond `n_max` is truncated.
pub fn apply_ladder(
    space: &HierarchySpace,
    state: &StochasticState,
    mode: usize,
    direction: LadderDirection,
) -> Result<StochasticState> {
    if mode >= space.n_modes {
        return Err(CoreError::Structural(format!(
            "mode {mode} out of range for {} modes",
            space.n_modes
        )));
    }
    if state.dim_h != space.dim {
        return Err(CoreError::Structural("state does not live in this hierarchy space".into()));
    }
    let ds = state.dim_s;
    let stride = space.strides[mode];
    let mut out = StochasticState::zeros(ds, state.dim_h, state.flavor, state.t);
    for h in 0..space.dim {
        let n = space.occupation(h, mode);
        let (target, factor) = match direction {
            LadderDirection::Raise if n < space.n_max => (h + stride, ((n + 1) as f64).sqrt()),
            LadderDirection::Lower if n > 0 => (h - stride, (n as f64).sqrt()),
            _ => continue,
        };
        for s in 0..ds {
            out.amplitudes[target * ds + s] += state.amplitudes[h * ds + s] * factor;
        }
    }
    Ok(out)
}

/// One bath attached to the system through `operator`, with its modes
/// occupying `first_mode..first_mode + expansion.len()` in the hierarchy.
#[derive(Debug, Clone)]
pub struct BathCoupling {
    pub operator: SystemOperator,
    pub expansion: ExponentialExpansion,
    pub first_mode: usize,
}

#[derive(Debug, Clone, Copy)]
struct Neighbor {
    index: usize,
    factor: f64,
}

/// `H_eff = H_s + sum_b f_b xi_b(t) - i sum_k nu_k n_k - sum_k f_b(k) sqrt(2 d_k) p_k`
/// with `p_k = (i / sqrt 2)(b_k^dagger - b_k)`, prepared for repeated application.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    hs: SystemOperator,
    couplings: Vec<BathCoupling>,
    space: Arc<HierarchySpace>,
    /// `-i sqrt(d_k)` per mode
    ladder_coeff: Vec<Complex64>,
    /// `sum_k nu_k n_k` per hierarchy index
    damping: Vec<Complex64>,
    /// `[h * K + k]`: source of `b_k^dagger` contributions into `h`
    lower: Vec<Neighbor>,
    /// `[h * K + k]`: source of `b_k` contributions into `h`
    raise: Vec<Neighbor>,
    mode_bath: Vec<usize>,
}

impl EffectiveHamiltonian {
    pub fn new(hs: SystemOperator, couplings: Vec<BathCoupling>, space: Arc<HierarchySpace>) -> Result<Self> {
        let ds = hs.dim();
        let n_modes = space.n_modes();
        let mut mode_bath = vec![NONE; n_modes];
        let mut ladder_coeff = vec![ZERO; n_modes];
        let mut nu = vec![ZERO; n_modes];
        for (b, c) in couplings.iter().enumerate() {
            if c.operator.dim() != ds {
                return Err(CoreError::Structural(format!(
                    "coupling operator {b} has dimension {}, system has {ds}",
                    c.operator.dim()
                )));
            }
            for (offset, term) in c.expansion.terms.iter().enumerate() {
                let k = c.first_mode + offset;
                if k >= n_modes || mode_bath[k] != NONE {
                    return Err(CoreError::Structural(format!(
                        "bath {b} claims mode {k}, which is out of range or already taken"
                    )));
                }
                mode_bath[k] = b;
                ladder_coeff[k] = Complex64::new(0.0, -1.0) * term.d.sqrt();
                nu[k] = term.nu;
            }
        }
        if let Some(k) = mode_bath.iter().position(|&b| b == NONE) {
            return Err(CoreError::Structural(format!("hierarchy mode {k} has no bath term")));
        }

        let dim_h = space.dim();
        let mut damping = Vec::with_capacity(dim_h);
        let mut lower = Vec::with_capacity(dim_h * n_modes);
        let mut raise = Vec::with_capacity(dim_h * n_modes);
        for h in 0..dim_h {
            let mut acc = ZERO;
            for k in 0..n_modes {
                let n = space.occupation(h, k);
                acc += nu[k] * n as f64;
                lower.push(if n > 0 {
                    Neighbor {
                        index: h - space.stride(k),
                        factor: (n as f64).sqrt(),
                    }
                } else {
                    Neighbor { index: NONE, factor: 0.0 }
                });
                raise.push(if n < space.n_max() {
                    Neighbor {
                        index: h + space.stride(k),
                        factor: ((n + 1) as f64).sqrt(),
                    }
                } else {
                    Neighbor { index: NONE, factor: 0.0 }
                });
            }
            damping.push(acc);
        }
        Ok(Self {
            hs,
            couplings,
            space,
            ladder_coeff,
            damping,
            lower,
            raise,
            mode_bath,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.hs.dim()
    }

    pub fn hierarchy_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn space(&self) -> &HierarchySpace {
        &self.space
    }

    pub fn n_baths(&self) -> usize {
        self.couplings.len()
    }

    pub fn system_hamiltonian(&self) -> &SystemOperator {
        &self.hs
    }

    pub fn couplings(&self) -> &[BathCoupling] {
        &self.couplings
    }

    /// `out = H_eff x` given the noise value entering each bath
    /// (`xi1` for forward, `conj(xi2*)` for backward states).
    /// `work` must hold one system vector per bath.
    pub fn apply_into(&self, noise: &[Complex64], x: &[Complex64], out: &mut [Complex64], work: &mut [Complex64]) {
        let ds = self.hs.dim();
        let n_modes = self.space.n_modes();
        let nb = self.couplings.len();
        debug_assert_eq!(noise.len(), nb);
        debug_assert_eq!(work.len(), nb * ds);
        for h in 0..self.space.dim() {
            let psi = &x[h * ds..(h + 1) * ds];
            let o = &mut out[h * ds..(h + 1) * ds];
            o.fill(ZERO);
            self.hs.apply_add(Complex64::new(1.0, 0.0), psi, o);
            let damp = Complex64::new(0.0, -1.0) * self.damping[h];
            for (oi, p) in o.iter_mut().zip(psi) {
                *oi += damp * p;
            }
            for b in 0..nb {
                let w = &mut work[b * ds..(b + 1) * ds];
                for (wi, p) in w.iter_mut().zip(psi) {
                    *wi = noise[b] * p;
                }
            }
            for k in 0..n_modes {
                let b = self.mode_bath[k];
                let c = self.ladder_coeff[k];
                let w = &mut work[b * ds..(b + 1) * ds];
                let lo = self.lower[h * n_modes + k];
                if lo.index != NONE {
                    let src = &x[lo.index * ds..(lo.index + 1) * ds];
                    let f = c * lo.factor;
                    for (wi, v) in w.iter_mut().zip(src) {
                        *wi += f * v;
                    }
                }
                let hi = self.raise[h * n_modes + k];
                if hi.index != NONE {
                    let src = &x[hi.index * ds..(hi.index + 1) * ds];
                    let f = -c * hi.factor;
                    for (wi, v) in w.iter_mut().zip(src) {
                        *wi += f * v;
                    }
                }
            }
            for (b, coupling) in self.couplings.iter().enumerate() {
                coupling
                    .operator
                    .apply_add(Complex64::new(1.0, 0.0), &work[b * ds..(b + 1) * ds], o);
            }
        }
    }
}

/// Effective Hamiltonian bound to the noise of one trajectory.
pub struct EffectiveHamiltonianSpec<'a> {
    pub hamiltonian: &'a EffectiveHamiltonian,
    /// One realization per bath.
    pub noises: &'a [NoiseRealization],
    pub flavor: Flavor,
}

impl EffectiveHamiltonianSpec<'_> {
    /// Noise entering each bath at time `t`, linearly interpolated on the
    /// realization grid and conjugated for the backward flavor.
    pub fn noise_at(&self, t: f64) -> Vec<Complex64> {
        self.noises
            .iter()
            .map(|r| {
                let series = match self.flavor {
                    Flavor::Forward => &r.xi1,
                    Flavor::Backward => &r.xi2_star,
                };
                let v = interpolate(r, series, t);
                match self.flavor {
                    Flavor::Forward => v,
                    Flavor::Backward => v.conj(),
                }
            })
            .collect()
    }
}

fn interpolate(r: &NoiseRealization, series: &[Complex64], t: f64) -> Complex64 {
    let x = (t - r.grid.t0()) / r.grid.dt();
    if x <= 0.0 {
        return series[0];
    }
    let i = x.floor() as usize;
    if i >= r.grid.n_steps() {
        return series[r.grid.n_steps()];
    }
    let frac = x - i as f64;
    series[i] * (1.0 - frac) + series[i + 1] * frac
}

pub fn apply_effective_hamiltonian(
    spec: &EffectiveHamiltonianSpec<'_>,
    state: &StochasticState,
    t: f64,
) -> Result<StochasticState> {
    let h = spec.hamiltonian;
    if state.dim_s != h.system_dim() || state.dim_h != h.hierarchy_dim() {
        return Err(CoreError::Structural(format!(
            "state shape ({}, {}) does not match Hamiltonian ({}, {})",
            state.dim_s,
            state.dim_h,
            h.system_dim(),
            h.hierarchy_dim()
        )));
    }
    if spec.noises.len() != h.n_baths() {
        return Err(CoreError::Structural(format!(
            "{} noise realizations for {} baths",
            spec.noises.len(),
            h.n_baths()
        )));
    }
    let noise = spec.noise_at(t);
    let mut out = StochasticState::zeros(state.dim_s, state.dim_h, state.flavor, state.t);
    let mut work = vec![ZERO; h.n_baths() * state.dim_s];
    h.apply_into(&noise, &state.amplitudes, &mut out.amplitudes, &mut work);
    Ok(out)
}

/// `|Psi_0^f><Psi_0^b|` as a row-major `d_s x d_s` matrix.
pub fn system_projection(fwd: &StochasticState, bwd: &StochasticState) -> Result<Vec<Complex64>> {
    if fwd.dim_s != bwd.dim_s || fwd.dim_h != bwd.dim_h {
        return Err(CoreError::Structural("forward and backward states differ in shape".into()));
    }
    if (fwd.t - bwd.t).abs() > 1e-12 * fwd.t.abs().max(1.0) {
        return Err(CoreError::Structural(format!(
            "forward state at t={} but backward at t={}",
            fwd.t, bwd.t
        )));
    }
    let ds = fwd.dim_s;
    let mut rho = vec![ZERO; ds * ds];
    project_into(fwd.vacuum_component(), bwd.vacuum_component(), &mut rho);
    Ok(rho)
}

#[inline]
pub(crate) fn project_into(ket: &[Complex64], bra: &[Complex64], rho: &mut [Complex64]) {
    let ds = ket.len();
    for i in 0..ds {
        for j in 0..ds {
            rho[i * ds + j] = ket[i] * bra[j].conj();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::ExpTerm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(rng: &mut ChaCha8Rng, ds: usize, dh: usize) -> StochasticState {
        let amps = (0..ds * dh)
            .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        StochasticState::from_amplitudes(ds, dh, amps, Flavor::Forward, 0.0).unwrap()
    }

    #[test]
    fn space_dimensions() {
        assert_eq!(build_space(1, 6).unwrap().dim(), 7);
        assert_eq!(build_space(2, 3).unwrap().dim(), 16);
        assert!(build_space(0, 3).is_err());
        assert!(build_space(2, 0).is_err());
        assert!(matches!(build_space(30, 3), Err(CoreError::Size { .. })));
        assert!(matches!(build_space_with_cap(3, 3, 63), Err(CoreError::Size { .. })));
    }

    #[test]
    fn index_roundtrip_is_lexicographic() {
        let space = build_space(3, 2).unwrap();
        let mut prev: Option<Vec<usize>> = None;
        for i in 0..space.dim() {
            let m = space.multi_index(i).unwrap();
            assert_eq!(space.flat_index(&m), Some(i));
            if let Some(p) = prev {
                assert!(p < m);
            }
            prev = Some(m);
        }
        assert_eq!(space.multi_index(space.dim()), None);
        assert_eq!(space.flat_index(&[0, 3, 0]), None);
    }

    #[test]
    fn lowering_vacuum_gives_zero() {
        let space = build_space(2, 3).unwrap();
        let s = StochasticState::vacuum(&[c(1.0, 0.0), c(0.5, -0.5)], space.dim(), Flavor::Forward, 0.0);
        for k in 0..2 {
            let out = apply_ladder(&space, &s, k, LadderDirection::Lower).unwrap();
            assert!(out.amplitudes().iter().all(|z| *z == ZERO));
        }
    }

    #[test]
    fn raise_then_lower_on_vacuum_is_identity() {
        let space = build_space(2, 2).unwrap();
        let s = StochasticState::vacuum(&[c(0.3, 0.1), c(-0.2, 0.9)], space.dim(), Flavor::Forward, 0.0);
        let up = apply_ladder(&space, &s, 1, LadderDirection::Raise).unwrap();
        let back = apply_ladder(&space, &up, 1, LadderDirection::Lower).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn raising_past_cutoff_truncates() {
        let space = build_space(1, 2).unwrap();
        let top = space.flat_index(&[2]).unwrap();
        let mut s = StochasticState::zeros(1, space.dim(), Flavor::Forward, 0.0);
        s.amplitudes_mut()[top] = c(1.0, 0.0);
        let up = apply_ladder(&space, &s, 0, LadderDirection::Raise).unwrap();
        assert!(up.amplitudes().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn number_operator_expectation() {
        // <n| b^dagger b |n> = n_k, compared with an explicit dense ladder matrix
        let space = build_space(1, 4).unwrap();
        let dim = space.dim();
        let mut dense_b = vec![0.0; dim * dim];
        for n in 1..dim {
            dense_b[(n - 1) * dim + n] = (n as f64).sqrt();
        }
        for n in 0..dim {
            let mut s = StochasticState::zeros(1, dim, Flavor::Forward, 0.0);
            s.amplitudes_mut()[n] = c(1.0, 0.0);
            let lowered = apply_ladder(&space, &s, 0, LadderDirection::Lower).unwrap();
            let number = apply_ladder(&space, &lowered, 0, LadderDirection::Raise).unwrap();
            let via_ops = number.amplitudes()[n].re;
            let via_dense: f64 = (0..dim).map(|m| dense_b[m * dim + n] * dense_b[m * dim + n]).sum();
            assert!((via_ops - n as f64).abs() < 1e-12);
            assert!((via_dense - n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn non_hermitian_operator_rejected() {
        let m = vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(-1.0, 0.0)];
        assert!(matches!(
            SystemOperator::new(2, m, OperatorRole::SystemHamiltonian),
            Err(CoreError::Validation(_))
        ));
    }

    fn sbm_like(n_max: usize, d: Complex64, nu: f64) -> EffectiveHamiltonian {
        let hs = SystemOperator::from_real(&[vec![1.0, 0.7], vec![0.7, -1.0]], OperatorRole::SystemHamiltonian)
            .unwrap();
        let f = SystemOperator::diagonal_real(&[1.0, -1.0], OperatorRole::Coupling).unwrap();
        let space = Arc::new(build_space(1, n_max).unwrap());
        let expansion = ExponentialExpansion::new(vec![ExpTerm {
            d,
            nu: c(nu, 0.0),
        }])
        .unwrap();
        EffectiveHamiltonian::new(
            hs,
            vec![BathCoupling {
                operator: f,
                expansion,
                first_mode: 0,
            }],
            space,
        )
        .unwrap()
    }

    fn apply(h: &EffectiveHamiltonian, noise: Complex64, x: &StochasticState) -> StochasticState {
        let mut out = StochasticState::zeros(x.dim_s(), x.dim_h(), x.flavor, x.t);
        let mut work = vec![ZERO; h.n_baths() * x.dim_s()];
        h.apply_into(&[noise], x.amplitudes(), out.amplitudes_mut(), &mut work);
        out
    }

    #[test]
    fn zero_state_maps_to_zero() {
        let h = sbm_like(3, c(0.0, -1.25), 5.0);
        let z = StochasticState::zeros(2, 4, Flavor::Forward, 0.0);
        let out = apply(&h, c(0.3, -0.2), &z);
        assert!(out.amplitudes().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn eigenvector_in_vacuum_without_coupling() {
        let hs = SystemOperator::from_real(&[vec![1.0, 0.0], vec![0.0, -1.0]], OperatorRole::SystemHamiltonian)
            .unwrap();
        let f = SystemOperator::diagonal_real(&[1.0, -1.0], OperatorRole::Coupling).unwrap();
        let space = Arc::new(build_space(1, 3).unwrap());
        let expansion = ExponentialExpansion::new(vec![ExpTerm {
            d: ZERO,
            nu: c(2.0, 0.0),
        }])
        .unwrap();
        let h = EffectiveHamiltonian::new(
            hs,
            vec![BathCoupling {
                operator: f,
                expansion,
                first_mode: 0,
            }],
            space,
        )
        .unwrap();
        let s = StochasticState::vacuum(&[ZERO, c(1.0, 0.0)], 4, Flavor::Forward, 0.0);
        let out = apply(&h, ZERO, &s);
        for (a, b) in out.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b * -1.0).norm() < 1e-15);
        }
    }

    /// Dense matrix of H_eff built from Kronecker products, independent of
    /// the neighbor tables.
    fn dense_heff(n_max: usize, d: Complex64, nu: f64, noise: Complex64) -> Vec<Complex64> {
        let ds = 2;
        let dh = n_max + 1;
        let n = ds * dh;
        let hs = [[1.0, 0.7], [0.7, -1.0]];
        let f = [1.0, -1.0];
        let mut bdag = vec![vec![0.0; dh]; dh];
        let mut b = vec![vec![0.0; dh]; dh];
        for m in 0..dh - 1 {
            bdag[m + 1][m] = ((m + 1) as f64).sqrt();
            b[m][m + 1] = ((m + 1) as f64).sqrt();
        }
        let sq = (2.0 * d).sqrt();
        let mut out = vec![ZERO; n * n];
        // state index = h * ds + s
        for h1 in 0..dh {
            for s1 in 0..ds {
                for h2 in 0..dh {
                    for s2 in 0..ds {
                        let mut v = ZERO;
                        if h1 == h2 {
                            v += c(hs[s1][s2], 0.0);
                            if s1 == s2 {
                                v += noise * f[s1];
                                v += c(0.0, -1.0) * nu * h1 as f64;
                            }
                        }
                        if s1 == s2 {
                            let p = c(0.0, 1.0 / 2f64.sqrt()) * (bdag[h1][h2] - b[h1][h2]);
                            v -= f[s1] * sq * p;
                        }
                        out[(h1 * ds + s1) * n + h2 * ds + s2] = v;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n_max, d) in &[(2, c(0.0, -1.25)), (4, c(0.3, -0.4)), (1, c(0.0, -0.0625))] {
            let nu = 1.7;
            let noise = c(0.4, -1.1);
            let h = sbm_like(n_max, d, nu);
            let dense = dense_heff(n_max, d, nu, noise);
            let n = 2 * (n_max + 1);
            for _ in 0..20 {
                let x = random_state(&mut rng, 2, n_max + 1);
                let got = apply(&h, noise, &x);
                for i in 0..n {
                    let want: Complex64 = (0..n).map(|j| dense[i * n + j] * x.amplitudes()[j]).sum();
                    assert!((got.amplitudes()[i] - want).norm() < 1e-14, "n_max={n_max} i={i}");
                }
            }
        }
    }

    #[test]
    fn linear_in_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = sbm_like(3, c(0.2, -0.9), 2.0);
        let a = c(0.3, 1.2);
        let b = c(-0.7, 0.1);
        let noise = c(0.5, 0.2);
        let x = random_state(&mut rng, 2, 4);
        let y = random_state(&mut rng, 2, 4);
        let combo: Vec<Complex64> = x.amplitudes().iter().zip(y.amplitudes()).map(|(u, v)| a * u + b * v).collect();
        let combo = StochasticState::from_amplitudes(2, 4, combo, Flavor::Forward, 0.0).unwrap();
        let lhs = apply(&h, noise, &combo);
        let hx = apply(&h, noise, &x);
        let hy = apply(&h, noise, &y);
        for i in 0..8 {
            let rhs = a * hx.amplitudes()[i] + b * hy.amplitudes()[i];
            assert!((lhs.amplitudes()[i] - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn projection_of_vacuum_states() {
        let e1 = [c(1.0, 0.0), ZERO];
        let f = StochasticState::vacuum(&e1, 3, Flavor::Forward, 0.5);
        let b = StochasticState::vacuum(&e1, 3, Flavor::Backward, 0.5);
        let rho = system_projection(&f, &b).unwrap();
        assert_eq!(rho, vec![c(1.0, 0.0), ZERO, ZERO, ZERO]);

        let mut excited = StochasticState::zeros(2, 3, Flavor::Forward, 0.5);
        excited.amplitudes_mut()[2] = c(1.0, 0.0);
        let rho = system_projection(&excited, &b).unwrap();
        assert!(rho.iter().all(|z| *z == ZERO));

        let late = StochasticState::vacuum(&e1, 3, Flavor::Backward, 0.6);
        assert!(system_projection(&f, &late).is_err());
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let h = sbm_like(2, c(0.0, -1.0), 1.0);
        let noise = NoiseRealization {
            grid: crate::grid::TimeGrid::new(0.0, 0.1, 2).unwrap(),
            xi1: vec![ZERO; 3],
            xi2_star: vec![ZERO; 3],
            seed: 0,
        };
        let spec = EffectiveHamiltonianSpec {
            hamiltonian: &h,
            noises: std::slice::from_ref(&noise),
            flavor: Flavor::Forward,
        };
        let wrong = StochasticState::zeros(2, 5, Flavor::Forward, 0.0);
        assert!(matches!(
            apply_effective_hamiltonian(&spec, &wrong, 0.0),
            Err(CoreError::Structural(_))
        ));
        let right = StochasticState::zeros(2, 3, Flavor::Forward, 0.0);
        assert!(apply_effective_hamiltonian(&spec, &right, 0.05).is_ok());
    }

    #[test]
    fn backward_flavor_conjugates_noise() {
        let noise = NoiseRealization {
            grid: crate::grid::TimeGrid::new(0.0, 1.0, 1).unwrap(),
            xi1: vec![c(1.0, 1.0), c(3.0, 3.0)],
            xi2_star: vec![c(0.0, 2.0), c(2.0, 4.0)],
            seed: 0,
        };
        let h = sbm_like(1, c(0.0, -1.0), 1.0);
        let reals = [noise];
        let fwd = EffectiveHamiltonianSpec {
            hamiltonian: &h,
            noises: &reals,
            flavor: Flavor::Forward,
        };
        let bwd = EffectiveHamiltonianSpec {
            hamiltonian: &h,
            noises: &reals,
            flavor: Flavor::Backward,
        };
        assert_eq!(fwd.noise_at(0.5), vec![c(2.0, 2.0)]);
        assert_eq!(bwd.noise_at(0.5), vec![c(1.0, -3.0)]);
    }
}
