//! Observable vectors built from density matrices, convergence prefixes,
//! sliding windows and train/validation splits.

use std::io::Write;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Number of real components `d_s² - 1` describing a `d_s`-level density matrix.
pub fn observable_len(d_s: usize) -> usize {
    d_s * d_s - 1
}

/// Population differences and the upper-triangle coherences of a Hermitized
/// density matrix. Flattened order: all deltas, then all real parts, then
/// all imaginary parts, with `i < j` pairs in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableVector {
    pub deltas: Vec<f64>,
    pub offdiag_re: Vec<f64>,
    pub offdiag_im: Vec<f64>,
}

impl ObservableVector {
    pub fn d_s(&self) -> usize {
        self.deltas.len() + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.deltas.len() + 2 * self.offdiag_re.len());
        out.extend(&self.deltas);
        out.extend(&self.offdiag_re);
        out.extend(&self.offdiag_im);
        out
    }

    pub fn from_flat(flat: &[f64], d_s: usize) -> Result<Self> {
        if d_s < 2 || flat.len() != observable_len(d_s) {
            return Err(CoreError::Structural(format!(
                "{} components do not describe a {d_s}-level system",
                flat.len()
            )));
        }
        let pairs = d_s * (d_s - 1) / 2;
        Ok(Self {
            deltas: flat[..d_s - 1].to_vec(),
            offdiag_re: flat[d_s - 1..d_s - 1 + pairs].to_vec(),
            offdiag_im: flat[d_s - 1 + pairs..].to_vec(),
        })
    }
}

/// `delta_1.., re_1_2.., im_1_2..` with one-based level labels.
pub fn component_names(d_s: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..d_s).map(|i| format!("delta_{i}")).collect();
    for prefix in ["re", "im"] {
        for i in 0..d_s {
            for j in i + 1..d_s {
                names.push(format!("{prefix}_{}_{}", i + 1, j + 1));
            }
        }
    }
    names
}

/// Writes the flattened observable components of row-major `rho` into `out`.
pub fn vectorize_into(rho: &[Complex64], d_s: usize, out: &mut [f64]) {
    debug_assert_eq!(rho.len(), d_s * d_s);
    debug_assert_eq!(out.len(), observable_len(d_s));
    let diag = |i: usize| rho[i * d_s + i].re;
    for i in 0..d_s - 1 {
        out[i] = diag(i) - diag(i + 1);
    }
    let pairs = d_s * (d_s - 1) / 2;
    let mut p = 0;
    for i in 0..d_s {
        for j in i + 1..d_s {
            let herm = 0.5 * (rho[i * d_s + j] + rho[j * d_s + i].conj());
            out[d_s - 1 + p] = herm.re;
            out[d_s - 1 + pairs + p] = herm.im;
            p += 1;
        }
    }
}

pub fn vectorize(rho: &[Complex64], d_s: usize) -> Result<ObservableVector> {
    if d_s < 2 || rho.len() != d_s * d_s {
        return Err(CoreError::Structural(format!(
            "expected a {d_s}x{d_s} matrix, got {} entries",
            rho.len()
        )));
    }
    let mut flat = vec![0.0; observable_len(d_s)];
    vectorize_into(rho, d_s, &mut flat);
    ObservableVector::from_flat(&flat, d_s)
}

/// Hermitian matrix with the given deltas, coherences and trace.
pub fn devectorize(omega: &ObservableVector, trace: f64) -> Vec<Complex64> {
    let d = omega.d_s();
    // p_k = p_0 - sum_{i<k} delta_i and sum p_k = trace
    let mut offsets = vec![0.0; d];
    for k in 1..d {
        offsets[k] = offsets[k - 1] - omega.deltas[k - 1];
    }
    let p0 = (trace - offsets.iter().sum::<f64>()) / d as f64;
    let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
    for k in 0..d {
        rho[k * d + k] = Complex64::new(p0 + offsets[k], 0.0);
    }
    let mut p = 0;
    for i in 0..d {
        for j in i + 1..d {
            let z = Complex64::new(omega.offdiag_re[p], omega.offdiag_im[p]);
            rho[i * d + j] = z;
            rho[j * d + i] = z.conj();
            p += 1;
        }
    }
    rho
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergedPrefix {
    /// Number of leading time points whose SE summary stays within the threshold.
    pub count: usize,
    pub flag: PrefixFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixFlag {
    Converged,
    /// Every point is within the threshold.
    Complete,
    /// The first point already exceeds the threshold.
    NoConvergedPrefix,
}

impl ConvergedPrefix {
    /// Index of the last converged point, if any.
    pub fn last_index(&self) -> Option<usize> {
        self.count.checked_sub(1)
    }
}

/// First-crossing rule: counts points until the SE summary first exceeds `eps1`.
pub fn find_converged_prefix(se_summary: &[f64], eps1: f64) -> Result<ConvergedPrefix> {
    if se_summary.is_empty() {
        return Err(CoreError::Domain("standard-error series is empty".into()));
    }
    let count = se_summary.iter().position(|&s| !(s <= eps1)).unwrap_or(se_summary.len());
    let flag = match count {
        0 => PrefixFlag::NoConvergedPrefix,
        c if c == se_summary.len() => PrefixFlag::Complete,
        _ => PrefixFlag::Converged,
    };
    Ok(ConvergedPrefix { count, flag })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_index: usize,
    /// `L` consecutive flattened observable vectors.
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// Sliding windows of length `l`, each paired with the following point.
pub fn make_windows(series: &[Vec<f64>], l: usize) -> Vec<Window> {
    if l == 0 || series.len() < l + 1 {
        log::warn!("series of length {} too short for windows of length {l}", series.len());
        return Vec::new();
    }
    (0..series.len() - l)
        .map(|a| Window {
            start_index: a,
            inputs: series[a..a + l].to_vec(),
            target: series[a + l].clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub t1: Vec<Window>,
    pub t2: Vec<Window>,
    pub v: Vec<Window>,
}

pub const MIN_SPLIT_WINDOWS: usize = 8;

/// Chronological 3:1 cut into training and validation, then a seeded
/// shuffle of the training part and a 7:3 cut into T1 and T2. First parts
/// take the floor.
pub fn split(windows: &[Window], shuffle_seed: u64) -> Result<DatasetSplit> {
    if windows.len() < MIN_SPLIT_WINDOWS {
        return Err(CoreError::Domain(format!(
            "need at least {MIN_SPLIT_WINDOWS} windows to split, got {}",
            windows.len()
        )));
    }
    let n_t = windows.len() * 3 / 4;
    let mut t = windows[..n_t].to_vec();
    let v = windows[n_t..].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    t.shuffle(&mut rng);
    let n_t1 = n_t * 7 / 10;
    let t2 = t.split_off(n_t1);
    Ok(DatasetSplit { t1: t, t2, v })
}

/// CSV with header `t` followed by the component names.
pub fn write_series_csv<W: Write>(mut out: W, times: &[f64], series: &[Vec<f64>], d_s: usize) -> Result<()> {
    write!(out, "t")?;
    for name in component_names(d_s) {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (t, row) in times.iter().zip(series) {
        write!(out, "{t:?}")?;
        for x in row {
            write!(out, ",{x:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
