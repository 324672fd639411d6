use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Chirp-z (Bluestein) evaluation of
/// `S(t_n) = sum_j c_j exp(i w_j t_n)` with `w_j = (j + 1/2) dw` and
/// `t_n = t0 + n h`, for all `n` at once.
pub struct ChirpPlan {
    n_freq: usize,
    n_times: usize,
    size: usize,
    pre: Vec<Complex64>,
    post: Vec<Complex64>,
    kernel: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ChirpPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChirpPlan")
            .field("n_freq", &self.n_freq)
            .field("n_times", &self.n_times)
            .field("size", &self.size)
            .finish()
    }
}

fn phase(angle: f64) -> Complex64 {
    Complex64::from_polar(1.0, angle)
}

impl ChirpPlan {
    pub fn new(dw: f64, n_freq: usize, t0: f64, h: f64, n_times: usize) -> Self {
        assert!(n_freq > 0 && n_times > 0);
        let size = (n_freq + n_times - 1).next_power_of_two();
        let theta = dw * h;
        let half_square = |m: usize| {
            let sq = (m as u128 * m as u128) as f64;
            0.5 * theta * sq
        };

        let pre = (0..n_freq)
            .map(|j| {
                let w = (j as f64 + 0.5) * dw;
                phase(w * t0 + half_square(j))
            })
            .collect();
        let post = (0..n_times)
            .map(|n| phase(0.5 * theta * n as f64 + half_square(n)))
            .collect();

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);

        let mut kernel = vec![Complex64::new(0.0, 0.0); size];
        for (m, slot) in kernel.iter_mut().enumerate().take(n_times) {
            *slot = phase(-half_square(m));
        }
        for m in 1..n_freq {
            kernel[size - m] = phase(-half_square(m));
        }
        forward.process(&mut kernel);

        Self {
            n_freq,
            n_times,
            size,
            pre,
            post,
            kernel,
            forward,
            inverse,
        }
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Evaluates the sum for coefficient vector `coeffs` into `out`.
    /// `scratch` is resized as needed and may be reused between calls.
    pub fn evaluate_into(&self, coeffs: &[Complex64], scratch: &mut Vec<Complex64>, out: &mut [Complex64]) {
        assert_eq!(coeffs.len(), self.n_freq);
        assert_eq!(out.len(), self.n_times);
        scratch.clear();
        scratch.resize(self.size, Complex64::new(0.0, 0.0));
        for ((s, c), p) in scratch.iter_mut().zip(coeffs).zip(&self.pre) {
            *s = c * p;
        }
        self.forward.process(scratch);
        for (s, k) in scratch.iter_mut().zip(&self.kernel) {
            *s *= k;
        }
        self.inverse.process(scratch);
        let norm = 1.0 / self.size as f64;
        for ((o, s), p) in out.iter_mut().zip(scratch.iter()).zip(&self.post) {
            *o = s * p * norm;
        }
    }

    pub fn evaluate(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_times];
        let mut scratch = Vec::new();
        self.evaluate_into(coeffs, &mut scratch, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(coeffs: &[Complex64], dw: f64, t: f64) -> Complex64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * phase((j as f64 + 0.5) * dw * t))
            .sum()
    }

    #[test]
    fn matches_direct_sum() {
        let n_freq = 300;
        let dw = 0.05;
        let (t0, h, n_times) = (0.3, 0.0125, 1001);
        let coeffs: Vec<Complex64> = (0..n_freq)
            .map(|j| Complex64::new((j as f64 * 0.37).sin(), (j as f64 * 1.3).cos() * 0.5))
            .collect();
        let plan = ChirpPlan::new(dw, n_freq, t0, h, n_times);
        let fast = plan.evaluate(&coeffs);
        let scale: f64 = coeffs.iter().map(|c| c.norm()).sum();
        for n in (0..n_times).step_by(37).chain([n_times - 1]) {
            let slow = direct(&coeffs, dw, t0 + n as f64 * h);
            assert!((fast[n] - slow).norm() < 1e-12 * scale, "n={n}");
        }
    }

    #[test]
    fn single_time_point() {
        let coeffs = vec![Complex64::new(1.0, 0.0); 4];
        let plan = ChirpPlan::new(1.0, 4, 0.0, 1.0, 1);
        let out = plan.evaluate(&coeffs);
        assert!((out[0] - Complex64::new(4.0, 0.0)).norm() < 1e-14);
    }
}
