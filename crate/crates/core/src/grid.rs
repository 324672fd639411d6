use crate::error::{CoreError, Result};

/// Uniform time grid defined by an integer number of steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(CoreError::Domain(format!("invalid time grid t0={t0}, dt={dt}")));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid covering `[t0, t1]`; `t1 - t0` must be an integer multiple of `dt`
    /// up to rounding.
    pub fn from_bounds(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(CoreError::Domain(format!("t1 ({t1}) must exceed t0 ({t0})")));
        }
        let steps = (t1 - t0) / dt;
        let n = steps.round();
        if (steps - n).abs() > 1e-6 * steps.max(1.0) {
            return Err(CoreError::Domain(format!(
                "interval [{t0}, {t1}] is not a whole number of steps of {dt}"
            )));
        }
        Self::new(t0, dt, n as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t1(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |i| self.time(i))
    }

    /// Grid with twice the resolution, holding the Runge-Kutta stage times.
    pub fn half_step(&self) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            dt: 0.5 * self.dt,
            n_steps: 2 * self.n_steps,
        }
    }

    /// Every `stride`-th point of this grid.
    pub fn subsample(&self, stride: usize) -> Result<TimeGrid> {
        if stride == 0 || self.n_steps % stride != 0 {
            return Err(CoreError::Domain(format!(
                "stride {stride} does not divide {} steps",
                self.n_steps
            )));
        }
        Ok(TimeGrid {
            t0: self.t0,
            dt: self.dt * stride as f64,
            n_steps: self.n_steps / stride,
        })
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let x = ((t - self.t0) / self.dt).round();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.n_steps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_roundtrip() {
        let g = TimeGrid::from_bounds(0.0, 5.0, 1e-3).unwrap();
        assert_eq!(g.n_steps(), 5000);
        assert_eq!(g.len(), 5001);
        assert!((g.t1() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_fractional_interval() {
        assert!(TimeGrid::from_bounds(0.0, 1.05, 0.1).is_err());
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
    }

    #[test]
    fn half_step_shares_endpoints() {
        let g = TimeGrid::new(1.0, 0.2, 7).unwrap();
        let h = g.half_step();
        assert_eq!(h.len(), 15);
        assert_eq!(h.time(0), g.time(0));
        assert!((h.t1() - g.t1()).abs() < 1e-12);
    }

    #[test]
    fn subsample_requires_divisor() {
        let g = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let s = g.subsample(10).unwrap();
        assert_eq!(s.len(), 11);
        assert!((s.dt() - 0.1).abs() < 1e-15);
        assert!(g.subsample(7).is_err());
    }
}
