use crate::error::{Error, Result};

/// Strictly increasing simulation times `t_0 < … < t_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::Grid(format!(
                "uniform grid needs steps >= 1 and horizon > 0, got {steps}, {horizon}"
            )));
        }
        let h = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        times[steps] = horizon;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Grid("grid needs at least two points".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Grid("grid times must be finite and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    #[inline]
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn tol(&self) -> f64 {
        1e-10 * (self.end() - self.start()).abs().max(1.0)
    }

    /// Index of the grid point equal to `t` up to a relative 1e-10.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.times.partition_point(|&x| x < t - self.tol());
        (j < self.times.len() && (self.times[j] - t).abs() <= self.tol()).then_some(j)
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t)
            .ok_or_else(|| Error::Grid(format!("time {t} is not a grid point")))
    }

    /// Grid with every window endpoint inserted and every window resolved by
    /// at least `min_steps` steps (steps inside short windows are split evenly).
    pub fn with_windows(&self, windows: &[(f64, f64)], min_steps: usize) -> Result<Self> {
        let mut times = self.times.clone();
        for &(a, b) in windows {
            if !(a < b) || a < self.start() - self.tol() || b > self.end() + self.tol() {
                return Err(Error::Grid(format!("window [{a}, {b}] outside the grid")));
            }
            for p in [a, b] {
                let g = TimeGrid { times: times.clone() };
                if g.index_of(p).is_none() {
                    let j = times.partition_point(|&x| x < p);
                    times.insert(j, p);
                }
            }
        }
        for &(a, b) in windows {
            let g = TimeGrid { times };
            let (ia, ib) = (g.require_index(a)?, g.require_index(b)?);
            let mut times_new = g.times[..ia].to_vec();
            let inside = ib - ia;
            let split = if inside < min_steps {
                min_steps.div_ceil(inside)
            } else {
                1
            };
            for k in ia..ib {
                let (t0, t1) = (g.times[k], g.times[k + 1]);
                for j in 0..split {
                    times_new.push(t0 + (t1 - t0) * j as f64 / split as f64);
                }
            }
            times_new.extend_from_slice(&g.times[ib..]);
            times = times_new;
        }
        Self::from_times(times)
    }

    /// Uniform grid on `[0, horizon]` whose window `[t, t + eps]` is split
    /// into exactly `window_steps` equal steps.
    pub fn windowed(
        horizon: f64,
        base_steps: usize,
        t: f64,
        eps: f64,
        window_steps: usize,
    ) -> Result<Self> {
        if !(t >= 0.0 && eps > 0.0 && t + eps <= horizon * (1.0 + 1e-12)) || window_steps == 0 {
            return Err(Error::Grid(format!("window [{t}, {}] outside [0, {horizon}]", t + eps)));
        }
        let b = (t + eps).min(horizon);
        let h = horizon / base_steps.max(1) as f64;
        let mut times = Vec::new();
        let n_before = (t / h).ceil() as usize;
        for k in 0..n_before {
            times.push(t * k as f64 / n_before as f64);
        }
        for j in 0..window_steps {
            times.push(t + (b - t) * j as f64 / window_steps as f64);
        }
        let n_after = ((horizon - b) / h).ceil() as usize;
        for k in 0..n_after {
            times.push(b + (horizon - b) * k as f64 / n_after as f64);
        }
        times.push(horizon);
        Self::from_times(times)
    }

    /// Every `factor`-th point (the last point is always kept).
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::Grid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        Self::from_times(self.times.iter().copied().step_by(factor).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ends_exactly() {
        let g = TimeGrid::uniform(1.0, 200).unwrap();
        assert_eq!(g.end(), 1.0);
        assert_eq!(g.index_of(0.25), Some(50));
        assert_eq!(g.index_of(0.2501), None);
    }

    #[test]
    fn short_window_is_refined() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let r = g.with_windows(&[(0.33, 0.36)], 4).unwrap();
        let (a, b) = (r.require_index(0.33).unwrap(), r.require_index(0.36).unwrap());
        assert!(b - a >= 4);
        assert_eq!(r.end(), 1.0);
    }

    #[test]
    fn windowed_grid_has_exact_window() {
        let g = TimeGrid::windowed(1.0, 100, 0.25, 0.025, 64).unwrap();
        let (a, b) = (g.require_index(0.25).unwrap(), g.require_index(0.275).unwrap());
        assert_eq!(b - a, 64);
    }

    #[test]
    fn coarsen_keeps_end() {
        let g = TimeGrid::uniform(1.0, 8).unwrap().coarsen(4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0]);
    }
}
