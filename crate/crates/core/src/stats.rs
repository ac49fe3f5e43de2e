//! Running moments and small least-squares fits.

use serde::{Deserialize, Serialize};

/// Streaming mean/variance (Welford) with an order-preserving merge, so
/// chunked parallel reductions give identical results for any worker count.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Summary) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            se: self.std_error(),
        }
    }
}

impl FromIterator<f64> for Summary {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Summary::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0 }
    }
}

/// Least-squares line through `(x, y)`: returns `(intercept, slope)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let w = intercept_weights(x);
    let v = slope_weights(x);
    let a = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let b = v.iter().zip(y).map(|(v, y)| v * y).sum();
    (a, b)
}

/// Weights `w` with `intercept = Σ wᵢ yᵢ` for the least-squares line.
/// Being linear in `y`, they let a per-path intercept carry its own error bar.
pub fn intercept_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|x| (x - mx) * (x - mx)).sum();
    x.iter().map(|x| 1.0 / n - mx * (x - mx) / sxx).collect()
}

/// Weights giving the intercept of a least-squares quadratic in `x`; needs
/// at least three distinct abscissae.
pub fn quadratic_intercept_weights(x: &[f64]) -> Vec<f64> {
    let v = nalgebra::DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(j as i32));
    let gram = v.transpose() * &v;
    let Some(inv) = gram.try_inverse() else {
        return vec![f64::NAN; x.len()];
    };
    let w = inv.row(0) * v.transpose();
    w.iter().copied().collect()
}

pub fn slope_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|x| (x - mx) * (x - mx)).sum();
    x.iter().map(|x| (x - mx) / sxx).collect()
}

/// Empirical quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_recovers_line() {
        let x = [0.2, 0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|x| 1.5 - 2.0 * x).collect();
        let (a, b) = linear_fit(&x, &y);
        assert!((a - 1.5).abs() < 1e-12);
        assert!((b + 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_weights_recover_intercept() {
        let x = [0.2, 0.1, 0.05, 0.025];
        let w = quadratic_intercept_weights(&x);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * (0.7 - 3.0 * x + 5.0 * x * x)).sum();
        assert!((v - 0.7).abs() < 1e-10);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_endpoints() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 3.0);
        assert_eq!(quantile(&v, 0.5), 2.0);
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(xs in proptest::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let whole: Summary = xs.iter().copied().collect();
            let mut left: Summary = xs[..split].iter().copied().collect();
            let right: Summary = xs[split..].iter().copied().collect();
            left.merge(&right);
            prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((left.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
        }
    }
}
