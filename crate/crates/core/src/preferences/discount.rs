use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscountKind {
    Exponential {
        delta: f64,
    },
    /// `α e^{−δτ} + (1 − α) e^{−γτ}`.
    Mixture {
        alpha: f64,
        delta: f64,
        gamma_rate: f64,
    },
    /// `(1 + ατ) e^{−δτ}`.
    QuasiExponential {
        alpha: f64,
        delta: f64,
    },
    Hyperbolic {
        delta: f64,
    },
    /// `e^{−δ(t)(s−t)}` with `δ(·)` linearly interpolated from a table.
    RefDependent {
        times: Vec<f64>,
        rates: Vec<f64>,
    },
}

/// A discount function `λ(t, s)` on `0 ≤ t ≤ s ≤ T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountFunction {
    kind: DiscountKind,
    horizon: f64,
}

impl DiscountFunction {
    pub fn new(kind: DiscountKind, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain("discount", format!("horizon must be positive, got {horizon}")));
        }
        let bad = |detail: String| Err(Error::domain("discount", detail));
        match &kind {
            DiscountKind::Exponential { delta } if !(*delta >= 0.0 && delta.is_finite()) => {
                return bad(format!("exponential delta must be >= 0, got {delta}"));
            }
            DiscountKind::Mixture {
                alpha,
                delta,
                gamma_rate,
            } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("mixture alpha must lie in (0,1), got {alpha}"));
                }
                if !(*delta > 0.0 && *gamma_rate > 0.0) || delta == gamma_rate {
                    return bad(format!(
                        "mixture rates must be positive and distinct, got {delta}, {gamma_rate}"
                    ));
                }
            }
            DiscountKind::QuasiExponential { alpha, delta } => {
                if !(*alpha > 0.0 && *delta > 0.0) {
                    return bad(format!("quasi-exponential needs alpha, delta > 0, got {alpha}, {delta}"));
                }
            }
            DiscountKind::Hyperbolic { delta } if !(*delta > 0.0 && delta.is_finite()) => {
                return bad(format!("hyperbolic delta must be positive, got {delta}"));
            }
            DiscountKind::RefDependent { times, rates } => {
                if times.is_empty() || times.len() != rates.len() {
                    return bad("rate table needs matching non-empty times and rates".into());
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("rate table times must be strictly increasing".into());
                }
                if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
                    return bad("rate table values must be finite and >= 0".into());
                }
            }
            _ => {}
        }
        Ok(Self { kind, horizon })
    }

    pub fn exponential(delta: f64, horizon: f64) -> Result<Self> {
        Self::new(DiscountKind::Exponential { delta }, horizon)
    }

    pub fn hyperbolic(delta: f64, horizon: f64) -> Result<Self> {
        Self::new(DiscountKind::Hyperbolic { delta }, horizon)
    }

    /// `λ ≡ 1`.
    pub fn none(horizon: f64) -> Self {
        Self {
            kind: DiscountKind::Exponential { delta: 0.0 },
            horizon,
        }
    }

    pub fn kind(&self) -> &DiscountKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Rate of the exponential family, if this is one.
    pub fn exponential_rate(&self) -> Option<f64> {
        match self.kind {
            DiscountKind::Exponential { delta } => Some(delta),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let tau = s - t;
        if tau == 0.0 {
            return 1.0;
        }
        match &self.kind {
            DiscountKind::Exponential { delta } => (-delta * tau).exp(),
            DiscountKind::Mixture {
                alpha,
                delta,
                gamma_rate,
            } => alpha * (-delta * tau).exp() + (1.0 - alpha) * (-gamma_rate * tau).exp(),
            DiscountKind::QuasiExponential { alpha, delta } => {
                (1.0 + alpha * tau) * (-delta * tau).exp()
            }
            DiscountKind::Hyperbolic { delta } => 1.0 / (1.0 + delta * tau),
            DiscountKind::RefDependent { times, rates } => {
                (-interpolate(times, rates, t) * tau).exp()
            }
        }
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last];
    }
    let j = times.partition_point(|&x| x <= t);
    let (t0, t1) = (times[j - 1], times[j]);
    let w = (t - t0) / (t1 - t0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<DiscountKind> {
        vec![
            DiscountKind::Exponential { delta: 0.7 },
            DiscountKind::Mixture {
                alpha: 0.3,
                delta: 0.5,
                gamma_rate: 2.0,
            },
            DiscountKind::QuasiExponential {
                alpha: 0.4,
                delta: 1.1,
            },
            DiscountKind::Hyperbolic { delta: 1.0 },
            DiscountKind::RefDependent {
                times: vec![0.0, 0.5, 1.0],
                rates: vec![0.2, 1.5, 0.9],
            },
        ]
    }

    #[test]
    fn diagonal_is_exactly_one() {
        for kind in families() {
            let d = DiscountFunction::new(kind, 1.0).unwrap();
            for k in 0..=100 {
                let t = k as f64 / 100.0;
                assert_eq!(d.eval(t, t), 1.0);
            }
        }
    }

    #[test]
    fn hyperbolic_example() {
        let d = DiscountFunction::hyperbolic(1.0, 1.0).unwrap();
        assert_eq!(d.eval(0.0, 1.0), 0.5);
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = [
            DiscountKind::Exponential { delta: -0.1 },
            DiscountKind::Mixture {
                alpha: 1.0,
                delta: 0.5,
                gamma_rate: 2.0,
            },
            DiscountKind::Mixture {
                alpha: 0.5,
                delta: 1.0,
                gamma_rate: 1.0,
            },
            DiscountKind::Hyperbolic { delta: 0.0 },
            DiscountKind::RefDependent {
                times: vec![0.0, 0.0],
                rates: vec![1.0, 1.0],
            },
        ];
        for kind in bad {
            assert!(DiscountFunction::new(kind, 1.0).is_err());
        }
    }

    #[test]
    fn parses_tagged_json() {
        let k: DiscountKind = serde_json::from_str(r#"{"kind":"hyperbolic","delta":1.0}"#).unwrap();
        assert_eq!(k, DiscountKind::Hyperbolic { delta: 1.0 });
        assert!(serde_json::from_str::<DiscountKind>(r#"{"kind":"hyperbolic","delt":1.0}"#).is_err());
    }
}
