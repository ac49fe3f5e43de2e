use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar coefficient process, either deterministic in time or a bounded
/// function of the current Brownian level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CoefficientRepr")]
pub enum Coefficient {
    Constant(f64),
    /// Piecewise linear in `t`, flat outside the table.
    Table { times: Vec<f64>, values: Vec<f64> },
    /// `level + amplitude · tanh(W^coordinate_t / scale)`.
    Tanh {
        level: f64,
        amplitude: f64,
        coordinate: usize,
        scale: f64,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CoefficientRepr {
    Number(f64),
    Tagged(Tagged),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Tagged {
    Constant {
        value: f64,
    },
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    Tanh {
        level: f64,
        amplitude: f64,
        #[serde(default)]
        coordinate: usize,
        scale: f64,
    },
}

impl From<CoefficientRepr> for Coefficient {
    fn from(r: CoefficientRepr) -> Self {
        match r {
            CoefficientRepr::Number(v) => Coefficient::Constant(v),
            CoefficientRepr::Tagged(Tagged::Constant { value }) => Coefficient::Constant(value),
            CoefficientRepr::Tagged(Tagged::Table { times, values }) => {
                Coefficient::Table { times, values }
            }
            CoefficientRepr::Tagged(Tagged::Tanh {
                level,
                amplitude,
                coordinate,
                scale,
            }) => Coefficient::Tanh {
                level,
                amplitude,
                coordinate,
                scale,
            },
        }
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

impl Coefficient {
    #[inline]
    pub fn eval(&self, t: f64, w: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Table { times, values } => interpolate(times, values, t),
            Coefficient::Tanh {
                level,
                amplitude,
                coordinate,
                scale,
            } => level + amplitude * (w[*coordinate] / scale).tanh(),
        }
    }

    /// Supremum of `|coefficient|`.
    pub fn bound(&self) -> f64 {
        match self {
            Coefficient::Constant(v) => v.abs(),
            Coefficient::Table { values, .. } => values.iter().fold(0.0, |a, v| a.max(v.abs())),
            Coefficient::Tanh {
                level, amplitude, ..
            } => level.abs() + amplitude.abs(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Coefficient::Tanh { .. })
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(v) => Some(*v),
            _ => None,
        }
    }

    fn validate(&self, name: &str, d: usize, issues: &mut Vec<String>) {
        match self {
            Coefficient::Constant(v) if !v.is_finite() => {
                issues.push(format!("{name}: non-finite constant"))
            }
            Coefficient::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    issues.push(format!("{name}: table needs matching non-empty times/values"));
                } else if times.windows(2).any(|w| !(w[0] < w[1])) {
                    issues.push(format!("{name}: table times must increase strictly"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    issues.push(format!("{name}: non-finite table value"));
                }
            }
            Coefficient::Tanh {
                level,
                amplitude,
                coordinate,
                scale,
            } => {
                if *coordinate >= d {
                    issues.push(format!("{name}: coordinate {coordinate} >= d = {d}"));
                }
                if !(*scale > 0.0) || !level.is_finite() || !amplitude.is_finite() {
                    issues.push(format!("{name}: tanh needs finite level/amplitude and scale > 0"));
                }
            }
            _ => {}
        }
    }
}

pub(crate) fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last];
    }
    let j = times.partition_point(|&x| x <= t);
    let w = (t - times[j - 1]) / (times[j] - times[j - 1]);
    values[j - 1] * (1.0 - w) + values[j] * w
}

/// Declared sup-norm bounds of the interest rate and market price of risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub r: f64,
    pub theta: f64,
}

/// Market with `d` Brownian drivers of which the first `d1` are traded.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketModel {
    pub horizon: f64,
    pub d: usize,
    pub d1: usize,
    pub r: Coefficient,
    pub theta: Vec<Coefficient>,
    pub income: Coefficient,
    pub terminal: Coefficient,
    pub bounds: Bounds,
}

impl MarketModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: f64,
        d: usize,
        d1: usize,
        r: Coefficient,
        theta: Vec<Coefficient>,
        income: Coefficient,
        terminal: Coefficient,
        bounds: Option<Bounds>,
    ) -> Result<Self> {
        let bounds = bounds.unwrap_or(Bounds {
            r: r.bound().max(1e-12),
            theta: theta.iter().fold(1e-12f64, |a, c| a.max(c.bound())),
        });
        let m = Self {
            horizon,
            d,
            d1,
            r,
            theta,
            income,
            terminal,
            bounds,
        };
        let issues = m.issues();
        if issues.is_empty() {
            Ok(m)
        } else {
            Err(Error::domain("market", issues.join("; ")))
        }
    }

    /// One traded asset with constant coefficients.
    pub fn constant(horizon: f64, r: f64, theta: f64, income: f64, terminal: f64) -> Result<Self> {
        Self::new(
            horizon,
            1,
            1,
            r.into(),
            vec![theta.into()],
            income.into(),
            terminal.into(),
            None,
        )
    }

    /// Every violated constraint, not just the first.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.d == 0 {
            out.push("d must be >= 1".into());
        }
        if self.d1 == 0 || self.d1 > self.d {
            out.push(format!("d1 must lie in 1..=d, got d1 = {} with d = {}", self.d1, self.d));
        }
        if self.theta.len() != self.d {
            out.push(format!("theta has {} entries, expected d = {}", self.theta.len(), self.d));
        }
        for (name, b) in [("bounds.r", self.bounds.r), ("bounds.theta", self.bounds.theta)] {
            if !(b > 0.0 && b.is_finite()) {
                out.push(format!("{name} must be positive and finite, got {b}"));
            }
        }
        self.r.validate("r", self.d, &mut out);
        self.income.validate("income", self.d, &mut out);
        self.terminal.validate("terminal", self.d, &mut out);
        for (i, c) in self.theta.iter().enumerate() {
            c.validate(&format!("theta[{i}]"), self.d, &mut out);
        }
        if self.r.bound() > self.bounds.r * (1.0 + 1e-12) {
            out.push(format!("r exceeds declared bound {}", self.bounds.r));
        }
        if self
            .theta
            .iter()
            .any(|c| c.bound() > self.bounds.theta * (1.0 + 1e-12))
        {
            out.push(format!("theta exceeds declared bound {}", self.bounds.theta));
        }
        out
    }

    #[inline]
    pub fn rate(&self, t: f64, w: &[f64]) -> f64 {
        let v = self.r.eval(t, w);
        debug_assert!(v.abs() <= self.bounds.r * (1.0 + 1e-9));
        v
    }

    /// Hedgeable part `θ^𝓗`, written into `out[..d1]`.
    #[inline]
    pub fn theta_h(&self, t: f64, w: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.theta[..self.d1]) {
            *o = c.eval(t, w);
            debug_assert!(o.abs() <= self.bounds.theta * (1.0 + 1e-9));
        }
    }

    #[inline]
    pub fn income(&self, t: f64, w: &[f64]) -> f64 {
        self.income.eval(t, w)
    }

    #[inline]
    pub fn terminal(&self, w: &[f64]) -> f64 {
        self.terminal.eval(self.horizon, w)
    }

    pub fn constant_rate(&self) -> Option<f64> {
        self.r.as_constant()
    }

    /// All coefficients are deterministic functions of time.
    pub fn is_deterministic(&self) -> bool {
        self.r.is_deterministic()
            && self.theta.iter().all(Coefficient::is_deterministic)
            && self.income.is_deterministic()
            && self.terminal.is_deterministic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_numbers_and_tagged_forms() {
        let c: Coefficient = serde_json::from_str("0.3").unwrap();
        assert_eq!(c, Coefficient::Constant(0.3));
        let c: Coefficient =
            serde_json::from_str(r#"{"kind":"tanh","level":0.1,"amplitude":0.05,"scale":1.0}"#)
                .unwrap();
        assert_eq!(c.bound(), 0.15000000000000002);
        assert!(!c.is_deterministic());
        let c: Coefficient =
            serde_json::from_str(r#"{"kind":"table","times":[0,1],"values":[0.0,2.0]}"#).unwrap();
        assert_eq!(c.eval(0.25, &[]), 0.5);
    }

    #[test]
    fn collects_every_issue() {
        let m = MarketModel {
            horizon: 1.0,
            d: 1,
            d1: 2,
            r: 0.0.into(),
            theta: vec![0.3.into()],
            income: 0.0.into(),
            terminal: 0.0.into(),
            bounds: Bounds { r: 0.1, theta: 0.1 },
        };
        let issues = m.issues();
        assert!(issues.iter().any(|s| s.contains("d1")));
        assert!(issues.iter().any(|s| s.contains("theta exceeds")));
    }
}
