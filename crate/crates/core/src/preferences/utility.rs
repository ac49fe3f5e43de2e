use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, GaussLegendre};

/// Convex exponent `κ(z) = offset + slope·z + weight·ln(1 + e^{scale·z})`
/// of a Fromm–Imkeller utility `U''(x) = −e^{−κ(x)}`.
///
/// With `slope > 0`, `weight ≥ 0` and `scale > 0` the derivative
/// `κ'` lies in `[slope, slope + weight·scale]` and `κ'' ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kappa {
    #[serde(default)]
    pub offset: f64,
    pub slope: f64,
    #[serde(default)]
    pub weight: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Kappa {
    /// `κ(z) = z + ln(1 + e^z)`.
    pub fn softplus_shift() -> Self {
        Self {
            offset: 0.0,
            slope: 1.0,
            weight: 1.0,
            scale: 1.0,
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        self.offset + self.slope * z + self.weight * softplus(self.scale * z)
    }

    pub fn d1(&self, z: f64) -> f64 {
        self.slope + self.weight * self.scale * logistic(self.scale * z)
    }

    pub fn d2(&self, z: f64) -> f64 {
        let p = logistic(self.scale * z);
        self.weight * self.scale * self.scale * p * (1.0 - p)
    }

    /// Global bounds of `κ'` over the real line.
    pub fn slope_bounds(&self) -> (f64, f64) {
        let a = self.slope;
        let b = self.slope + self.weight * self.scale;
        (a.min(b), a.max(b))
    }

    fn check(&self) -> Result<()> {
        let (lo, hi) = self.slope_bounds();
        if ![self.offset, self.slope, self.weight, self.scale]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::domain("kappa", "non-finite coefficient"));
        }
        if lo <= 0.0 || hi.is_infinite() {
            return Err(Error::domain(
                "kappa",
                format!("kappa' must lie in (0, inf); bounds are [{lo}, {hi}]"),
            ));
        }
        if self.weight < 0.0 || self.scale <= 0.0 {
            return Err(Error::domain(
                "kappa",
                "convexity needs weight >= 0 and scale > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub tol: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            x_min: -20.0,
            x_max: 20.0,
            cells: 400,
            tol: 1e-10,
        }
    }
}

/// Node values of `U` and `U'` on a uniform grid. Between nodes the missing
/// piece of the integral is filled in with a 16-point Gauss–Legendre rule,
/// so evaluation costs one short quadrature and never extrapolates.
#[derive(Clone, Debug)]
pub struct FrommImkellerTable {
    kappa: Kappa,
    cfg: TableConfig,
    step: f64,
    marginal: Vec<f64>,
    level: Vec<f64>,
    rule: GaussLegendre,
}

impl FrommImkellerTable {
    pub fn new(kappa: Kappa, cfg: TableConfig) -> Result<Self> {
        kappa.check()?;
        if !(cfg.x_min < cfg.x_max) || cfg.cells == 0 || !(cfg.tol > 0.0) {
            return Err(Error::domain("fromm_imkeller", "invalid table range"));
        }
        let rule = GaussLegendre::new(16);
        let step = (cfg.x_max - cfg.x_min) / cfg.cells as f64;
        let n = cfg.cells + 1;
        let mut marginal = vec![0.0; n];
        let mut level = vec![0.0; n];

        let b = cfg.x_max;
        let (lo, hi) = kappa.slope_bounds();
        // Beyond z_cut the tail of ∫ e^{-κ} is below tol relative to the integral.
        let z_cut = b + (hi / (lo * cfg.tol * 1e-3)).ln() / lo;
        let dens = |z: f64| (-kappa.value(z)).exp();
        marginal[n - 1] = integrate(dens, b, z_cut, 0.0, cfg.tol * 1e-3)?;
        level[n - 1] = -integrate(|z| (z - b) * dens(z), b, z_cut, 0.0, cfg.tol * 1e-3)?;

        for i in (0..n - 1).rev() {
            let x = cfg.x_min + i as f64 * step;
            let xb = cfg.x_min + (i + 1) as f64 * step;
            let inner = rule.integrate(dens, x, xb);
            let moment = rule.integrate(|z| (z - x) * dens(z), x, xb);
            marginal[i] = marginal[i + 1] + inner;
            level[i] = level[i + 1] - (xb - x) * marginal[i + 1] - moment;
        }
        Ok(Self {
            kappa,
            cfg,
            step,
            marginal,
            level,
            rule,
        })
    }

    pub fn kappa(&self) -> &Kappa {
        &self.kappa
    }

    pub fn range(&self) -> (f64, f64) {
        (self.cfg.x_min, self.cfg.x_max)
    }

    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        if !x.is_finite() {
            return Err(Error::domain("utility_eval", format!("non-finite input {x}")));
        }
        if x < self.cfg.x_min || x > self.cfg.x_max {
            return Err(Error::Range {
                op: "utility_eval",
                value: x,
                lo: self.cfg.x_min,
                hi: self.cfg.x_max,
            });
        }
        let i = (((x - self.cfg.x_min) / self.step).floor() as usize).min(self.cfg.cells - 1);
        let xb = self.cfg.x_min + (i + 1) as f64 * self.step;
        Ok((i + 1, xb))
    }

    fn marginal(&self, x: f64) -> Result<f64> {
        let (j, xb) = self.locate(x)?;
        let dens = |z: f64| (-self.kappa.value(z)).exp();
        Ok(self.marginal[j] + self.rule.integrate(dens, x, xb))
    }

    fn level(&self, x: f64) -> Result<f64> {
        let (j, xb) = self.locate(x)?;
        let dens = |z: f64| (z - x) * (-self.kappa.value(z)).exp();
        Ok(self.level[j] - (xb - x) * self.marginal[j] - self.rule.integrate(dens, x, xb))
    }
}

#[derive(Clone, Debug)]
pub enum UtilityKind {
    Exponential { gamma: f64 },
    FrommImkeller(Box<FrommImkellerTable>),
}

/// A utility of class 𝕌 with derivatives up to order three.
#[derive(Clone, Debug)]
pub struct UtilityFunction {
    kind: UtilityKind,
    inverse_tol: f64,
}

impl UtilityFunction {
    pub fn exponential(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::domain("utility", format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            kind: UtilityKind::Exponential { gamma },
            inverse_tol: 1e-12,
        })
    }

    pub fn fromm_imkeller(kappa: Kappa, cfg: TableConfig) -> Result<Self> {
        Ok(Self {
            kind: UtilityKind::FrommImkeller(Box::new(FrommImkellerTable::new(kappa, cfg)?)),
            inverse_tol: 1e-12,
        })
    }

    pub fn with_inverse_tol(mut self, tol: f64) -> Self {
        self.inverse_tol = tol;
        self
    }

    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    /// Risk aversion of the exponential kind.
    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            UtilityKind::Exponential { gamma } => Some(gamma),
            _ => None,
        }
    }

    /// `U^{(order)}(x)` for `order ∈ 0..=3`.
    pub fn eval(&self, x: f64, order: u8) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::domain("utility_eval", format!("non-finite input {x}")));
        }
        match &self.kind {
            UtilityKind::Exponential { gamma } => {
                let g = *gamma;
                let e = (-g * x).exp();
                let v = match order {
                    0 => -e,
                    1 => g * e,
                    2 => -g * g * e,
                    3 => g * g * g * e,
                    _ => return Err(Error::domain("utility_eval", format!("order {order} > 3"))),
                };
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::numeric("utility_eval", format!("overflow at x = {x}")))
                }
            }
            UtilityKind::FrommImkeller(t) => match order {
                0 => t.level(x),
                1 => t.marginal(x),
                2 => {
                    t.locate(x)?;
                    Ok(-(-t.kappa.value(x)).exp())
                }
                3 => {
                    t.locate(x)?;
                    Ok(t.kappa.d1(x) * (-t.kappa.value(x)).exp())
                }
                _ => Err(Error::domain("utility_eval", format!("order {order} > 3"))),
            },
        }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.eval(x, 0)
    }

    pub fn d1(&self, x: f64) -> Result<f64> {
        self.eval(x, 1)
    }

    pub fn d2(&self, x: f64) -> Result<f64> {
        self.eval(x, 2)
    }

    pub fn d3(&self, x: f64) -> Result<f64> {
        self.eval(x, 3)
    }

    /// `(U')^{-1}(m)`.
    pub fn marginal_inverse(&self, m: f64) -> Result<f64> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::domain("marginal_inverse", format!("need m > 0, got {m}")));
        }
        match &self.kind {
            UtilityKind::Exponential { gamma } => Ok(-(m / gamma).ln() / gamma),
            UtilityKind::FrommImkeller(t) => self.invert_table(t, m),
        }
    }

    fn invert_table(&self, t: &FrommImkellerTable, m: f64) -> Result<f64> {
        let (x_min, x_max) = t.range();
        // U' is decreasing: f(x) = U'(x) - m changes sign from + to -.
        let f = |x: f64| t.marginal(x).map(|v| v - m);
        let mut lo = (-1.0f64).max(x_min);
        let mut hi = 1.0f64.min(x_max);
        let mut width = 1.0;
        while f(lo)? < 0.0 {
            if lo <= x_min {
                return Err(self.bracket_error(m, x_min, x_max));
            }
            width *= 2.0;
            hi = lo;
            lo = (lo - width).max(x_min);
        }
        while f(hi)? > 0.0 {
            if hi >= x_max {
                return Err(self.bracket_error(m, x_min, x_max));
            }
            width *= 2.0;
            lo = hi;
            hi = (hi + width).min(x_max);
        }
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..50 {
            let v = f(x)?;
            if v > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let slope = -(-t.kappa.value(x)).exp();
            let mut next = x - v / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= self.inverse_tol * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::numeric(
            "marginal_inverse",
            format!("no convergence for m = {m}; final bracket [{lo}, {hi}]"),
        ))
    }

    fn bracket_error(&self, m: f64, lo: f64, hi: f64) -> Error {
        Error::numeric(
            "marginal_inverse",
            format!("m = {m} not attained on table range [{lo}, {hi}]"),
        )
    }

    /// `max_{|y| ≤ δ} |U''(x + y)|`. Both supported kinds have `|U''|`
    /// decreasing, so the maximum sits at `x − δ`.
    pub fn m_bound(&self, x: f64, delta: f64) -> Result<f64> {
        if !(delta >= 0.0) {
            return Err(Error::domain("m_bound", format!("delta must be >= 0, got {delta}")));
        }
        Ok(self.d2(x - delta)?.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn fi() -> UtilityFunction {
        UtilityFunction::fromm_imkeller(Kappa::softplus_shift(), TableConfig::default()).unwrap()
    }

    #[test]
    fn exponential_derivatives() {
        let u = UtilityFunction::exponential(2.0).unwrap();
        assert_eq!(u.eval(0.0, 0).unwrap(), -1.0);
        assert_eq!(u.eval(0.0, 1).unwrap(), 2.0);
        assert_eq!(u.eval(0.0, 2).unwrap(), -4.0);
        assert_eq!(u.eval(0.0, 3).unwrap(), 8.0);
        assert!(u.eval(f64::NAN, 0).is_err());
    }

    #[test]
    fn exponential_inverse_examples() {
        let u = UtilityFunction::exponential(2.0).unwrap();
        assert_eq!(u.marginal_inverse(2.0).unwrap(), 0.0);
        let u = UtilityFunction::exponential(1.0).unwrap();
        assert!((u.marginal_inverse(1f64.exp()).unwrap() + 1.0).abs() < 1e-15);
        assert!(u.marginal_inverse(0.0).is_err());
    }

    #[test]
    fn fromm_imkeller_closed_forms() {
        // For κ(z) = z + ln(1+e^z): U'(x) = e^{-x} - ln(1+e^{-x}).
        let u = fi();
        for x in [-3.0f64, -0.7, 0.0, 0.45, 2.0, 7.5] {
            let exact = (-x).exp() - (-x).exp().ln_1p();
            let got = u.d1(x).unwrap();
            assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1e-3), "x={x}");
        }
        assert!((u.d1(0.0).unwrap() - (1.0 - LN2)).abs() < 1e-13);
        // U(0) = -(1 + Li2(-1)) = -(1 - π²/12).
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((u.value(0.0).unwrap() + (1.0 - pi2 / 12.0)).abs() < 1e-12);
    }

    #[test]
    fn fromm_imkeller_range_error() {
        let u = fi();
        assert!(matches!(u.d1(25.0), Err(Error::Range { .. })));
        assert!(matches!(u.value(-20.5), Err(Error::Range { .. })));
    }

    #[test]
    fn fromm_imkeller_inverse_round_trip() {
        let u = fi();
        let m = u.d1(0.5).unwrap();
        assert!((u.marginal_inverse(m).unwrap() - 0.5).abs() < 1e-8);
        for x in [-15.0, -2.0, 0.0, 3.3, 12.0] {
            let m = u.d1(x).unwrap();
            assert!((u.marginal_inverse(m).unwrap() - x).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn m_bound_examples() {
        let u = UtilityFunction::exponential(2.0).unwrap();
        assert_eq!(u.m_bound(0.0, 0.0).unwrap(), 4.0);
        assert!((u.m_bound(1.0, 1.0).unwrap() - 4.0).abs() < 1e-15);
        let u = UtilityFunction::exponential(1.0).unwrap();
        assert!((u.m_bound(0.0, LN2).unwrap() - 2.0).abs() < 1e-15);
        assert!(u.m_bound(0.0, -1.0).is_err());
    }

    #[test]
    fn m_bound_matches_grid_search() {
        let u = UtilityFunction::exponential(2.0).unwrap();
        let (x, d) = (1.0, 1.0);
        let best = (0..=10_000)
            .map(|k| x - d + 2.0 * d * k as f64 / 10_000.0)
            .map(|y| u.d2(y).unwrap().abs())
            .fold(0.0, f64::max);
        assert!((u.m_bound(x, d).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_convex_kappa() {
        let k = Kappa {
            offset: 0.0,
            slope: 1.0,
            weight: -0.5,
            scale: 1.0,
        };
        assert!(UtilityFunction::fromm_imkeller(k, TableConfig::default()).is_err());
    }
}
