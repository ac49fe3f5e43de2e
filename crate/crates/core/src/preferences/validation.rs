use serde::{Deserialize, Serialize};

use super::discount::DiscountFunction;
use super::utility::{UtilityFunction, UtilityKind};
use crate::error::Result;

const MAX_LISTED: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    /// Sample location: `[t, s]` for discounts, `[x]` for utilities.
    pub at: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub subject: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub violations: Vec<Violation>,
    pub violation_count: usize,
}

impl ValidationReport {
    fn new(subject: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            passed: true,
            ..Default::default()
        }
    }

    fn check(&mut self, name: &str, passed: bool, value: f64, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check {
            name: name.into(),
            passed,
            value,
            detail: detail.into(),
        });
    }

    fn flag(&mut self, check: &str, at: Vec<f64>, value: f64) {
        self.violation_count += 1;
        if self.violations.len() < MAX_LISTED {
            self.violations.push(Violation {
                check: check.into(),
                at,
                value,
            });
        }
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Largest jump of `λ` between neighbouring points of an `n × n` triangle grid.
fn modulus<F: Fn(f64, f64) -> f64>(lambda: &F, horizon: f64, n: usize) -> f64 {
    let h = horizon / (n - 1) as f64;
    let at = |i: usize| if i == n - 1 { horizon } else { i as f64 * h };
    let mut worst = 0.0f64;
    for i in 0..n {
        let t = at(i);
        for j in i..n {
            let v = lambda(t, at(j));
            if j + 1 < n {
                worst = worst.max((lambda(t, at(j + 1)) - v).abs());
            }
            if i < j {
                worst = worst.max((lambda(at(i + 1), at(j)) - v).abs());
            }
        }
    }
    worst
}

/// Checks membership of `lambda` in the discount class on `[0, horizon]`:
/// unit diagonal, positivity, and a continuity probe.
///
/// Continuity is judged on a ladder of four nested grid sizes
/// `n, n/2, n/4, n/8`: it passes when the finest modulus is negligible
/// (below 1e-9) or the modulus shrinks by a factor of at least 0.75 at
/// every refinement.
pub fn validate_lambda<F: Fn(f64, f64) -> f64>(
    subject: &str,
    lambda: F,
    horizon: f64,
    grid_n: usize,
) -> ValidationReport {
    let mut report = ValidationReport::new(subject);
    let n = grid_n.max(2);
    let h = horizon / (n - 1) as f64;
    let at = |i: usize| if i == n - 1 { horizon } else { i as f64 * h };

    let mut worst_diag = 0.0f64;
    for i in 0..n {
        let t = at(i);
        let v = lambda(t, t);
        if v != 1.0 {
            worst_diag = worst_diag.max((v - 1.0).abs());
            report.flag("unit_diagonal", vec![t, t], v);
        }
    }
    report.check(
        "unit_diagonal",
        worst_diag == 0.0 && report.violation_count == 0,
        worst_diag,
        "lambda(t,t) = 1",
    );

    let before = report.violation_count;
    let mut min_value = f64::INFINITY;
    for i in 0..n {
        let t = at(i);
        for j in i..n {
            let s = at(j);
            let v = lambda(t, s);
            if !(v > 0.0 && v.is_finite()) {
                report.flag("positivity", vec![t, s], v);
            }
            min_value = min_value.min(v);
        }
    }
    report.check(
        "positivity",
        report.violation_count == before,
        min_value,
        "lambda(t,s) > 0 on the triangle",
    );

    let mut sizes: Vec<usize> = (0..4).map(|k| (n >> k).max(2)).collect();
    sizes.dedup();
    sizes.reverse();
    let ladder: Vec<f64> = sizes.iter().map(|&m| modulus(&lambda, horizon, m)).collect();
    let finest = *ladder.last().unwrap();
    let ratios: Vec<f64> = ladder
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let shrinking = ratios.iter().all(|&r| r <= 0.75);
    let continuous = finest <= 1e-9 || (!ratios.is_empty() && shrinking);
    report.check(
        "continuity",
        continuous,
        finest,
        format!(
            "modulus over grid sizes {sizes:?}: {ladder:?}; pass rule: finest <= 1e-9 or every \
             refinement ratio <= 0.75 (threshold is an implementation choice)"
        ),
    );
    report
}

impl DiscountFunction {
    pub fn validate(&self, grid_n: usize) -> ValidationReport {
        validate_lambda(
            &format!("{:?}", self.kind()),
            |t, s| self.eval(t, s),
            self.horizon(),
            grid_n,
        )
    }
}

/// Anything with evaluable first and second derivatives, so the class
/// check can also be pointed at deliberately broken utilities.
pub trait Marginals {
    fn derivative(&self, x: f64, order: u8) -> Result<f64>;

    /// Extra structural conditions beyond the sampled ratios.
    fn structural(&self, _lo: f64, _hi: f64, _grid_n: usize, _report: &mut ValidationReport) {}
}

impl Marginals for UtilityFunction {
    fn derivative(&self, x: f64, order: u8) -> Result<f64> {
        self.eval(x, order)
    }

    fn structural(&self, lo: f64, hi: f64, grid_n: usize, report: &mut ValidationReport) {
        if let UtilityKind::FrommImkeller(table) = self.kind() {
            let k = table.kappa();
            let n = grid_n.max(2);
            let (mut inf1, mut sup1, mut inf2) = (f64::INFINITY, 0.0f64, f64::INFINITY);
            for i in 0..n {
                let z = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                inf1 = inf1.min(k.d1(z));
                sup1 = sup1.max(k.d1(z));
                inf2 = inf2.min(k.d2(z));
            }
            report.check("kappa_slope_positive", inf1 > 0.0, inf1, "inf kappa' > 0");
            report.check("kappa_slope_bounded", sup1.is_finite(), sup1, "sup kappa' < inf");
            report.check("kappa_convex", inf2 >= 0.0, inf2, "kappa'' >= 0");
        }
    }
}

/// Samples `U'`, `U''` on `[lo, hi]` and checks monotonicity, strict
/// concavity, boundedness of `U''/U'` and the ratio bound
/// `U'(x)/U'(y) ≤ exp(K(y − x))`, reporting the empirical `K`.
pub fn utility_class_check<M: Marginals + ?Sized>(
    u: &M,
    subject: &str,
    lo: f64,
    hi: f64,
    grid_n: usize,
) -> ValidationReport {
    let mut report = ValidationReport::new(subject);
    let n = grid_n.max(2);
    let xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let mut first = Vec::with_capacity(n);
    let mut eval_failed = false;
    let (mut inc, mut conc) = (true, true);
    let mut ratio_sup = 0.0f64;
    for &x in &xs {
        match (u.derivative(x, 1), u.derivative(x, 2)) {
            (Ok(d1), Ok(d2)) => {
                if !(d1 > 0.0) {
                    inc = false;
                    report.flag("increasing", vec![x], d1);
                }
                if !(d2 < 0.0) {
                    conc = false;
                    report.flag("strict_concavity", vec![x], d2);
                }
                ratio_sup = ratio_sup.max((d2 / d1).abs());
                first.push(d1);
            }
            _ => {
                eval_failed = true;
                report.flag("evaluation", vec![x], f64::NAN);
                first.push(f64::NAN);
            }
        }
    }
    report.check("evaluable", !eval_failed, 0.0, "derivatives defined on the range");
    report.check("increasing", inc, 0.0, "U' > 0");
    report.check("strict_concavity", conc, 0.0, "U'' < 0");
    report.check(
        "ratio_bounded",
        ratio_sup.is_finite() && !eval_failed,
        ratio_sup,
        "sup |U''/U'|",
    );
    // Adjacent slopes of -ln U' bound every pair x < y.
    let k = xs
        .windows(2)
        .zip(first.windows(2))
        .map(|(x, d)| (d[0].ln() - d[1].ln()) / (x[1] - x[0]))
        .fold(0.0f64, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    report.check(
        "marginal_ratio_bound",
        k.is_finite() && inc,
        k,
        "empirical K in U'(x)/U'(y) <= exp(K(y-x))",
    );
    u.structural(lo, hi, n, &mut report);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preferences::discount::DiscountKind;
    use crate::preferences::utility::{Kappa, TableConfig};

    #[test]
    fn constant_discount_passes() {
        let d = DiscountFunction::exponential(0.0, 1.0).unwrap();
        let r = d.validate(256);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn broken_diagonal_is_flagged() {
        let r = validate_lambda(
            "broken",
            |t: f64, s: f64| if t == 0.0 && s == 0.0 { 0.9 } else { 1.0 / (1.0 + s - t) },
            1.0,
            64,
        );
        assert!(!r.passed);
        assert!(!r.find("unit_diagonal").unwrap().passed);
        assert_eq!(r.violations[0].at, vec![0.0, 0.0]);
    }

    #[test]
    fn jump_fails_continuity() {
        let r = validate_lambda(
            "jump",
            |t: f64, s: f64| if s - t > 0.3 { 0.5 } else { 1.0 },
            1.0,
            128,
        );
        assert!(!r.find("continuity").unwrap().passed);
    }

    #[test]
    fn exponential_utility_constants() {
        let u = UtilityFunction::exponential(2.0).unwrap();
        let r = utility_class_check(&u, "exp", -5.0, 5.0, 201);
        assert!(r.passed);
        assert!((r.find("ratio_bounded").unwrap().value - 2.0).abs() < 1e-12);
        assert!((r.find("marginal_ratio_bound").unwrap().value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fromm_imkeller_constants() {
        let u = UtilityFunction::fromm_imkeller(Kappa::softplus_shift(), TableConfig::default())
            .unwrap();
        let r = utility_class_check(&u, "fi", -3.0, 3.0, 121);
        assert!(r.passed, "{r:?}");
        assert!(r.find("marginal_ratio_bound").unwrap().value <= 2.0);
    }

    struct FlatTail;

    impl Marginals for FlatTail {
        fn derivative(&self, x: f64, order: u8) -> Result<f64> {
            Ok(match (order, x > 1.0) {
                (1, false) => (-x).exp(),
                (1, true) => (-1.0f64).exp(),
                (2, false) => -(-x).exp(),
                (2, true) => 0.0,
                _ => 0.0,
            })
        }
    }

    #[test]
    fn flat_tail_fails_concavity() {
        let r = utility_class_check(&FlatTail, "flat", -2.0, 4.0, 61);
        assert!(!r.passed);
        assert!(!r.find("strict_concavity").unwrap().passed);
    }

    #[test]
    fn ref_dependent_family_passes() {
        let d = DiscountFunction::new(
            DiscountKind::RefDependent {
                times: vec![0.0, 1.0],
                rates: vec![0.5, 2.0],
            },
            1.0,
        )
        .unwrap();
        assert!(d.validate(128).passed);
    }
}
