use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::{Error, Result};
use crate::market::{MarketModel, PathEnsemble, Strategy};
use crate::parallel::par_map;
use crate::preferences::UtilityFunction;
use crate::stats::{linear_fit, Estimate, Summary};

/// Standard error of the gap estimator on nested prefixes of the ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeScaling {
    pub n: Vec<usize>,
    pub se: Vec<f64>,
    pub se_sqrt_n: Vec<f64>,
    /// Log-log slope of SE against n; `−½` under the CLT.
    pub slope: f64,
    /// Every `SE·√n` within 20% of the value at the largest n.
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `U₂'(x + Y₀)`.
    pub target: f64,
    /// `E[e^{∫r} U₂'(X_T + E)]`.
    pub terminal: Estimate,
    pub gap: Estimate,
    /// `|gap| ≤ 3 SE`.
    pub passed: bool,
    /// `max |αθ^𝓗 + β^𝓗|` along every path and step, with `α = U₂'(X + Y)`
    /// and `β^𝓗 = U₂''(X + Y)(π + Z^𝓗)`.
    pub wiring_residual: f64,
    pub wiring_tol: f64,
    pub wiring_passed: bool,
    pub scaling: Option<SeScaling>,
}

/// Checks that `α = U₂'(X + Y)` is the adjoint martingale of the pair: its
/// time-zero value against the Monte Carlo mean of the compounded terminal
/// marginal utility, and the cancellation `αθ^𝓗 + β^𝓗 = 0`.
///
/// `scaling_n` lists prefix sizes for the `1/√n` check of the error bar;
/// every entry must be at most the ensemble size.
pub fn duality_martingale_check(
    pair: &dyn Strategy,
    m: &MarketModel,
    u2: &UtilityFunction,
    x0: f64,
    ens: &PathEnsemble,
    scaling_n: &[usize],
) -> Result<DualityReport> {
    let grid = ens.grid();
    check_grid(pair, grid)?;
    let (d, d1) = (m.d, m.d1);
    let w0 = vec![0.0; d];
    let mut z = vec![0.0; d];
    let y0 = pair
        .adjoint(0, x0, &w0, &mut z)
        .ok_or_else(|| Error::State(format!("strategy '{}' carries no adjoint state", pair.label())))?;
    let target = u2.d1(x0 + y0)?;
    if let Some(n) = scaling_n.iter().find(|n| **n > ens.n_paths() || **n < 2) {
        return Err(Error::domain(
            "duality_martingale_check",
            format!("scaling size {n} outside [2, {}]", ens.n_paths()),
        ));
    }
    let rows = par_map(
        ens.n_paths(),
        || (vec![0.0; ens.path_len()], vec![0.0; d], vec![0.0; d]),
        |(dw, pi, z), p| {
            ens.increments(p, dw);
            let mut w = vec![0.0; d];
            let mut x = x0;
            let mut growth = 0.0;
            let mut wiring = 0.0f64;
            for k in 0..grid.steps() {
                let t = grid.t(k);
                let c = pair.consumption(k, x, &w);
                pair.investment(k, x, &w, pi);
                pi[d1..].fill(0.0);
                let y = pair
                    .adjoint(k, x, &w, z)
                    .ok_or_else(|| Error::State("adjoint disappeared mid-path".into()))?;
                let (a1, a2) = (u2.d1(x + y)?, u2.d2(x + y)?);
                for j in 0..d1 {
                    let beta = a2 * (pi[j] + z[j]);
                    wiring = wiring.max((a1 * m.theta[j].eval(t, &w) + beta).abs());
                }
                growth += m.rate(t, &w) * grid.dt(k);
                let inc = &dw[k * d..(k + 1) * d];
                x = pair.advance(m, grid, k, x, &w, c, pi, inc);
                for j in 0..d {
                    w[j] += inc[j];
                }
            }
            let v = growth.exp() * u2.d1(x + m.terminal(&w))?;
            if !v.is_finite() {
                return Err(Error::numeric("duality_martingale_check", format!("non-finite value on path {p}")));
            }
            Ok((v, wiring))
        },
    )?;
    let terminal = rows.iter().map(|r| r.0).collect::<Summary>().estimate();
    let wiring_residual = rows.iter().fold(0.0f64, |a, r| a.max(r.1));
    let gap = Estimate {
        mean: terminal.mean - target,
        se: terminal.se,
    };
    let scaling = (!scaling_n.is_empty()).then(|| {
        let se: Vec<f64> = scaling_n
            .iter()
            .map(|&n| rows[..n].iter().map(|r| r.0).collect::<Summary>().std_error())
            .collect();
        let se_sqrt_n: Vec<f64> = se.iter().zip(scaling_n).map(|(s, n)| s * (*n as f64).sqrt()).collect();
        let largest = (0..scaling_n.len()).max_by_key(|i| scaling_n[*i]).unwrap();
        let reference = se_sqrt_n[largest];
        let passed = reference > 0.0 && se_sqrt_n.iter().all(|v| (v / reference - 1.0).abs() <= 0.2);
        let lx: Vec<f64> = scaling_n.iter().map(|n| (*n as f64).ln()).collect();
        let ly: Vec<f64> = se.iter().map(|s| s.ln()).collect();
        let slope = if scaling_n.len() >= 2 { linear_fit(&lx, &ly).1 } else { f64::NAN };
        SeScaling {
            n: scaling_n.to_vec(),
            se,
            se_sqrt_n,
            slope,
            passed,
        }
    });
    let wiring_tol = 1e-12;
    Ok(DualityReport {
        target,
        terminal,
        passed: gap.mean.abs() <= 3.0 * gap.se,
        gap,
        wiring_passed: wiring_residual <= wiring_tol,
        wiring_residual,
        wiring_tol,
        scaling,
    })
}
