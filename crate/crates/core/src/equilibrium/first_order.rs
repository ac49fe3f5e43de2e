use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::{Error, Result};
use crate::fbsde::FbsdeSolution;
use crate::market::Strategy;
use crate::preferences::{DiscountFunction, UtilityFunction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AbsStats {
    pub max: f64,
    pub mean: f64,
}

impl AbsStats {
    pub fn of(v: &[f64]) -> Self {
        let max = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mean = v.iter().map(|x| x.abs()).sum::<f64>() / v.len().max(1) as f64;
        Self { max, mean }
    }
}

/// Signed pathwise residuals of both equilibrium conditions on the stored
/// solution paths, at every step `k < N`.
#[derive(Clone, Debug, Default)]
pub struct ConditionResiduals {
    pub steps: usize,
    pub d1: usize,
    /// `U₁'(c_k) − λ₂(t_k,T)U₂'(X_k + Y_k)`, index `p·steps + k`.
    pub consumption: Vec<f64>,
    /// `U₂'θ_j + U₂''(π_j + Z_j)`, index `(p·steps + k)·d1 + j`.
    pub investment: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderReport {
    pub consumption: AbsStats,
    pub investment: AbsStats,
    /// Share of grid points where some investment residual exceeds `1e-8`.
    pub investment_active_fraction: f64,
    pub points: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn condition_residuals(
    pair: &dyn Strategy,
    sol: &FbsdeSolution,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    lambda2: &DiscountFunction,
) -> Result<ConditionResiduals> {
    let grid = sol.grid();
    check_grid(pair, grid)?;
    let m = &sol.system.market;
    let st = &sol.state;
    let (d, d1, steps) = (m.d, m.d1, grid.steps());
    let l2: Vec<f64> = grid.times().iter().map(|&t| lambda2.eval(t, m.horizon)).collect();
    let mut out = ConditionResiduals {
        steps,
        d1,
        consumption: Vec::with_capacity(st.n * steps),
        investment: Vec::with_capacity(st.n * steps * d1),
    };
    let mut pi = vec![0.0; d];
    for p in 0..st.n {
        for (k, &l2k) in l2.iter().enumerate().take(steps) {
            let t = grid.t(k);
            let i = st.idx(p, k);
            let (x, y, w, z) = (st.x[i], st.y[i], st.w_at(p, k), st.z_at(p, k));
            let s = x + y;
            let (a1, a2) = (u2.d1(s)?, u2.d2(s)?);
            let c = pair.consumption(k, x, w);
            pair.investment(k, x, w, &mut pi);
            out.consumption.push(u1.d1(c)? - l2k * a1);
            for j in 0..d1 {
                out.investment.push(a1 * m.theta[j].eval(t, w) + a2 * (pi[j] + z[j]));
            }
        }
    }
    if out.consumption.iter().chain(&out.investment).any(|v| !v.is_finite()) {
        return Err(Error::numeric("first_order_residuals", "non-finite residual"));
    }
    Ok(out)
}

/// Max and mean absolute residuals of the consumption and investment
/// conditions along the solution paths.
pub fn first_order_residuals(
    pair: &dyn Strategy,
    sol: &FbsdeSolution,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    lambda2: &DiscountFunction,
) -> Result<FirstOrderReport> {
    let r = condition_residuals(pair, sol, u1, u2, lambda2)?;
    let points = r.consumption.len();
    let active = if r.d1 == 0 {
        0
    } else {
        r.investment
            .chunks(r.d1)
            .filter(|c| c.iter().any(|v| v.abs() > 1e-8))
            .count()
    };
    let consumption = AbsStats::of(&r.consumption);
    let investment = AbsStats::of(&r.investment);
    let tol = 1e-10;
    Ok(FirstOrderReport {
        consumption,
        investment,
        investment_active_fraction: active as f64 / points.max(1) as f64,
        points,
        tol,
        passed: consumption.max <= tol && investment.max <= tol,
    })
}
