use serde::{Deserialize, Serialize};

use super::basis::MAX_DIM;
use super::transform::PathArrays;
use crate::error::{Error, Result};
use crate::market::{MarketModel, TimeGrid};
use crate::preferences::{DiscountFunction, UtilityFunction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Largest value over paths.
    pub max: f64,
    /// Mean over paths.
    pub mean: f64,
}

impl ResidualStats {
    fn from_paths(v: &[f64]) -> Self {
        let max = v.iter().fold(0.0f64, |a, b| a.max(*b));
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        Self { max, mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `sup_k |Σ_{j<k} (ΔX_j − b_jΔ − σ_j·ΔW_j)|` per path.
    pub forward_drift: ResidualStats,
    /// `sup_k |Σ_{j≥k} (ΔY_j − g_jΔ − Z_j·ΔW_j)|` per path.
    pub backward_drift: ResidualStats,
    /// `|Σ (ΔX − bΔ)ΔW − Σ σΔ|`, largest coordinate, per path.
    pub forward_diffusion: ResidualStats,
    /// `|Σ (ΔY − gΔ)ΔW − Σ ZΔ|`, largest coordinate, per path.
    pub backward_diffusion: ResidualStats,
    /// `max |Y_T − E|`.
    pub terminal_max: f64,
    pub terminal_mismatch: bool,
    pub terminal_tol: f64,
    pub n_paths: usize,
    pub steps: usize,
}

struct Coeffs {
    b: f64,
    g: f64,
    sigma: [f64; MAX_DIM],
}

#[allow(clippy::too_many_arguments)]
fn coefficients(
    m: &MarketModel,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    lambda2: f64,
    t: f64,
    w: &[f64],
    x: f64,
    y: f64,
    z: &[f64],
) -> Result<Coeffs> {
    let s = x + y;
    let (d1u, d2u, d3u) = (u2.d1(s)?, u2.d2(s)?, u2.d3(s)?);
    let ratio = d1u / d2u;
    let c = u1.marginal_inverse(lambda2 * d1u)?;
    let r = m.rate(t, w);
    let e = m.income(t, w);
    let mut theta2 = 0.0;
    let mut theta_z = 0.0;
    let mut sigma = [0.0; MAX_DIM];
    for j in 0..m.d1 {
        let th = m.theta[j].eval(t, w);
        theta2 += th * th;
        theta_z += th * z[j];
        sigma[j] = -(ratio * th + z[j]);
    }
    let zo2: f64 = z[m.d1..m.d].iter().map(|v| v * v).sum();
    let b = r * x - theta2 * ratio - theta_z + e - c;
    let g = -r * x + theta2 * ratio + theta_z - e + c - r * ratio
        - 0.5 * theta2 * d3u * d1u * d1u / (d2u * d2u * d2u)
        - 0.5 * d3u / d2u * zo2;
    Ok(Coeffs { b, g, sigma })
}

/// Discrete consistency of a triple `(X, Y, Z)` with the coupled FBSDE
/// characterizing an equilibrium, for general utilities.
pub fn fbsde_residual_check(
    state: &PathArrays,
    m: &MarketModel,
    lambda2: &DiscountFunction,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    grid: &TimeGrid,
) -> Result<ResidualReport> {
    let steps = grid.steps();
    if state.points != steps + 1 || state.d != m.d {
        return Err(Error::Grid("residual check: paths and grid disagree".into()));
    }
    let d = m.d;
    let n = state.n;
    let l2: Vec<f64> = grid.times().iter().map(|&t| lambda2.eval(t, m.horizon)).collect();
    let mut fwd = vec![0.0; n];
    let mut bwd = vec![0.0; n];
    let mut fcov = vec![0.0; n];
    let mut bcov = vec![0.0; n];
    let mut terminal_max = 0.0f64;
    let mut defect_y = vec![0.0; steps];
    for p in 0..n {
        let mut sum_x = 0.0;
        let mut sup_x = 0.0f64;
        let mut cov_x = [0.0; MAX_DIM];
        let mut cov_y = [0.0; MAX_DIM];
        for k in 0..steps {
            let (t, dt) = (grid.t(k), grid.dt(k));
            let i = state.idx(p, k);
            let z = state.z_at(p, k);
            let dw = state.dw_at(p, k);
            let c = coefficients(m, u1, u2, l2[k], t, state.w_at(p, k), state.x[i], state.y[i], z)?;
            let dx = state.x[i + 1] - state.x[i] - c.b * dt;
            let dy = state.y[i + 1] - state.y[i] - c.g * dt;
            let noise_x: f64 = (0..d).map(|j| c.sigma[j] * dw[j]).sum();
            let noise_y: f64 = (0..d).map(|j| z[j] * dw[j]).sum();
            sum_x += dx - noise_x;
            sup_x = sup_x.max(sum_x.abs());
            defect_y[k] = dy - noise_y;
            for j in 0..d {
                cov_x[j] += dx * dw[j] - c.sigma[j] * dt;
                cov_y[j] += dy * dw[j] - z[j] * dt;
            }
        }
        let mut sum_y = 0.0;
        let mut sup_y = 0.0f64;
        for k in (0..steps).rev() {
            sum_y += defect_y[k];
            sup_y = sup_y.max(sum_y.abs());
        }
        fwd[p] = sup_x;
        bwd[p] = sup_y;
        fcov[p] = cov_x[..d].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        bcov[p] = cov_y[..d].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let i = state.idx(p, steps);
        terminal_max = terminal_max.max((state.y[i] - m.terminal(state.w_at(p, steps))).abs());
    }
    let terminal_tol = 1e-8;
    Ok(ResidualReport {
        forward_drift: ResidualStats::from_paths(&fwd),
        backward_drift: ResidualStats::from_paths(&bwd),
        forward_diffusion: ResidualStats::from_paths(&fcov),
        backward_diffusion: ResidualStats::from_paths(&bcov),
        terminal_mismatch: !(terminal_max <= terminal_tol),
        terminal_max,
        terminal_tol,
        n_paths: n,
        steps,
    })
}
