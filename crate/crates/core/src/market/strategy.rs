use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::model::MarketModel;

/// A consumption-investment pair given in feedback form on a fixed grid:
/// the control on `[t_k, t_{k+1})` may depend on the step index, wealth and
/// the Brownian level `W_{t_k}`.
pub trait Strategy: Sync {
    fn consumption(&self, k: usize, x: f64, w: &[f64]) -> f64;

    /// Writes `π` into `pi[..d]`; coordinates at and beyond `d1` are
    /// overwritten with zero by the simulator.
    fn investment(&self, k: usize, x: f64, w: &[f64], pi: &mut [f64]);

    /// Adjoint state `(Y, Z)` along the path, when the strategy comes from
    /// a solved FBSDE. Writes `Z` into `z[..d]` and returns `Y`.
    fn adjoint(&self, _k: usize, _x: f64, _w: &[f64], _z: &mut [f64]) -> Option<f64> {
        None
    }

    /// The grid the strategy is tied to, if any. Simulating it on another
    /// grid is a caller error.
    fn grid(&self) -> Option<&TimeGrid> {
        None
    }

    /// Wealth after step `k`. The default is the Euler scheme with the
    /// linear part `rX` integrated exactly over the step.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        m: &MarketModel,
        grid: &TimeGrid,
        k: usize,
        x: f64,
        w: &[f64],
        c: f64,
        pi: &[f64],
        dw: &[f64],
    ) -> f64 {
        euler_step(m, grid, k, x, w, c, pi, dw)
    }

    fn label(&self) -> String;
}

/// `X_{k+1} = e^{rΔ} X_k + (π·θ^𝓗 + e − c)Δ + π·ΔW^𝓗`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn euler_step(
    m: &MarketModel,
    grid: &TimeGrid,
    k: usize,
    x: f64,
    w: &[f64],
    c: f64,
    pi: &[f64],
    dw: &[f64],
) -> f64 {
    let t = grid.t(k);
    let dt = grid.dt(k);
    let mut drift = m.income(t, w) - c;
    let mut noise = 0.0;
    for j in 0..m.d1 {
        drift += pi[j] * m.theta[j].eval(t, w);
        noise += pi[j] * dw[j];
    }
    (m.rate(t, w) * dt).exp() * x + drift * dt + noise
}

/// Constant consumption rate and investment vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantStrategy {
    pub consumption: f64,
    pub investment: Vec<f64>,
}

impl Strategy for ConstantStrategy {
    fn consumption(&self, _k: usize, _x: f64, _w: &[f64]) -> f64 {
        self.consumption
    }

    fn investment(&self, _k: usize, _x: f64, _w: &[f64], pi: &mut [f64]) {
        for (i, p) in pi.iter_mut().enumerate() {
            *p = self.investment.get(i).copied().unwrap_or(0.0);
        }
    }

    fn label(&self) -> String {
        format!("constant(c={}, pi={:?})", self.consumption, self.investment)
    }
}

/// Deterministic per-step schedule: `consumption[k]` and `investment[k·d + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleStrategy {
    pub consumption: Vec<f64>,
    pub investment: Vec<f64>,
    pub d: usize,
}

impl Strategy for ScheduleStrategy {
    fn consumption(&self, k: usize, _x: f64, _w: &[f64]) -> f64 {
        self.consumption[k]
    }

    fn investment(&self, k: usize, _x: f64, _w: &[f64], pi: &mut [f64]) {
        pi[..self.d].copy_from_slice(&self.investment[k * self.d..(k + 1) * self.d]);
    }

    fn label(&self) -> String {
        "schedule".into()
    }
}
