use serde::{Deserialize, Serialize};

use super::ode::rk4_step;
use crate::error::{Error, Result};
use crate::market::TimeGrid;

/// Decoupling factor `h(t)` solving `ḣ = h(ρh − r)`, `h(T) = 1`, with `ρ = γ₂/γ₁`.
pub fn h_closed_form(t: f64, r: f64, gamma1: f64, gamma2: f64, horizon: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= horizon) {
        return Err(Error::domain("h_closed_form", format!("t = {t} outside [0, {horizon}]")));
    }
    if !(r >= 0.0 && gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(Error::domain(
            "h_closed_form",
            format!("need r >= 0 and positive gammas, got r = {r}, {gamma1}, {gamma2}"),
        ));
    }
    let rho = gamma2 / gamma1;
    let tau = horizon - t;
    let h = if r == 0.0 {
        1.0 / (1.0 + rho * tau)
    } else {
        // ρ − (ρ − r)e^{−rτ}, written to stay accurate as r → 0.
        let denom = -rho * (-r * tau).exp_m1() + r * (-r * tau).exp();
        if !(denom > 0.0) {
            return Err(Error::numeric("h_closed_form", format!("denominator {denom}")));
        }
        r / denom
    };
    Ok(h)
}

/// `ḣ` as a function of `h`.
pub fn h_rhs(h: f64, r: f64, rho: f64) -> f64 {
    h * (rho * h - r)
}

/// `h` on a grid, with the parameters that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HSchedule {
    pub r: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl HSchedule {
    pub fn new(grid: &TimeGrid, r: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        let horizon = grid.end();
        let values = grid
            .times()
            .iter()
            .map(|&t| h_closed_form(t, r, gamma1, gamma2, horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            r,
            gamma1,
            gamma2,
            horizon,
            times: grid.times().to_vec(),
            values,
        })
    }

    pub fn rho(&self) -> f64 {
        self.gamma2 / self.gamma1
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// Largest one-step defect `|h_k − RK4(h_{k+1}; −Δ)| / Δ`.
    pub fn residual(&self) -> f64 {
        let rho = self.rho();
        self.values
            .windows(2)
            .zip(self.times.windows(2))
            .map(|(h, t)| {
                let dt = t[1] - t[0];
                let back = rk4_step(|_, y| h_rhs(y, self.r, rho), t[1], h[1], -dt);
                (h[0] - back).abs() / dt
            })
            .fold(0.0, f64::max)
    }
}
