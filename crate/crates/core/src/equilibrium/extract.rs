use crate::error::{Error, Result};
use crate::fbsde::{exponential_gammas, FbsdeSolution, TildeSystem};
use crate::market::{MarketModel, Strategy, TimeGrid};
use crate::preferences::{DiscountFunction, UtilityFunction};

/// Per-step tables for deterministic coefficients, where neither `Ỹ` nor
/// `Z̃` depends on the Brownian level.
#[derive(Clone, Debug)]
struct Tables {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    y_tilde: Vec<f64>,
    z: Vec<f64>,
}

/// The equilibrium pair in feedback form on the solver grid:
/// `c* = ρ(hX + Ỹ) − log(ρλ₂)/γ₁` and `π* = (θ^𝓗/γ₂ − Z̃^𝓗)/h`.
/// Wealth is advanced with the decoupled scheme and mapped back, so
/// simulated paths coincide with the solver's forward paths.
#[derive(Clone, Debug)]
pub struct EquilibriumStrategy {
    sys: TildeSystem,
    tables: Option<Tables>,
}

impl EquilibriumStrategy {
    pub fn new(sys: TildeSystem) -> Self {
        let d = sys.d();
        let tables = (sys.field.is_deterministic() && sys.market.is_deterministic()).then(|| {
            let zero = vec![0.0; d];
            let n = sys.steps();
            let mut t = Tables {
                drift: Vec::with_capacity(n + 1),
                sigma: vec![0.0; (n + 1) * d],
                y_tilde: Vec::with_capacity(n + 1),
                z: vec![0.0; (n + 1) * d],
            };
            for k in 0..=n {
                t.drift.push(sys.drift(k, &zero));
                t.y_tilde.push(sys.y_tilde(k, &zero));
                sys.diffusion(k, &zero, &mut t.sigma[k * d..(k + 1) * d]);
                sys.z(k, &zero, &mut t.z[k * d..(k + 1) * d]);
            }
            t
        });
        Self { sys, tables }
    }

    pub fn system(&self) -> &TildeSystem {
        &self.sys
    }

    pub fn market(&self) -> &MarketModel {
        &self.sys.market
    }

    #[inline]
    fn y_tilde(&self, k: usize, w: &[f64]) -> f64 {
        match &self.tables {
            Some(t) => t.y_tilde[k],
            None => self.sys.y_tilde(k, w),
        }
    }

    /// `Y = Ỹ + (h − 1)X`.
    #[inline]
    pub fn y(&self, k: usize, x: f64, w: &[f64]) -> f64 {
        self.y_tilde(k, w) + (self.sys.h.at(k) - 1.0) * x
    }
}

impl Strategy for EquilibriumStrategy {
    #[inline]
    fn consumption(&self, k: usize, x: f64, w: &[f64]) -> f64 {
        self.sys.rho() * (self.sys.h.at(k) * x + self.y_tilde(k, w)) - self.sys.log_l2(k) / self.sys.gamma1
    }

    fn investment(&self, k: usize, _x: f64, w: &[f64], pi: &mut [f64]) {
        let d = self.sys.d();
        match &self.tables {
            Some(t) => {
                let h = self.sys.h.at(k);
                for (p, s) in pi[..d].iter_mut().zip(&t.sigma[k * d..(k + 1) * d]) {
                    *p = s / h;
                }
            }
            None => self.sys.investment(k, w, pi),
        }
    }

    fn adjoint(&self, k: usize, x: f64, w: &[f64], z: &mut [f64]) -> Option<f64> {
        let d = self.sys.d();
        match &self.tables {
            Some(t) => z[..d].copy_from_slice(&t.z[k * d..(k + 1) * d]),
            None => self.sys.z(k, w, z),
        }
        Some(self.y(k, x, w))
    }

    fn advance(
        &self,
        _m: &MarketModel,
        grid: &TimeGrid,
        k: usize,
        x: f64,
        w: &[f64],
        _c: f64,
        _pi: &[f64],
        dw: &[f64],
    ) -> f64 {
        let h = &self.sys.h;
        let xt = h.at(k) * x;
        let next = match &self.tables {
            Some(t) => {
                let d = self.sys.d();
                let noise: f64 = t.sigma[k * d..(k + 1) * d].iter().zip(dw).map(|(a, b)| a * b).sum();
                xt + 0.5 * (t.drift[k] + t.drift[k + 1]) * grid.dt(k) + noise
            }
            None => self.sys.step(k, xt, w, dw),
        };
        next / h.at(k + 1)
    }

    fn grid(&self) -> Option<&TimeGrid> {
        Some(&self.sys.grid)
    }

    fn label(&self) -> String {
        "equilibrium".into()
    }
}

/// The candidate equilibrium pair of a solved exponential-utility FBSDE.
pub fn extract_equilibrium(
    sol: &FbsdeSolution,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    lambda2: &DiscountFunction,
) -> Result<EquilibriumStrategy> {
    let sys = &sol.system;
    if !(u2.d2(0.0)? != 0.0) {
        return Err(Error::domain("extract_equilibrium", "U2'' vanishes"));
    }
    let (g1, g2) = exponential_gammas(u1, u2)?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    if !close(g1, sys.gamma1) || !close(g2, sys.gamma2) {
        return Err(Error::domain(
            "extract_equilibrium",
            format!(
                "utilities (gamma1 = {g1}, gamma2 = {g2}) differ from the solved system ({}, {})",
                sys.gamma1, sys.gamma2
            ),
        ));
    }
    let rho = g2 / g1;
    for (k, &t) in sys.grid.times().iter().enumerate() {
        let l = lambda2.eval(t, sys.market.horizon);
        if !(l > 0.0) {
            return Err(Error::domain("extract_equilibrium", format!("lambda2({t}, T) = {l}")));
        }
        if (((rho * l).ln()) - sys.log_l2(k)).abs() > 1e-12 {
            return Err(Error::domain(
                "extract_equilibrium",
                format!("lambda2 at t = {t} differs from the one the system was solved with"),
            ));
        }
    }
    Ok(EquilibriumStrategy::new(sys.clone()))
}
