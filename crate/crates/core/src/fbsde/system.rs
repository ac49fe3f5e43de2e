use super::basis::{TildeField, MAX_DIM};
use super::h::HSchedule;
use crate::error::{Error, Result};
use crate::market::{MarketModel, TimeGrid};
use crate::preferences::DiscountFunction;

/// The decoupled forward equation together with its solved backward part,
/// in feedback form on the solver grid.
#[derive(Clone, Debug)]
pub struct TildeSystem {
    pub market: MarketModel,
    pub grid: TimeGrid,
    pub h: HSchedule,
    pub field: TildeField,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `log(ρ λ₂(t_k, T))` per grid point.
    log_l2: Vec<f64>,
}

impl TildeSystem {
    pub fn new(
        market: MarketModel,
        lambda2: &DiscountFunction,
        grid: TimeGrid,
        h: HSchedule,
        field: TildeField,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<Self> {
        if market.d > MAX_DIM {
            return Err(Error::domain("tilde_system", format!("d = {} above {MAX_DIM}", market.d)));
        }
        if h.values.len() != grid.steps() + 1 || field.n_steps() != grid.steps() {
            return Err(Error::State("tilde system: h, field and grid sizes disagree".into()));
        }
        let rho = gamma2 / gamma1;
        let log_l2 = grid
            .times()
            .iter()
            .map(|&t| {
                let l = lambda2.eval(t, market.horizon);
                if l > 0.0 {
                    Ok((rho * l).ln())
                } else {
                    Err(Error::domain("tilde_system", format!("lambda2({t}, T) = {l}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            market,
            grid,
            h,
            field,
            gamma1,
            gamma2,
            log_l2,
        })
    }

    pub fn rho(&self) -> f64 {
        self.gamma2 / self.gamma1
    }

    pub fn d(&self) -> usize {
        self.market.d
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    #[inline]
    pub fn log_l2(&self, k: usize) -> f64 {
        self.log_l2[k]
    }

    #[inline]
    pub fn y_tilde(&self, k: usize, w: &[f64]) -> f64 {
        self.field.y(k, w)
    }

    #[inline]
    pub fn z_tilde(&self, k: usize, w: &[f64], out: &mut [f64]) {
        self.field.z(k, w, out)
    }

    /// `−ρhỸ − θ^𝓗·Z̃^𝓗 + |θ^𝓗|²/γ₂ + h e + (h/γ₁) log(ρλ₂)`.
    pub fn drift(&self, k: usize, w: &[f64]) -> f64 {
        let t = self.grid.t(k);
        let h = self.h.at(k);
        let mut z = [0.0; MAX_DIM];
        self.z_tilde(k, w, &mut z);
        let mut acc = -self.rho() * h * self.y_tilde(k, w)
            + h * self.market.income(t, w)
            + h / self.gamma1 * self.log_l2[k];
        for (j, zj) in z[..self.market.d1].iter().enumerate() {
            let th = self.market.theta[j].eval(t, w);
            acc += th * th / self.gamma2 - th * zj;
        }
        acc
    }

    /// `θ^𝓗/γ₂ − Z̃^𝓗` on the traded coordinates, zero elsewhere.
    pub fn diffusion(&self, k: usize, w: &[f64], out: &mut [f64]) {
        let t = self.grid.t(k);
        let mut z = [0.0; MAX_DIM];
        self.z_tilde(k, w, &mut z);
        for (j, o) in out[..self.market.d].iter_mut().enumerate() {
            *o = if j < self.market.d1 {
                self.market.theta[j].eval(t, w) / self.gamma2 - z[j]
            } else {
                0.0
            };
        }
    }

    /// `X̃_{k+1}` from `X̃_k`: trapezoidal drift, left-point diffusion.
    pub fn step(&self, k: usize, xt: f64, w: &[f64], dw: &[f64]) -> f64 {
        let d = self.market.d;
        let mut w1 = [0.0; MAX_DIM];
        for j in 0..d {
            w1[j] = w[j] + dw[j];
        }
        let mut s = [0.0; MAX_DIM];
        self.diffusion(k, w, &mut s);
        let noise: f64 = s[..d].iter().zip(dw).map(|(a, b)| a * b).sum();
        let drift = 0.5 * (self.drift(k, w) + self.drift(k + 1, &w1[..d]));
        xt + drift * self.grid.dt(k) + noise
    }

    /// `c* = ρ(X + Y) − (1/γ₁) log(ρλ₂(t,T))` with `X + Y = hX + Ỹ`.
    #[inline]
    pub fn consumption(&self, k: usize, x: f64, w: &[f64]) -> f64 {
        self.rho() * (self.h.at(k) * x + self.y_tilde(k, w)) - self.log_l2[k] / self.gamma1
    }

    /// `π* = (θ^𝓗/γ₂ − Z̃^𝓗)/h`, zero on untraded coordinates.
    #[inline]
    pub fn investment(&self, k: usize, w: &[f64], out: &mut [f64]) {
        self.diffusion(k, w, out);
        let h = self.h.at(k);
        for o in out[..self.market.d].iter_mut() {
            *o /= h;
        }
    }

    /// `Y = Ỹ + (h − 1)X`.
    #[inline]
    pub fn y(&self, k: usize, x: f64, w: &[f64]) -> f64 {
        self.y_tilde(k, w) + (self.h.at(k) - 1.0) * x
    }

    /// `Z^𝓗 = Z̃^𝓗 + (1 − 1/h)(θ^𝓗/γ₂ − Z̃^𝓗)` and `Z^𝓞 = Z̃^𝓞`, into `out[..d]`.
    pub fn z(&self, k: usize, w: &[f64], out: &mut [f64]) {
        let t = self.grid.t(k);
        let a = 1.0 - 1.0 / self.h.at(k);
        self.z_tilde(k, w, out);
        for (j, o) in out[..self.market.d1].iter_mut().enumerate() {
            let th = self.market.theta[j].eval(t, w);
            *o += a * (th / self.gamma2 - *o);
        }
    }
}
