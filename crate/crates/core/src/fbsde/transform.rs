use super::h::HSchedule;
use crate::error::{Error, Result};
use crate::market::{MarketModel, TimeGrid};

/// `(X̃, Ỹ, Z̃)` from `(X, Y, Z)` at one point; `theta_h` has `d1` entries,
/// `z` and `z_out` have `d`.
#[inline]
pub fn transform_point(h: f64, theta_h: &[f64], gamma2: f64, x: f64, y: f64, z: &[f64], z_out: &mut [f64]) -> (f64, f64) {
    let a = 1.0 - h;
    for (j, (o, zj)) in z_out.iter_mut().zip(z).enumerate() {
        *o = match theta_h.get(j) {
            Some(th) => zj + a * (th / gamma2 - zj),
            None => *zj,
        };
    }
    (h * x, y + a * x)
}

/// Inverse of [`transform_point`].
#[inline]
pub fn untransform_point(h: f64, theta_h: &[f64], gamma2: f64, xt: f64, yt: f64, zt: &[f64], z_out: &mut [f64]) -> (f64, f64) {
    let a = 1.0 - 1.0 / h;
    for (j, (o, zj)) in z_out.iter_mut().zip(zt).enumerate() {
        *o = match theta_h.get(j) {
            Some(th) => zj + a * (th / gamma2 - zj),
            None => *zj,
        };
    }
    (xt / h, yt + a * xt)
}

/// A triple `(X, Y, Z)` or `(X̃, Ỹ, Z̃)` on every grid point of `n` paths,
/// with the Brownian path that produced it. Path-major; `z`, `w` hold `d`
/// entries per point and `dw` holds `d` entries per step.
#[derive(Clone, Debug, PartialEq)]
pub struct PathArrays {
    pub n: usize,
    pub points: usize,
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
}

impl PathArrays {
    pub fn zeros(n: usize, points: usize, d: usize) -> Self {
        Self {
            n,
            points,
            d,
            x: vec![0.0; n * points],
            y: vec![0.0; n * points],
            z: vec![0.0; n * points * d],
            w: vec![0.0; n * points * d],
            dw: vec![0.0; n * (points - 1) * d],
        }
    }

    #[inline]
    pub fn idx(&self, p: usize, k: usize) -> usize {
        p * self.points + k
    }

    #[inline]
    pub fn z_at(&self, p: usize, k: usize) -> &[f64] {
        let i = self.idx(p, k) * self.d;
        &self.z[i..i + self.d]
    }

    #[inline]
    pub fn w_at(&self, p: usize, k: usize) -> &[f64] {
        let i = self.idx(p, k) * self.d;
        &self.w[i..i + self.d]
    }

    #[inline]
    pub fn dw_at(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * (self.points - 1) + k) * self.d;
        &self.dw[i..i + self.d]
    }

    fn map(&self, h: &HSchedule, m: &MarketModel, grid: &TimeGrid, gamma2: f64, forward: bool) -> Result<Self> {
        if h.values.len() != self.points || grid.steps() + 1 != self.points {
            return Err(Error::Grid("transform: schedule and paths disagree on the grid".into()));
        }
        if let Some(k) = h.values.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::domain("untransform", format!("h <= 0 at step {k}")));
        }
        let mut out = self.clone();
        let mut th = vec![0.0; m.d1];
        for p in 0..self.n {
            for k in 0..self.points {
                let i = self.idx(p, k);
                m.theta_h(grid.t(k), self.w_at(p, k), &mut th);
                let zs = &mut out.z[i * self.d..(i + 1) * self.d];
                let z = &self.z[i * self.d..(i + 1) * self.d];
                let (x, y) = if forward {
                    transform_point(h.at(k), &th, gamma2, self.x[i], self.y[i], z, zs)
                } else {
                    untransform_point(h.at(k), &th, gamma2, self.x[i], self.y[i], z, zs)
                };
                out.x[i] = x;
                out.y[i] = y;
            }
        }
        Ok(out)
    }
}

/// `X = X̃/h`, `Y = Ỹ + (1 − 1/h)X̃`, `Z = Z̃ + (1 − 1/h)(θ^𝓗/γ₂ − Z̃^𝓗)`.
pub fn untransform(tilde: &PathArrays, h: &HSchedule, m: &MarketModel, grid: &TimeGrid, gamma2: f64) -> Result<PathArrays> {
    tilde.map(h, m, grid, gamma2, false)
}

/// `X̃ = hX`, `Ỹ = Y + (1 − h)X`, `Z̃ = Z + (1 − h)(θ^𝓗/γ₂ − Z^𝓗)`.
pub fn transform(state: &PathArrays, h: &HSchedule, m: &MarketModel, grid: &TimeGrid, gamma2: f64) -> Result<PathArrays> {
    state.map(h, m, grid, gamma2, true)
}
