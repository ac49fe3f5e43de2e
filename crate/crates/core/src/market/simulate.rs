use serde::{Deserialize, Serialize};

use super::ensemble::PathEnsemble;
use super::grid::TimeGrid;
use super::model::{Coefficient, MarketModel};
use super::strategy::Strategy;
use crate::error::{Error, Result};
use crate::parallel::par_map;

/// Controls, wealth and Brownian level along one path from step `k0`.
/// Index `i` refers to grid step `k0 + i`.
#[derive(Clone, Debug, Default)]
pub struct PathRecord {
    pub k0: usize,
    pub d: usize,
    /// `X` at grid points `k0..=N`.
    pub x: Vec<f64>,
    /// `W` at grid points `k0..=N`, `d` entries each.
    pub w: Vec<f64>,
    /// `c` on steps `k0..N`.
    pub c: Vec<f64>,
    /// `π` on steps `k0..N`, `d` entries each.
    pub pi: Vec<f64>,
}

impl PathRecord {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, k0: usize, steps: usize, d: usize) {
        let n = steps - k0;
        self.k0 = k0;
        self.d = d;
        self.x.resize(n + 1, 0.0);
        self.w.resize((n + 1) * d, 0.0);
        self.c.resize(n, 0.0);
        self.pi.resize(n * d, 0.0);
    }

    #[inline]
    pub fn w_at(&self, i: usize) -> &[f64] {
        &self.w[i * self.d..(i + 1) * self.d]
    }

    pub fn x_end(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn w_end(&self) -> &[f64] {
        self.w_at(self.x.len() - 1)
    }
}

/// Simulates one path of the wealth equation from step `k0` with
/// `X_{t_{k0}} = x0`, `W_{t_{k0}} = w0` and increments `dw` for steps `k0..N`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    m: &MarketModel,
    s: &dyn Strategy,
    grid: &TimeGrid,
    k0: usize,
    x0: f64,
    w0: &[f64],
    dw: &[f64],
    path: usize,
    rec: &mut PathRecord,
) -> Result<()> {
    let d = m.d;
    rec.reset(k0, grid.steps(), d);
    rec.x[0] = x0;
    rec.w[..d].copy_from_slice(&w0[..d]);
    for k in k0..grid.steps() {
        let i = k - k0;
        let x = rec.x[i];
        let (w_now, w_next) = rec.w[i * d..(i + 2) * d].split_at_mut(d);
        let pi = &mut rec.pi[i * d..(i + 1) * d];
        let c = s.consumption(k, x, w_now);
        s.investment(k, x, w_now, pi);
        pi[m.d1..].fill(0.0);
        let inc = &dw[i * d..(i + 1) * d];
        let xn = s.advance(m, grid, k, x, w_now, c, pi, inc);
        if !xn.is_finite() || !c.is_finite() {
            return Err(Error::numeric(
                "simulate_wealth",
                format!("non-finite state at step {k} on path {path} (x = {xn}, c = {c})"),
            ));
        }
        for j in 0..d {
            w_next[j] = w_now[j] + inc[j];
        }
        rec.c[i] = c;
        rec.x[i + 1] = xn;
    }
    Ok(())
}

/// Wealth at every grid point, path-major.
#[derive(Clone, Debug)]
pub struct WealthPaths {
    pub n_paths: usize,
    pub points: usize,
    pub x: Vec<f64>,
}

impl WealthPaths {
    pub fn path(&self, p: usize) -> &[f64] {
        &self.x[p * self.points..(p + 1) * self.points]
    }

    pub fn terminal(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.path(p)[self.points - 1]).collect()
    }
}

/// Wealth paths of `s` started from `x0` at the first grid time.
pub fn simulate_wealth(
    m: &MarketModel,
    s: &dyn Strategy,
    ens: &PathEnsemble,
    x0: f64,
) -> Result<WealthPaths> {
    if !x0.is_finite() {
        return Err(Error::domain("simulate_wealth", format!("x0 = {x0}")));
    }
    let grid = ens.grid();
    let w0 = vec![0.0; m.d];
    let rows = par_map(
        ens.n_paths(),
        || (vec![0.0; ens.path_len()], PathRecord::new()),
        |(dw, rec), p| {
            ens.increments(p, dw);
            simulate_path(m, s, grid, 0, x0, &w0, dw, p, rec)?;
            Ok(rec.x.clone())
        },
    )?;
    Ok(WealthPaths {
        n_paths: ens.n_paths(),
        points: grid.steps() + 1,
        x: rows.concat(),
    })
}

/// A bounded spike `(κ, η)` applied on `[t, t + ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub t: f64,
    /// Evaluated once per path at `(t, W_t)`, so it is `𝓕_t`-measurable.
    pub kappa: Coefficient,
    pub eta: Vec<f64>,
    pub epsilon: f64,
}

impl PerturbationSpec {
    pub fn constant(t: f64, kappa: f64, eta: Vec<f64>, epsilon: f64) -> Self {
        Self {
            t,
            kappa: Coefficient::Constant(kappa),
            eta,
            epsilon,
        }
    }

    pub fn validate(&self, m: &MarketModel) -> Result<()> {
        let bad = |d: String| Err(Error::domain("perturbation", d));
        if !(self.t >= 0.0 && self.t < m.horizon) {
            return bad(format!("t = {} outside [0, T)", self.t));
        }
        if !(self.epsilon > 0.0) || self.t + self.epsilon > m.horizon * (1.0 + 1e-12) {
            return bad(format!(
                "window [{}, {}] exceeds horizon {}",
                self.t,
                self.t + self.epsilon,
                m.horizon
            ));
        }
        if self.eta.len() != m.d {
            return bad(format!("eta has {} entries, expected {}", self.eta.len(), m.d));
        }
        if self.eta[m.d1..].iter().any(|v| *v != 0.0) {
            return bad("eta must vanish on the untraded coordinates".into());
        }
        if self.eta.iter().any(|v| !v.is_finite()) || !self.kappa.bound().is_finite() {
            return bad("kappa and eta must be bounded".into());
        }
        Ok(())
    }

    /// Grid indices of the window endpoints.
    pub fn window(&self, grid: &TimeGrid) -> Result<(usize, usize)> {
        Ok((
            grid.require_index(self.t)?,
            grid.require_index((self.t + self.epsilon).min(grid.end()))?,
        ))
    }
}

/// Solves the perturbation equation along one path from step `k0`, with
/// per-step spike sizes `kappa(k)` and `eta(k, j)`; `w` holds `W` at grid
/// points `k0..=N`. Writes `ξ` at points `k0..=N` into `out`.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_path(
    m: &MarketModel,
    grid: &TimeGrid,
    k0: usize,
    w: &[f64],
    dw: &[f64],
    kappa: impl Fn(usize) -> f64,
    eta: impl Fn(usize, usize) -> f64,
    out: &mut [f64],
) {
    let d = m.d;
    out[0] = 0.0;
    for k in k0..grid.steps() {
        let i = k - k0;
        let t = grid.t(k);
        let dt = grid.dt(k);
        let wk = &w[i * d..(i + 1) * d];
        let mut drift = -kappa(k);
        let mut noise = 0.0;
        for j in 0..m.d1 {
            let e = eta(k, j);
            if e != 0.0 {
                drift += e * m.theta[j].eval(t, wk);
                noise += e * dw[i * d + j];
            }
        }
        out[i + 1] = (m.rate(t, wk) * dt).exp() * out[i] + drift * dt + noise;
    }
}

/// `ξ` at every grid point for every path, path-major.
pub fn simulate_perturbation(
    m: &MarketModel,
    p: &PerturbationSpec,
    ens: &PathEnsemble,
) -> Result<Vec<f64>> {
    p.validate(m)?;
    let grid = ens.grid();
    let (ka, kb) = p.window(grid)?;
    let d = m.d;
    let n = grid.steps();
    let rows = par_map(
        ens.n_paths(),
        || (vec![0.0; ens.path_len()], vec![0.0; (n + 1) * d]),
        |(dw, w), path| {
            ens.increments(path, dw);
            for k in 0..n {
                for j in 0..d {
                    w[(k + 1) * d + j] = w[k * d + j] + dw[k * d + j];
                }
            }
            let kap = p.kappa.eval(p.t, &w[ka * d..(ka + 1) * d]);
            let mut xi = vec![0.0; n + 1];
            let inside = |k: usize| k >= ka && k < kb;
            perturbation_path(
                m,
                grid,
                0,
                w,
                dw,
                |k| if inside(k) { kap } else { 0.0 },
                |k, j| if inside(k) { p.eta[j] } else { 0.0 },
                &mut xi,
            );
            Ok(xi)
        },
    )?;
    Ok(rows.concat())
}
