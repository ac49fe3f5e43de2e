use super::ensemble::PathEnsemble;
use super::grid::TimeGrid;
use super::model::MarketModel;
use super::simulate::{simulate_path, PathRecord};
use super::strategy::Strategy;
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::preferences::{DiscountFunction, UtilityFunction};
use crate::stats::{Estimate, Summary};

/// The agent: running and terminal utilities with their discount functions.
#[derive(Clone, Debug)]
pub struct Preferences {
    pub u1: UtilityFunction,
    pub u2: UtilityFunction,
    pub lambda1: DiscountFunction,
    pub lambda2: DiscountFunction,
}

/// Per-path values with their mean and standard error.
#[derive(Clone, Debug)]
pub struct RewardEstimate {
    pub per_path: Vec<f64>,
    pub estimate: Estimate,
}

impl RewardEstimate {
    fn from_values(per_path: Vec<f64>) -> Self {
        let estimate = per_path.iter().copied().collect::<Summary>().estimate();
        Self { per_path, estimate }
    }
}

/// Trapezoidal weights `½(f(t_k) + f(t_{k+1}))Δ_k` for steps `k0..N`.
pub fn step_weights(grid: &TimeGrid, k0: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (k0..grid.steps())
        .map(|k| 0.5 * (f(grid.t(k)) + f(grid.t(k + 1))) * grid.dt(k))
        .collect()
}

/// `Σ_k weight_k U₁(c_k) + terminal_weight · U₂(X_N + E)` along one record.
pub fn path_value(
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    m: &MarketModel,
    rec: &PathRecord,
    weights: &[f64],
    terminal_weight: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for (c, w) in rec.c.iter().zip(weights) {
        acc += w * u1.value(*c)?;
    }
    let terminal = rec.x_end() + m.terminal(rec.w_end());
    let v = acc + terminal_weight * u2.value(terminal)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("reward", "non-finite utility"))
    }
}

fn reward_at_zero(
    p: &Preferences,
    m: &MarketModel,
    s: &dyn Strategy,
    ens: &PathEnsemble,
    x0: f64,
    weights: &[f64],
    terminal_weight: f64,
) -> Result<RewardEstimate> {
    let grid = ens.grid();
    let w0 = vec![0.0; m.d];
    let values = par_map(
        ens.n_paths(),
        || (vec![0.0; ens.path_len()], PathRecord::new()),
        |(dw, rec), path| {
            ens.increments(path, dw);
            simulate_path(m, s, grid, 0, x0, &w0, dw, path, rec)?;
            path_value(&p.u1, &p.u2, m, rec, weights, terminal_weight).map_err(|e| match e {
                Error::Numeric { op, detail } => Error::Numeric {
                    op,
                    detail: format!("{detail} on path {path}"),
                },
                other => other,
            })
        },
    )?;
    Ok(RewardEstimate::from_values(values))
}

/// Time-inconsistent reward `R(c, π; 0, x0)`.
pub fn reward_r(
    p: &Preferences,
    m: &MarketModel,
    s: &dyn Strategy,
    ens: &PathEnsemble,
    x0: f64,
) -> Result<RewardEstimate> {
    let grid = ens.grid();
    let t0 = grid.start();
    let weights = step_weights(grid, 0, |s| p.lambda1.eval(t0, s));
    reward_at_zero(p, m, s, ens, x0, &weights, p.lambda2.eval(t0, grid.end()))
}

/// Time-consistent reward `E[∫ U₁(c_s)/λ₂(s,T) ds + U₂(X_T + E)]`.
pub fn reward_c(
    p: &Preferences,
    m: &MarketModel,
    s: &dyn Strategy,
    ens: &PathEnsemble,
    x0: f64,
) -> Result<RewardEstimate> {
    let grid = ens.grid();
    let horizon = grid.end();
    for &t in grid.times() {
        let l = p.lambda2.eval(t, horizon);
        if !(l > 0.0) {
            return Err(Error::domain("reward_c", format!("lambda2({t}, T) = {l}")));
        }
    }
    let weights = step_weights(grid, 0, |s| 1.0 / p.lambda2.eval(s, horizon));
    reward_at_zero(p, m, s, ens, x0, &weights, 1.0)
}

/// `R(c, π; t_{k0}, X_{t_{k0}})` for each outer path, estimated from
/// `n_inner` sub-paths branched at `t_{k0}` from the outer path's state.
pub fn reward_r_conditional(
    p: &Preferences,
    m: &MarketModel,
    s: &dyn Strategy,
    ens: &PathEnsemble,
    x0: f64,
    k0: usize,
    n_inner: usize,
) -> Result<RewardEstimate> {
    let grid = ens.grid();
    if k0 >= grid.steps() {
        return Err(Error::Grid(format!("branch step {k0} at or past the horizon")));
    }
    let t = grid.t(k0);
    let weights = step_weights(grid, k0, |s| p.lambda1.eval(t, s));
    let tw = p.lambda2.eval(t, grid.end());
    let inner = ens.inner(k0, n_inner);
    let w0 = vec![0.0; m.d];
    let values = par_map(
        ens.n_paths(),
        || {
            (
                vec![0.0; ens.path_len()],
                vec![0.0; inner.path_len()],
                PathRecord::new(),
                PathRecord::new(),
            )
        },
        |(dw, dwi, outer, rec), path| {
            ens.increments(path, dw);
            simulate_path(m, s, grid, 0, x0, &w0, dw, path, outer)?;
            let (xt, wt) = (outer.x[k0], outer.w_at(k0).to_vec());
            let mut acc = Summary::new();
            for j in 0..n_inner {
                inner.increments(path, j, dwi);
                simulate_path(m, s, grid, k0, xt, &wt, dwi, path, rec)?;
                acc.push(path_value(&p.u1, &p.u2, m, rec, &weights, tw)?);
            }
            Ok(acc.mean())
        },
    )?;
    Ok(RewardEstimate::from_values(values))
}
