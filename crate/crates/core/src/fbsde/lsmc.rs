use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{Basis, StepFit, TildeField, MAX_DIM, MAX_TERMS};
use super::h::HSchedule;
use crate::error::{Error, Result};
use crate::market::{MarketModel, PathEnsemble};
use crate::preferences::DiscountFunction;

const CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsmcConfig {
    pub degree: usize,
    pub ridge: f64,
    /// Truncation level of `|Z̃^𝓞|` inside the quadratic driver term.
    pub z_max: f64,
    pub cond_max: f64,
    /// Escalates a truncation hit-rate above 1% to an error.
    pub strict: bool,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
            z_max: 10.0,
            cond_max: 1e12,
            strict: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LsmcDiagnostics {
    /// `R²` of the `Ỹ` regression per step.
    pub r_squared: Vec<f64>,
    pub condition_max: f64,
    pub truncation_hits: u64,
    pub truncation_rate: f64,
    pub warnings: Vec<String>,
}

/// Sums `f(p)` over paths in fixed-size chunks and adds the chunk totals in
/// order, so the result does not depend on the thread count.
fn chunked_sum<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let parts: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(p, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; len];
    for part in parts {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out
}

struct Regression {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    nb: usize,
}

impl Regression {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(&b[..self.nb]))
            .iter()
            .copied()
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward least-squares Monte Carlo for the decoupled BSDE with
/// coefficients depending on `(t, W_t)`.
///
/// On each step: `E_k[Ỹ_{k+1}]` by regression, `Z̃_k` by regressing
/// `(Ỹ_{k+1} − E_k[Ỹ_{k+1}])ΔW_k/Δ`, then `Ỹ_k` from the regression of
/// `Ỹ_{k+1} − g₀Δ` with the linear term `ρhỸ` taken implicitly.
pub fn solve_lsmc(
    m: &MarketModel,
    lambda2: &DiscountFunction,
    gamma1: f64,
    gamma2: f64,
    h: &HSchedule,
    ens: &PathEnsemble,
    cfg: &LsmcConfig,
) -> Result<(TildeField, LsmcDiagnostics)> {
    let grid = ens.grid();
    let d = m.d;
    let n = ens.n_paths();
    let steps = grid.steps();
    if ens.d() != d {
        return Err(Error::State(format!("ensemble has d = {}, market has d = {d}", ens.d())));
    }
    if n < 2 {
        return Err(Error::domain("solve_tilde_bsde_lsmc", "need at least two paths"));
    }
    let r = m
        .constant_rate()
        .ok_or_else(|| Error::domain("solve_tilde_bsde_lsmc", "interest rate must be constant"))?;
    let full = Basis::new(d, cfg.degree)?;
    let constant = Basis::new(d, 0)?;
    let rho = gamma2 / gamma1;
    let log_l2: Vec<f64> = grid
        .times()
        .iter()
        .map(|&t| {
            let l = lambda2.eval(t, m.horizon);
            if l > 0.0 {
                Ok((rho * l).ln())
            } else {
                Err(Error::domain("solve_tilde_bsde_lsmc", format!("lambda2({t}, T) = {l}")))
            }
        })
        .collect::<Result<_>>()?;

    // Brownian levels and increments, path-major.
    let stride_w = (steps + 1) * d;
    let stride_dw = steps * d;
    let mut dw = vec![0.0; n * stride_dw];
    let mut w = vec![0.0; n * stride_w];
    dw.par_chunks_mut(stride_dw)
        .zip(w.par_chunks_mut(stride_w))
        .enumerate()
        .for_each(|(p, (dwp, wp))| {
            ens.increments(p, dwp);
            for k in 0..steps {
                for j in 0..d {
                    wp[(k + 1) * d + j] = wp[k * d + j] + dwp[k * d + j];
                }
            }
        });
    let w_at = |p: usize, k: usize| &w[p * stride_w + k * d..p * stride_w + (k + 1) * d];
    let dw_at = |p: usize, k: usize| &dw[p * stride_dw + k * d..p * stride_dw + (k + 1) * d];

    let mut y_next: Vec<f64> = (0..n).map(|p| m.terminal(w_at(p, steps))).collect();
    let mut fits = vec![StepFit::constant(0.0, d); steps];
    let mut diag = LsmcDiagnostics {
        r_squared: vec![0.0; steps],
        ..Default::default()
    };
    let inv_n = 1.0 / n as f64;

    for k in (0..steps).rev() {
        let t = grid.t(k);
        let dt = grid.dt(k);
        let hk = h.at(k);
        let (basis, scale) = if k == 0 { (&constant, 1.0) } else { (&full, t.sqrt()) };
        let nb = basis.len();
        let phi = |p: usize, out: &mut [f64; MAX_TERMS]| basis.eval(w_at(p, k), scale, out);

        // Gram matrix and E_k[Ỹ_{k+1}].
        let sums = chunked_sum(n, nb * nb + nb, |p, acc| {
            let mut b = [0.0; MAX_TERMS];
            phi(p, &mut b);
            for i in 0..nb {
                for j in 0..nb {
                    acc[i * nb + j] += b[i] * b[j];
                }
                acc[nb * nb + i] += b[i] * y_next[p];
            }
        });
        let mut gram = DMatrix::from_row_slice(nb, nb, &sums[..nb * nb]) * inv_n;
        for i in 0..nb {
            gram[(i, i)] += cfg.ridge;
        }
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(cond <= cfg.cond_max) {
            return Err(Error::numeric(
                "solve_tilde_bsde_lsmc",
                format!("regression at step {k} (t = {t}) has condition number {cond:.3e} above {:.3e}", cfg.cond_max),
            ));
        }
        diag.condition_max = diag.condition_max.max(cond);
        let reg = Regression {
            chol: gram
                .cholesky()
                .ok_or_else(|| Error::numeric("solve_tilde_bsde_lsmc", format!("Cholesky failed at step {k}")))?,
            nb,
        };
        let b_y: Vec<f64> = sums[nb * nb..].iter().map(|v| v * inv_n).collect();
        let a_y = reg.solve(&b_y);

        // Z̃ from the centred projection of Ỹ_{k+1} ΔW / Δ.
        let b_z = chunked_sum(n, nb * d, |p, acc| {
            let mut b = [0.0; MAX_TERMS];
            phi(p, &mut b);
            let e = (y_next[p] - dot(&a_y, &b[..nb])) / dt;
            for (j, dwj) in dw_at(p, k).iter().enumerate() {
                for i in 0..nb {
                    acc[j * nb + i] += b[i] * e * dwj;
                }
            }
        });
        let mut a_z = vec![0.0; nb * d];
        for j in 0..d {
            let rhs: Vec<f64> = b_z[j * nb..(j + 1) * nb].iter().map(|v| v * inv_n).collect();
            a_z[j * nb..(j + 1) * nb].copy_from_slice(&reg.solve(&rhs));
        }

        // Driver without the linear term, at (t_k, W_k, Z̃_k).
        let base = -h.at(k) / gamma1 * log_l2[k] + r / gamma2;
        let driver = |p: usize, b: &[f64]| -> (f64, bool) {
            let wk = w_at(p, k);
            let mut z = [0.0; MAX_DIM];
            for j in 0..d {
                z[j] = dot(&a_z[j * nb..(j + 1) * nb], &b[..nb]);
            }
            let mut g = base - hk * m.income(t, wk);
            for (theta, zj) in m.theta.iter().zip(&z).take(m.d1) {
                let th = theta.eval(t, wk);
                g += th * zj - th * th / (2.0 * gamma2);
            }
            let zo2: f64 = z[m.d1..d].iter().map(|v| v * v).sum();
            let cut = zo2 > cfg.z_max * cfg.z_max;
            let zo2 = if cut { cfg.z_max * cfg.z_max } else { zo2 };
            (g + 0.5 * gamma2 * zo2, cut)
        };

        let sums = chunked_sum(n, nb + 3, |p, acc| {
            let mut b = [0.0; MAX_TERMS];
            phi(p, &mut b);
            let (g, cut) = driver(p, &b);
            let target = y_next[p] - g * dt;
            for i in 0..nb {
                acc[i] += b[i] * target;
            }
            acc[nb] += target;
            acc[nb + 1] += target * target;
            acc[nb + 2] += cut as u8 as f64;
        });
        let b_t: Vec<f64> = sums[..nb].iter().map(|v| v * inv_n).collect();
        let a_t = reg.solve(&b_t);
        diag.truncation_hits += sums[nb + 2] as u64;

        // Goodness of fit of the target regression.
        let mean_t = sums[nb] * inv_n;
        let sst = sums[nb + 1] * inv_n - mean_t * mean_t;
        let ssr = chunked_sum(n, 1, |p, acc| {
            let mut b = [0.0; MAX_TERMS];
            phi(p, &mut b);
            let (g, _) = driver(p, &b);
            let e = y_next[p] - g * dt - dot(&a_t, &b[..nb]);
            acc[0] += e * e;
        })[0]
            * inv_n;
        diag.r_squared[k] = if sst > 1e-14 * (1.0 + mean_t * mean_t) { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };

        let a_yk: Vec<f64> = a_t.iter().map(|v| v / (1.0 + rho * hk * dt)).collect();
        y_next.par_iter_mut().enumerate().for_each(|(p, y)| {
            let mut b = [0.0; MAX_TERMS];
            phi(p, &mut b);
            *y = dot(&a_yk, &b[..nb]);
        });
        if let Some(p) = y_next.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("solve_tilde_bsde_lsmc", format!("non-finite Y at step {k} on path {p}")));
        }
        fits[k] = StepFit {
            degree: basis.degree(),
            scale,
            y: a_yk,
            z: a_z,
        };
    }

    diag.truncation_rate = diag.truncation_hits as f64 / (n * steps) as f64;
    if diag.truncation_rate > 0.01 {
        let msg = format!(
            "Z^O truncation active on {:.2}% of path-steps (z_max = {})",
            100.0 * diag.truncation_rate,
            cfg.z_max
        );
        if cfg.strict {
            return Err(Error::numeric("solve_tilde_bsde_lsmc", msg));
        }
        diag.warnings.push(msg);
    }
    let field = TildeField::new(d, fits, m.terminal.clone(), m.horizon)?;
    Ok((field, diag))
}
