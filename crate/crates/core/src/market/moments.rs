use serde::{Deserialize, Serialize};

use super::ensemble::PathEnsemble;
use super::grid::TimeGrid;
use super::model::MarketModel;
use super::simulate::perturbation_path;
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::stats::{linear_fit, Estimate, Summary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentProbeConfig {
    pub t: f64,
    pub kappa: f64,
    pub eta: Vec<f64>,
    pub eps: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Rate `c` of the exponential moment `E[exp(c|ξ_T|)]`.
    pub exp_rate: f64,
    /// Steps used inside every window, identical across the ladder so the
    /// discrete supremum has the same resolution at every `ε`.
    pub window_steps: usize,
    pub base_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub gamma: f64,
    pub eps: f64,
    pub moment: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub gamma: f64,
    /// `None` when every moment is zero and there is nothing to fit.
    pub slope: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub slopes: Vec<SlopeFit>,
    pub exp_moments: Vec<(f64, Estimate)>,
    pub exp_finite: bool,
    pub notes: Vec<String>,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.exp_finite && self.slopes.iter().all(|s| s.passed)
    }
}

/// Estimates `E[sup_s |ξ_s|^{2γ}]` along an `ε` ladder, fits the log-log
/// slope in `ε` (expected `γ`, accepted within 10%) and checks that the
/// exponential moment stays finite.
pub fn moment_bound_probe(
    m: &MarketModel,
    cfg: &MomentProbeConfig,
    ens: &PathEnsemble,
) -> Result<MomentReport> {
    if cfg.eps.len() < 2 {
        return Err(Error::domain("moment_bound_probe", "need at least two ladder levels"));
    }
    if cfg.eta.len() != m.d || cfg.eta[m.d1..].iter().any(|v| *v != 0.0) {
        return Err(Error::domain("moment_bound_probe", "eta must have d entries, zero beyond d1"));
    }
    let d = m.d;
    let mut rows = Vec::new();
    let mut exp_moments = Vec::new();
    let mut notes = Vec::new();
    for (level, &eps) in cfg.eps.iter().enumerate() {
        let grid =
            TimeGrid::windowed(m.horizon, cfg.base_steps, cfg.t, eps, cfg.window_steps)?;
        let (ka, kb) = (grid.require_index(cfg.t)?, grid.require_index(cfg.t + eps)?);
        let e = PathEnsemble::with_label(
            grid.clone(),
            d,
            ens.seed(),
            ens.n_paths(),
            &format!("moments/{level}"),
        );
        let n = grid.steps();
        let per_path = par_map(
            e.n_paths(),
            || (vec![0.0; e.path_len()], vec![0.0; (n + 1) * d], vec![0.0; n + 1]),
            |(dw, w, xi), path| {
                e.increments(path, dw);
                for k in 0..n {
                    for j in 0..d {
                        w[(k + 1) * d + j] = w[k * d + j] + dw[k * d + j];
                    }
                }
                let inside = |k: usize| k >= ka && k < kb;
                perturbation_path(
                    m,
                    &grid,
                    0,
                    w,
                    dw,
                    |k| if inside(k) { cfg.kappa } else { 0.0 },
                    |k, j| if inside(k) { cfg.eta[j] } else { 0.0 },
                    xi,
                );
                let sup = xi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                Ok((sup, xi[n].abs()))
            },
        )?;
        for &gamma in &cfg.gammas {
            let s: Summary = per_path.iter().map(|(sup, _)| sup.powf(2.0 * gamma)).collect();
            rows.push(MomentRow {
                gamma,
                eps,
                moment: s.estimate(),
            });
        }
        let s: Summary = per_path
            .iter()
            .map(|(_, end)| (cfg.exp_rate * end).exp())
            .collect();
        exp_moments.push((eps, s.estimate()));
    }
    let exp_finite = exp_moments
        .iter()
        .all(|(_, e)| e.mean.is_finite() && e.se.is_finite());

    let mut slopes = Vec::new();
    for &gamma in &cfg.gammas {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.gamma == gamma)
            .map(|r| (r.eps, r.moment.mean))
            .collect();
        if pts.iter().all(|(_, v)| *v == 0.0) {
            notes.push(format!("gamma = {gamma}: all moments are zero, slope fit skipped"));
            slopes.push(SlopeFit {
                gamma,
                slope: None,
                passed: true,
            });
            continue;
        }
        if pts.iter().any(|(_, v)| !(*v > 0.0)) {
            notes.push(format!("gamma = {gamma}: some moments vanish, slope undefined"));
            slopes.push(SlopeFit {
                gamma,
                slope: None,
                passed: false,
            });
            continue;
        }
        let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let (_, slope) = linear_fit(&lx, &ly);
        slopes.push(SlopeFit {
            gamma,
            slope: Some(slope),
            passed: (slope - gamma).abs() <= 0.1 * gamma,
        });
    }
    Ok(MomentReport {
        rows,
        slopes,
        exp_moments,
        exp_finite,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spike_has_zero_moments() {
        let m = MarketModel::constant(1.0, 0.0, 0.3, 0.0, 0.0).unwrap();
        let cfg = MomentProbeConfig {
            t: 0.25,
            kappa: 0.0,
            eta: vec![0.0],
            eps: vec![0.2, 0.1, 0.05, 0.025],
            gammas: vec![1.0, 2.0],
            exp_rate: 5.0,
            window_steps: 8,
            base_steps: 20,
        };
        let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 20).unwrap(), 1, 42, 50);
        let r = moment_bound_probe(&m, &cfg, &ens).unwrap();
        assert!(r.rows.iter().all(|row| row.moment.mean == 0.0));
        assert!(r.slopes.iter().all(|s| s.slope.is_none()));
        assert!(r.passed());
    }
}
