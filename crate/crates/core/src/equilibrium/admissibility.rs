use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::{Error, Result};
use crate::market::{
    moment_bound_probe, perturbation_path, simulate_path, MarketModel, MomentProbeConfig, PathEnsemble,
    PathRecord, Strategy,
};
use crate::parallel::par_map;
use crate::preferences::{utility_class_check, UtilityFunction, UtilityKind};
use crate::stats::{quantile, Estimate, Summary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmissibilityConfig {
    pub p: f64,
    /// Window lengths of the spike at `t = 0` used by the tail and
    /// exponential-moment probes.
    pub eps: Vec<f64>,
    pub exp_rate: f64,
    pub tail_quantile: f64,
}

impl Default for AdmissibilityConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            eps: vec![0.2, 0.1, 0.05, 0.025],
            exp_rate: 5.0,
            tail_quantile: 0.99,
        }
    }
}

/// Riemann sums of a pathwise integral on every `stride`-th grid point,
/// coarse to fine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannLadder {
    pub strides: Vec<usize>,
    pub values: Vec<Estimate>,
    /// The last refinement moves the sum by at most 0.75 of the previous
    /// one, or by a negligible amount.
    pub converges: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H0Report {
    /// `E ∫|c| ds`.
    pub consumption: RiemannLadder,
    /// `E ∫|π|² ds`.
    pub investment: RiemannLadder,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H1Report {
    pub p: f64,
    /// `E ∫ U₁'(c)^p ds`.
    pub running: Estimate,
    /// `E U₂'(X_T + E)^p`.
    pub terminal: Estimate,
    pub passed: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H2Report {
    /// `"utility-class"` when both utilities pass the class conditions that
    /// make the two admissible sets coincide, `"tail-probe"` otherwise.
    pub route: String,
    pub class_checks_passed: bool,
    /// `(ε, E[M₂^q · 1{M₂^q > threshold}])`, largest `ε` first.
    pub tail: Vec<(f64, Estimate)>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub h0: H0Report,
    pub h1: H1Report,
    pub h2: H2Report,
    /// `(ε, E[exp(c|ξ_T|)])` for a unit spike at `t = 0`.
    pub exp_moments: Vec<(f64, Estimate)>,
    pub exp_finite: bool,
    pub passed: bool,
}

const STRIDES: [usize; 4] = [8, 4, 2, 1];

fn ladder(per_path: &[[f64; 4]]) -> RiemannLadder {
    let values: Vec<Estimate> = (0..STRIDES.len())
        .map(|i| per_path.iter().map(|v| v[i]).collect::<Summary>().estimate())
        .collect();
    let v: Vec<f64> = values.iter().map(|e| e.mean).collect();
    let finite = v.iter().all(|x| x.is_finite());
    let (prev, last) = ((v[2] - v[1]).abs(), (v[3] - v[2]).abs());
    let converges = finite && (last <= 1e-9 * (1.0 + v[3].abs()) || last <= 0.75 * prev);
    RiemannLadder {
        strides: STRIDES.to_vec(),
        values,
        converges,
    }
}

fn class_range(u: &UtilityFunction) -> (f64, f64) {
    match u.kind() {
        UtilityKind::Exponential { .. } => (-10.0, 10.0),
        UtilityKind::FrommImkeller(t) => t.range(),
    }
}

/// Integrability probes of a pair: `∫|c|` and `∫|π|²` on a refinement
/// ladder, the `p`-th moments of marginal utilities, and uniform
/// integrability through the utility-class shortcut or a tail probe.
pub fn admissibility_probe(
    pair: &dyn Strategy,
    m: &MarketModel,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    x0: f64,
    cfg: &AdmissibilityConfig,
    ens: &PathEnsemble,
) -> Result<AdmissibilityReport> {
    if !(cfg.p > 1.0) {
        return Err(Error::domain("admissibility_probe", format!("p must exceed 1, got {}", cfg.p)));
    }
    let grid = ens.grid();
    check_grid(pair, grid)?;
    let (d, d1, n) = (m.d, m.d1, grid.steps());

    let class_ok = [u1, u2].iter().all(|u| {
        let (lo, hi) = class_range(u);
        utility_class_check(*u, "admissibility", lo, hi, 201).passed
    });
    // Tail probe windows, only needed off the shortcut route.
    let windows: Vec<(f64, usize)> = if class_ok || d1 == 0 {
        Vec::new()
    } else {
        cfg.eps
            .iter()
            .map(|&e| Ok((e, grid.index_of(e).ok_or_else(|| Error::Grid(format!("window end {e} is not a grid point")))?)))
            .collect::<Result<_>>()?
    };

    let w0 = vec![0.0; d];
    let rows = par_map(
        ens.n_paths(),
        || (vec![0.0; ens.path_len()], PathRecord::new(), vec![0.0; n + 1]),
        |(dw, rec, xi), p| {
            ens.increments(p, dw);
            simulate_path(m, pair, grid, 0, x0, &w0, dw, p, rec)?;
            let mut c_sums = [0.0; 4];
            let mut pi_sums = [0.0; 4];
            for (i, &s) in STRIDES.iter().enumerate() {
                for k in (0..n).step_by(s) {
                    let dt = grid.t((k + s).min(n)) - grid.t(k);
                    c_sums[i] += rec.c[k].abs() * dt;
                    pi_sums[i] += rec.pi[k * d..k * d + d1].iter().map(|v| v * v).sum::<f64>() * dt;
                }
            }
            let mut run = 0.0;
            for k in 0..n {
                run += u1.d1(rec.c[k])?.powf(cfg.p) * grid.dt(k);
            }
            let xe = rec.x_end() + m.terminal(rec.w_end());
            let term = u2.d1(xe)?.powf(cfg.p);
            let mut tails = Vec::with_capacity(windows.len());
            for &(_, kb) in &windows {
                let eta = |k: usize, j: usize| if k < kb && j == 0 { 1.0 } else { 0.0 };
                perturbation_path(m, grid, 0, &rec.w, dw, |k| if k < kb { 1.0 } else { 0.0 }, eta, xi);
                tails.push(u2.m_bound(xe, xi[n].abs())?.powf(cfg.p));
            }
            Ok((c_sums, pi_sums, run, term, tails))
        },
    )?;

    let c_ladder: Vec<[f64; 4]> = rows.iter().map(|r| r.0).collect();
    let pi_ladder: Vec<[f64; 4]> = rows.iter().map(|r| r.1).collect();
    let consumption = ladder(&c_ladder);
    let investment = ladder(&pi_ladder);
    let h0 = H0Report {
        passed: consumption.converges && investment.converges,
        consumption,
        investment,
    };

    let running = rows.iter().map(|r| r.2).collect::<Summary>().estimate();
    let terminal = rows.iter().map(|r| r.3).collect::<Summary>().estimate();
    let failure = if !(running.mean.is_finite() && running.se.is_finite()) {
        Some(format!("E int U1'(c)^{} ds is not finite", cfg.p))
    } else if !(terminal.mean.is_finite() && terminal.se.is_finite()) {
        Some(format!("E U2'(X_T + E)^{} is not finite", cfg.p))
    } else {
        None
    };
    let h1 = H1Report {
        p: cfg.p,
        running,
        terminal,
        passed: failure.is_none(),
        failure,
    };

    let h2 = if class_ok {
        H2Report {
            route: "utility-class".into(),
            class_checks_passed: true,
            tail: Vec::new(),
            passed: true,
        }
    } else {
        let mut tail = Vec::new();
        if !windows.is_empty() {
            let first: Vec<f64> = rows.iter().map(|r| r.4[0]).collect();
            let threshold = quantile(&first, cfg.tail_quantile);
            for (l, &(e, _)) in windows.iter().enumerate() {
                let s: Summary = rows
                    .iter()
                    .map(|r| if r.4[l] > threshold { r.4[l] } else { 0.0 })
                    .collect();
                tail.push((e, s.estimate()));
            }
        }
        let passed = !tail.is_empty()
            && tail.iter().all(|(_, e)| e.mean.is_finite())
            && tail.windows(2).all(|w| w[1].1.mean <= w[0].1.mean + 2.0 * (w[0].1.se + w[1].1.se));
        H2Report {
            route: "tail-probe".into(),
            class_checks_passed: false,
            tail,
            passed,
        }
    };

    let mut eta = vec![0.0; d];
    if d1 > 0 {
        eta[0] = 1.0;
    }
    let probe = moment_bound_probe(
        m,
        &MomentProbeConfig {
            t: 0.0,
            kappa: 1.0,
            eta,
            eps: cfg.eps.clone(),
            gammas: Vec::new(),
            exp_rate: cfg.exp_rate,
            window_steps: 16,
            base_steps: n,
        },
        ens,
    )?;
    let passed = h0.passed && h1.passed && h2.passed && probe.exp_finite;
    Ok(AdmissibilityReport {
        h0,
        h1,
        h2,
        exp_moments: probe.exp_moments,
        exp_finite: probe.exp_finite,
        passed,
    })
}
