use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::{Error, Result};
use crate::market::{step_weights, MarketModel, PathEnsemble, Preferences, Strategy};
use crate::parallel::par_map;
use crate::rng::Stream;
use crate::stats::{Estimate, Summary};

const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivalenceConfig {
    pub n_candidates: usize,
    /// Bound on every profile coefficient.
    pub amplitude: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            n_candidates: 100,
            amplitude: 0.2,
        }
    }
}

/// One candidate `(c + κ(s), π + η(s))` with profiles
/// `a₀ + a₁ sin(πs/T) + a₂ cos(πs/T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub index: usize,
    pub kappa: [f64; 3],
    /// One coefficient triple per traded coordinate.
    pub eta: Vec<[f64; 3]>,
    /// `𝓡(candidate) − 𝓡(pair)`.
    pub gap: Estimate,
    /// `R(candidate; 0, x) − R(pair; 0, x)`.
    pub gap_r: Estimate,
    /// `E[∫ ((U₁'(c)/λ₂(s,T) − α)κ + (αθ^𝓗 + β^𝓗)·η) ds]`, the bound in the
    /// concavity argument, when the pair has an adjoint.
    pub first_order: Option<Estimate>,
    /// `E[∫ U₁'(c)κ/λ₂(s,T) ds + U₂'(X_T + E)ξ_T]` by direct simulation.
    pub first_order_direct: Estimate,
    pub passed: bool,
    pub passed_r: bool,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub rows: Vec<CandidateRow>,
    pub n_paths: usize,
    /// Every evaluated candidate has `gap ≤ 2 SE`.
    pub passed: bool,
    pub passed_r: bool,
    /// Candidate-wise verdicts from both functionals agree.
    pub verdicts_agree: bool,
    pub first_order_passed: Option<bool>,
    /// Largest pathwise `|𝓡 − e^{δT}R|` when both discounts are
    /// exponential with the same rate.
    pub exponential_identity: Option<f64>,
    pub skipped: usize,
}

struct Profile {
    kappa: [f64; 3],
    eta: Vec<[f64; 3]>,
}

impl Profile {
    fn draw(stream: &Stream, i: usize, d1: usize, a: f64) -> Self {
        let mut rng = stream.rng(i as u64);
        let mut triple = || [0; 3].map(|_| rng.random_range(-a..=a));
        let kappa = triple();
        let eta = (0..d1).map(|_| triple()).collect();
        Self { kappa, eta }
    }
}

#[inline]
fn eval(a: &[f64; 3], s: f64) -> f64 {
    a[0] + a[1] * s.sin() + a[2] * s.cos()
}

/// Per-path data of the pair reused across candidates.
struct Base {
    c: Vec<f64>,
    u1: Vec<f64>,
    du1: Vec<f64>,
    theta: Vec<f64>,
    dw: Vec<f64>,
    growth: Vec<f64>,
    alpha: Vec<f64>,
    eta_coef: Vec<f64>,
    xe: f64,
}

/// Compares the time-consistent reward `𝓡` of the pair with that of
/// `n_candidates` smooth bounded perturbations on shared paths.
///
/// Candidate profiles are drawn from the `candidates` substream of the
/// ensemble seed.
pub fn equivalence_gap(
    pair: &dyn Strategy,
    m: &MarketModel,
    prefs: &Preferences,
    x0: f64,
    cfg: &EquivalenceConfig,
    ens: &PathEnsemble,
) -> Result<EquivalenceReport> {
    let grid = ens.grid();
    check_grid(pair, grid)?;
    let (d, d1, n) = (m.d, m.d1, grid.steps());
    let horizon = grid.end();
    for &t in grid.times() {
        let l = prefs.lambda2.eval(t, horizon);
        if !(l > 0.0) {
            return Err(Error::domain("equivalence_gap", format!("lambda2({t}, T) = {l}")));
        }
    }
    let (u1, u2) = (&prefs.u1, &prefs.u2);
    let wc = step_weights(grid, 0, |s| 1.0 / prefs.lambda2.eval(s, horizon));
    let wr = step_weights(grid, 0, |s| prefs.lambda1.eval(0.0, s));
    let l2_0 = prefs.lambda2.eval(0.0, horizon);
    let inv_l2: Vec<f64> = (0..n).map(|k| 1.0 / prefs.lambda2.eval(grid.t(k), horizon)).collect();
    let phase: Vec<f64> = (0..n).map(|k| std::f64::consts::PI * grid.t(k) / horizon).collect();
    let adjoint = pair.adjoint(0, x0, &vec![0.0; d], &mut vec![0.0; d]).is_some();
    let stream = Stream::new(ens.seed(), "candidates");
    let profiles: Vec<Profile> = (0..cfg.n_candidates)
        .map(|i| Profile::draw(&stream, i, d1, cfg.amplitude))
        .collect();
    let delta = match (prefs.lambda1.exponential_rate(), prefs.lambda2.exponential_rate()) {
        (Some(a), Some(b)) if a == b => Some(a),
        _ => None,
    };
    let identity_factor = delta.map(|dl| (dl * horizon).exp());

    // Summaries per candidate: gap, gap_r, first_order, direct, bad count.
    const M: usize = 5;
    let chunks = ens.n_paths().div_ceil(CHUNK);
    let parts = par_map(
        chunks,
        || (vec![0.0; ens.path_len()], vec![0.0; d], vec![0.0; d]),
        |(dw, pi, z), chunk| {
            let mut sums = vec![Summary::new(); M * cfg.n_candidates];
            let mut identity = 0.0f64;
            let mut b = Base {
                c: Vec::with_capacity(n),
                u1: Vec::with_capacity(n),
                du1: Vec::with_capacity(n),
                theta: Vec::with_capacity(n * d1),
                dw: Vec::with_capacity(n * d1),
                growth: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                eta_coef: Vec::with_capacity(n * d1),
                xe: 0.0,
            };
            for p in chunk * CHUNK..((chunk + 1) * CHUNK).min(ens.n_paths()) {
                ens.increments(p, dw);
                base_path(pair, m, u1, u2, grid, x0, dw, adjoint, pi, z, &mut b)?;
                let u2b = u2.value(b.xe)?;
                let base_c: f64 = b.u1.iter().zip(&wc).map(|(u, w)| u * w).sum::<f64>() + u2b;
                let base_r: f64 = b.u1.iter().zip(&wr).map(|(u, w)| u * w).sum::<f64>() + l2_0 * u2b;
                if let Some(f) = identity_factor {
                    identity = identity.max((base_c - f * base_r).abs());
                }
                for (ci, prof) in profiles.iter().enumerate() {
                    let mut xi = 0.0;
                    let (mut run_c, mut run_r, mut fo, mut direct) = (0.0, 0.0, 0.0, 0.0);
                    for k in 0..n {
                        let kap = eval(&prof.kappa, phase[k]);
                        let du = u1.value(b.c[k] + kap)? - b.u1[k];
                        run_c += wc[k] * du;
                        run_r += wr[k] * du;
                        direct += wc[k] * b.du1[k] * kap;
                        let mut drift = -kap;
                        let mut noise = 0.0;
                        let mut fo_k = (b.du1[k] * inv_l2[k] - if adjoint { b.alpha[k] } else { 0.0 }) * kap;
                        for j in 0..d1 {
                            let e = eval(&prof.eta[j], phase[k]);
                            drift += e * b.theta[k * d1 + j];
                            noise += e * b.dw[k * d1 + j];
                            if adjoint {
                                fo_k += b.eta_coef[k * d1 + j] * e;
                            }
                        }
                        fo += fo_k * grid.dt(k);
                        xi = b.growth[k] * xi + drift * grid.dt(k) + noise;
                    }
                    let du2 = u2.value(b.xe + xi)? - u2b;
                    direct += u2.d1(b.xe)? * xi;
                    let gap = run_c + du2;
                    let gap_r = run_r + l2_0 * du2;
                    let s = &mut sums[ci * M..(ci + 1) * M];
                    if !(gap.is_finite() && gap_r.is_finite() && direct.is_finite()) {
                        s[4].push(1.0);
                        continue;
                    }
                    if let Some(f) = identity_factor {
                        identity = identity.max((gap - f * gap_r).abs());
                    }
                    s[0].push(gap);
                    s[1].push(gap_r);
                    s[2].push(fo);
                    s[3].push(direct);
                }
            }
            Ok((sums, identity))
        },
    )?;
    let mut sums = vec![Summary::new(); M * cfg.n_candidates];
    let mut identity = 0.0f64;
    for (part, id) in &parts {
        for (s, p) in sums.iter_mut().zip(part) {
            s.merge(p);
        }
        identity = identity.max(*id);
    }

    let mut rows = Vec::with_capacity(cfg.n_candidates);
    for (ci, prof) in profiles.into_iter().enumerate() {
        let s = &sums[ci * M..(ci + 1) * M];
        let bad = s[4].count();
        let gap = s[0].estimate();
        let gap_r = s[1].estimate();
        let skipped = (bad > 0).then(|| format!("non-finite utility on {bad} paths"));
        rows.push(CandidateRow {
            index: ci,
            kappa: prof.kappa,
            eta: prof.eta,
            passed: skipped.is_some() || gap.mean <= 2.0 * gap.se + 1e-12,
            passed_r: skipped.is_some() || gap_r.mean <= 2.0 * gap_r.se + 1e-12,
            gap,
            gap_r,
            first_order: adjoint.then(|| s[2].estimate()),
            first_order_direct: s[3].estimate(),
            skipped,
        });
    }
    let live = || rows.iter().filter(|r| r.skipped.is_none());
    Ok(EquivalenceReport {
        n_paths: ens.n_paths(),
        passed: live().all(|r| r.passed),
        passed_r: live().all(|r| r.passed_r),
        verdicts_agree: live().all(|r| r.passed == r.passed_r),
        first_order_passed: adjoint.then(|| {
            live().all(|r| r.first_order.is_some_and(|f| f.mean <= 2.0 * f.se + 1e-10))
        }),
        exponential_identity: identity_factor.map(|_| identity),
        skipped: rows.iter().filter(|r| r.skipped.is_some()).count(),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn base_path(
    pair: &dyn Strategy,
    m: &MarketModel,
    u1: &crate::preferences::UtilityFunction,
    u2: &crate::preferences::UtilityFunction,
    grid: &crate::market::TimeGrid,
    x0: f64,
    dw: &[f64],
    adjoint: bool,
    pi: &mut [f64],
    z: &mut [f64],
    b: &mut Base,
) -> Result<()> {
    let (d, d1) = (m.d, m.d1);
    b.c.clear();
    b.u1.clear();
    b.du1.clear();
    b.theta.clear();
    b.dw.clear();
    b.growth.clear();
    b.alpha.clear();
    b.eta_coef.clear();
    let mut w = vec![0.0; d];
    let mut x = x0;
    for k in 0..grid.steps() {
        let t = grid.t(k);
        let c = pair.consumption(k, x, &w);
        pair.investment(k, x, &w, pi);
        pi[d1..].fill(0.0);
        b.c.push(c);
        b.u1.push(u1.value(c)?);
        b.du1.push(u1.d1(c)?);
        let inc = &dw[k * d..(k + 1) * d];
        for (th, dwj) in m.theta.iter().zip(inc).take(d1) {
            b.theta.push(th.eval(t, &w));
            b.dw.push(*dwj);
        }
        b.growth.push((m.rate(t, &w) * grid.dt(k)).exp());
        if adjoint {
            let y = pair
                .adjoint(k, x, &w, z)
                .ok_or_else(|| Error::State("adjoint disappeared mid-path".into()))?;
            let (a1, a2) = (u2.d1(x + y)?, u2.d2(x + y)?);
            b.alpha.push(a1);
            for j in 0..d1 {
                b.eta_coef.push(a1 * b.theta[k * d1 + j] + a2 * (pi[j] + z[j]));
            }
        }
        x = pair.advance(m, grid, k, x, &w, c, pi, inc);
        for j in 0..d {
            w[j] += inc[j];
        }
    }
    b.xe = x + m.terminal(&w);
    if !b.xe.is_finite() {
        return Err(Error::numeric("equivalence_gap", "non-finite terminal wealth"));
    }
    Ok(())
}
