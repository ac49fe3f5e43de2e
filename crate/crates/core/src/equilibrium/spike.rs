use std::io::Write;

use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::{Error, Result};
use crate::fbsde::fmt17;
use crate::market::{MarketModel, PathEnsemble, PerturbationSpec, Preferences, Strategy, TimeGrid};
use crate::parallel::par_map;
use crate::stats::{intercept_weights, quadratic_intercept_weights, slope_weights, Estimate, Summary};

/// A constant spike `(κ, η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Direction {
    pub kappa: f64,
    pub eta: Vec<f64>,
}

impl Direction {
    /// `(±1, 0)` and `(0, ±e_i)` for every traded coordinate.
    pub fn default_bank(d: usize, d1: usize) -> Vec<Direction> {
        let mut bank = vec![
            Direction { kappa: 1.0, eta: vec![0.0; d] },
            Direction { kappa: -1.0, eta: vec![0.0; d] },
        ];
        for i in 0..d1 {
            for s in [1.0, -1.0] {
                let mut eta = vec![0.0; d];
                eta[i] = s;
                bank.push(Direction { kappa: 0.0, eta });
            }
        }
        bank
    }

    /// Signed one-based index of the first nonzero `η` coordinate, 0 if none.
    pub fn eta_index(&self) -> i64 {
        match self.eta.iter().position(|v| *v != 0.0) {
            Some(i) => (i as i64 + 1) * self.eta[i].signum() as i64,
            None => 0,
        }
    }

    fn is_zero(&self) -> bool {
        self.kappa == 0.0 && self.eta.iter().all(|v| *v == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeConfig {
    /// Spike times; empty means `{0, T/4, T/2, 3T/4}`.
    pub times: Vec<f64>,
    /// Directions; empty means the default bank.
    pub bank: Vec<Direction>,
    pub eps: Vec<f64>,
    pub n_inner: usize,
    /// Relative amplitude of the antisymmetric difference used for the
    /// first-order coefficient.
    pub fd_amplitude: f64,
    pub min_window_steps: usize,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self {
            times: Vec::new(),
            bank: Vec::new(),
            eps: vec![0.2, 0.1, 0.05, 0.025],
            n_inner: 64,
            fd_amplitude: 1e-3,
            min_window_steps: 4,
        }
    }
}

impl SpikeConfig {
    /// Fills the default times and bank for `m`.
    pub fn resolved(&self, m: &MarketModel) -> Self {
        let mut c = self.clone();
        if c.times.is_empty() {
            c.times = (0..4).map(|i| m.horizon * i as f64 / 4.0).collect();
        }
        if c.bank.is_empty() {
            c.bank = Direction::default_bank(m.d, m.d1);
        }
        c
    }

    /// Smallest number of uniform steps on `[0, T]` that puts every window
    /// endpoint on the grid with at least `min_window_steps` steps inside.
    pub fn required_steps(&self, horizon: f64, at_least: usize) -> usize {
        let on_grid = |n: usize| {
            let dt = horizon / n as f64;
            let fits = |v: f64| ((v / dt).round() * dt - v).abs() <= 1e-9 * horizon;
            self.times.iter().all(|t| fits(*t))
                && self
                    .eps
                    .iter()
                    .all(|e| fits(*e) && (e / dt).round() as usize >= self.min_window_steps)
        };
        (at_least.max(1)..at_least.max(1) * 64 + 4096).find(|n| on_grid(*n)).unwrap_or(at_least)
    }
}

/// `ε ↦ quotient` for one `(t, κ, η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeCell {
    pub t: f64,
    pub direction: usize,
    pub kappa: f64,
    pub eta_index: i64,
    pub eps: f64,
    pub quotient: Estimate,
    /// Antisymmetric difference in the spike amplitude: the first-order
    /// coefficient at this `ε`.
    pub first_order: Estimate,
    /// The same coefficient from the adjoint state, when the pair has one.
    pub closed_form: Option<Estimate>,
    /// Pathwise `first_order − closed_form`.
    pub decomposition_gap: Option<Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeSummary {
    pub t: f64,
    pub direction: usize,
    pub kappa: f64,
    pub eta: Vec<f64>,
    pub eta_index: i64,
    /// Intercept of the linear fit of the quotient in `ε`.
    pub intercept: Estimate,
    pub slope: Estimate,
    /// `intercept ≤ 2 SE`.
    pub passed: bool,
    /// `intercept > 3 SE`.
    pub significant: bool,
    /// Share of conditional quotients above zero at the smallest `ε`.
    pub positive_fraction: f64,
    pub first_order_intercept: Estimate,
    /// `|first_order_intercept| ≤ 3 SE`.
    pub first_order_vanishes: bool,
    /// Every `ε` has `|decomposition_gap| ≤ 3 SE`.
    pub decomposition_passed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeReport {
    pub cells: Vec<SpikeCell>,
    pub summaries: Vec<SpikeSummary>,
    pub n_outer: usize,
    pub n_inner: usize,
    pub passed: bool,
    pub first_order_vanishes: bool,
    pub decomposition_passed: Option<bool>,
    /// `(t, κ, η)` cells whose intercept is more than 3 SE above zero.
    pub violations: Vec<String>,
}

impl SpikeReport {
    /// Columns `t, kappa, eta_index, eps, quotient, se`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "t,kappa,eta_index,eps,quotient,se")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt17(c.t),
                fmt17(c.kappa),
                c.eta_index,
                fmt17(c.eps),
                fmt17(c.quotient.mean),
                fmt17(c.quotient.se)
            )?;
        }
        Ok(())
    }
}

/// Window quantities along one branch from `t_{k0}`, reused for every
/// direction and every `ε`.
struct Branch {
    c: Vec<f64>,
    dw: Vec<f64>,
    theta: Vec<f64>,
    rdt: Vec<f64>,
    alpha: Vec<f64>,
    /// `U₂'θ + U₂''(π + Z^𝓗)` per window step, `d1` entries each.
    eta_coef: Vec<f64>,
    pi: Vec<f64>,
    z: Vec<f64>,
}

struct Setup<'a> {
    pair: &'a dyn Strategy,
    m: &'a MarketModel,
    prefs: &'a Preferences,
    grid: &'a TimeGrid,
    bank: &'a [Direction],
    k0: usize,
    /// Window end index per ladder level.
    kb: Vec<usize>,
    eps: Vec<f64>,
    weights: Vec<f64>,
    l2: f64,
    amp: f64,
    adjoint: bool,
}

impl Setup<'_> {
    fn cells(&self) -> usize {
        self.bank.len() * self.kb.len()
    }

    fn kb_max(&self) -> usize {
        *self.kb.iter().max().unwrap()
    }

    /// Runs one branch from `(x, w)` at `t_{k0}`; adds quotient, first-order
    /// and closed-form values to `acc` (three blocks of `cells()` entries).
    fn branch(&self, x0: f64, w0: &[f64], dw: &[f64], b: &mut Branch, acc: &mut [f64]) -> Result<()> {
        let (m, grid, pair, k0) = (self.m, self.grid, self.pair, self.k0);
        let (d, d1) = (m.d, m.d1);
        let n = grid.steps();
        let kbm = self.kb_max();
        let (u1, u2) = (&self.prefs.u1, &self.prefs.u2);
        let mut w = w0.to_vec();
        let mut x = x0;
        let mut r_total = 0.0;
        let mut r_prefix = vec![0.0; kbm - k0 + 1];
        b.c.clear();
        b.alpha.clear();
        b.eta_coef.clear();
        b.theta.clear();
        b.rdt.clear();
        b.dw.clear();
        for k in k0..n {
            let i = k - k0;
            let t = grid.t(k);
            let c = pair.consumption(k, x, &w);
            pair.investment(k, x, &w, &mut b.pi);
            b.pi[d1..d].fill(0.0);
            let inc = &dw[i * d..(i + 1) * d];
            let rdt = m.rate(t, &w) * grid.dt(k);
            if k < kbm {
                b.c.push(c);
                b.dw.extend_from_slice(inc);
                b.rdt.push(rdt);
                for j in 0..d1 {
                    b.theta.push(m.theta[j].eval(t, &w));
                }
                if self.adjoint {
                    let y = pair
                        .adjoint(k, x, &w, &mut b.z)
                        .ok_or_else(|| Error::State("spike test: adjoint disappeared".into()))?;
                    let (a1, a2) = (u2.d1(x + y)?, u2.d2(x + y)?);
                    b.alpha.push(a1);
                    for j in 0..d1 {
                        b.eta_coef.push(a1 * b.theta[i * d1 + j] + a2 * (b.pi[j] + b.z[j]));
                    }
                }
            }
            r_total += rdt;
            if k < kbm {
                r_prefix[i + 1] = r_total;
            }
            x = pair.advance(m, grid, k, x, &w, c, &b.pi, inc);
            if !x.is_finite() || !c.is_finite() {
                return Err(Error::numeric("spike_variation_test", format!("non-finite state at step {k}")));
            }
            for j in 0..d {
                w[j] += inc[j];
            }
        }
        let xe = x + m.terminal(&w);
        let u2b = u2.value(xe)?;
        let levels = self.kb.len();
        let cells = self.cells();
        let amps = [1.0, self.amp, -self.amp];
        for (di, dir) in self.bank.iter().enumerate() {
            if dir.is_zero() {
                continue;
            }
            let mut xi = 0.0;
            let mut s = [0.0; 3];
            let mut f1 = 0.0;
            let mut cf = 0.0;
            let mut next = 0;
            // Levels sorted by window end so one pass fills all of them.
            let mut order: Vec<usize> = (0..levels).collect();
            order.sort_by_key(|l| self.kb[*l]);
            for k in k0..kbm {
                let i = k - k0;
                let dt = grid.dt(k);
                if dir.kappa != 0.0 {
                    let c = b.c[i];
                    let base = u1.value(c)?;
                    for (sv, a) in s.iter_mut().zip(amps) {
                        *sv += self.weights[i] * (u1.value(c + a * dir.kappa)? - base);
                    }
                    f1 += self.weights[i] * u1.d1(c)? * dir.kappa;
                }
                let mut drift = -dir.kappa;
                let mut noise = 0.0;
                for j in 0..d1 {
                    drift += dir.eta[j] * b.theta[i * d1 + j];
                    noise += dir.eta[j] * b.dw[i * d + j];
                }
                xi = b.rdt[i].exp() * xi + drift * dt + noise;
                if self.adjoint {
                    let mut v = -b.alpha[i] * dir.kappa;
                    for j in 0..d1 {
                        v += b.eta_coef[i * d1 + j] * dir.eta[j];
                    }
                    cf += self.l2 * v * dt;
                }
                while next < levels && self.kb[order[next]] == k + 1 {
                    let l = order[next];
                    let xi_t = xi * (r_total - r_prefix[i + 1]).exp();
                    let mut dr = [0.0; 3];
                    for (j, a) in amps.iter().enumerate() {
                        dr[j] = s[j] + self.l2 * (u2.value(xe + a * xi_t)? - u2b);
                    }
                    let eps = self.eps[l];
                    let cell = di * levels + l;
                    acc[cell] += dr[0] / eps;
                    acc[cells + cell] += (dr[1] - dr[2]) / (2.0 * self.amp * eps);
                    acc[2 * cells + cell] += (f1 + cf) / eps;
                    next += 1;
                }
            }
        }
        Ok(())
    }
}

/// Paired-path estimates of the spike difference quotient
/// `(R(c^{t,ε}, π^{t,ε}; t, X_t) − R(c, π; t, X_t))/ε` over the `ε` ladder,
/// extrapolated to `ε = 0` by a linear fit.
///
/// Perturbed and unperturbed rewards share every Brownian increment. At
/// `t > 0` the conditional expectation given `𝓕_t` is the mean over
/// `n_inner` branches per outer path, and the error bar is taken across
/// outer paths.
pub fn spike_variation_test(
    pair: &dyn Strategy,
    m: &MarketModel,
    prefs: &Preferences,
    x0: f64,
    cfg: &SpikeConfig,
    ens: &PathEnsemble,
) -> Result<SpikeReport> {
    let cfg = cfg.resolved(m);
    let grid = ens.grid();
    check_grid(pair, grid)?;
    if ens.d() != m.d {
        return Err(Error::State(format!("ensemble has d = {}, market has d = {}", ens.d(), m.d)));
    }
    if cfg.eps.len() < 2 {
        return Err(Error::domain("spike_variation_test", "need at least two ladder levels"));
    }
    if !(cfg.fd_amplitude > 0.0) || cfg.n_inner == 0 {
        return Err(Error::domain("spike_variation_test", "fd_amplitude and n_inner must be positive"));
    }
    let adjoint = {
        let mut z = vec![0.0; m.d];
        pair.adjoint(0, x0, &vec![0.0; m.d], &mut z).is_some()
    };
    let levels = cfg.eps.len();
    let mut cells_out = Vec::new();
    let mut summaries = Vec::new();

    for &t in &cfg.times {
        for dir in &cfg.bank {
            for &eps in &cfg.eps {
                PerturbationSpec::constant(t, dir.kappa, dir.eta.clone(), eps).validate(m)?;
            }
        }
        let k0 = grid.index_of(t).ok_or_else(|| Error::Grid(format!("spike time {t} is not a grid point")))?;
        let kb = cfg
            .eps
            .iter()
            .map(|&e| {
                let kb = grid
                    .index_of(t + e)
                    .ok_or_else(|| Error::Grid(format!("window end {} is not a grid point", t + e)))?;
                if kb - k0 < cfg.min_window_steps {
                    return Err(Error::Grid(format!(
                        "window [{t}, {}] spans {} steps, fewer than {}",
                        t + e,
                        kb - k0,
                        cfg.min_window_steps
                    )));
                }
                Ok(kb)
            })
            .collect::<Result<Vec<_>>>()?;
        // Trend abscissa: span of the left endpoints inside each window, so a
        // Riemann sum over the window has no O(Δ) offset at the intercept.
        let span: Vec<f64> = kb.iter().map(|&b| grid.t(b - 1) - grid.t(k0)).collect();
        let iw = intercept_weights(&span);
        let sw = slope_weights(&span);
        // The first-order block is smooth in ε, so a quadratic trend is safe there.
        let qw = if span.len() >= 3 { quadratic_intercept_weights(&span) } else { iw.clone() };
        let setup = Setup {
            pair,
            m,
            prefs,
            grid,
            bank: &cfg.bank,
            k0,
            weights: (k0..grid.steps())
                .map(|k| prefs.lambda1.eval(t, grid.t(k)) * grid.dt(k))
                .collect(),
            l2: prefs.lambda2.eval(t, grid.end()),
            kb,
            eps: cfg.eps.clone(),
            amp: cfg.fd_amplitude,
            adjoint,
        };
        let cells = setup.cells();
        let n_inner = if k0 == 0 { 1 } else { cfg.n_inner };
        let inner = (k0 > 0).then(|| ens.inner(k0, n_inner));
        let d = m.d;
        let per_outer = par_map(
            ens.n_paths(),
            || {
                (
                    vec![0.0; ens.path_len()],
                    vec![0.0; (grid.steps() - k0) * d],
                    Branch {
                        c: Vec::new(),
                        dw: Vec::new(),
                        theta: Vec::new(),
                        rdt: Vec::new(),
                        alpha: Vec::new(),
                        eta_coef: Vec::new(),
                        pi: vec![0.0; d],
                        z: vec![0.0; d],
                    },
                )
            },
            |(dw, dwi, b), p| {
                let mut acc = vec![0.0; 3 * cells];
                ens.increments(p, dw);
                match &inner {
                    None => setup.branch(x0, &vec![0.0; d], dw, b, &mut acc)?,
                    Some(inner) => {
                        let (x, w) = advance_to(pair, m, grid, k0, x0, dw, &mut b.pi)?;
                        for j in 0..n_inner {
                            inner.increments(p, j, dwi);
                            setup.branch(x, &w, dwi, b, &mut acc)?;
                        }
                        for v in acc.iter_mut() {
                            *v /= n_inner as f64;
                        }
                    }
                }
                Ok(acc)
            },
        )?;

        for (di, dir) in cfg.bank.iter().enumerate() {
            let cell = |l: usize| di * levels + l;
            for (l, &eps) in cfg.eps.iter().enumerate() {
                let q: Summary = per_outer.iter().map(|a| a[cell(l)]).collect();
                let f: Summary = per_outer.iter().map(|a| a[cells + cell(l)]).collect();
                let (cf, gap) = if adjoint {
                    let cf: Summary = per_outer.iter().map(|a| a[2 * cells + cell(l)]).collect();
                    let gap: Summary = per_outer
                        .iter()
                        .map(|a| a[cells + cell(l)] - a[2 * cells + cell(l)])
                        .collect();
                    (Some(cf.estimate()), Some(gap.estimate()))
                } else {
                    (None, None)
                };
                cells_out.push(SpikeCell {
                    t,
                    direction: di,
                    kappa: dir.kappa,
                    eta_index: dir.eta_index(),
                    eps,
                    quotient: q.estimate(),
                    first_order: f.estimate(),
                    closed_form: cf,
                    decomposition_gap: gap,
                });
            }
            let fit = |block: usize, wts: &[f64]| -> Estimate {
                per_outer
                    .iter()
                    .map(|a| (0..levels).map(|l| wts[l] * a[block * cells + cell(l)]).sum::<f64>())
                    .collect::<Summary>()
                    .estimate()
            };
            let intercept = fit(0, &iw);
            let first_order_intercept = fit(1, &qw);
            let smallest = (0..levels)
                .min_by(|a, b| cfg.eps[*a].total_cmp(&cfg.eps[*b]))
                .unwrap();
            let positive = per_outer.iter().filter(|a| a[cell(smallest)] > 0.0).count();
            let decomposition_passed = adjoint.then(|| {
                cells_out[cells_out.len() - levels..]
                    .iter()
                    .all(|c| c.decomposition_gap.is_some_and(|g| g.mean.abs() <= 3.0 * g.se + 1e-12))
            });
            summaries.push(SpikeSummary {
                t,
                direction: di,
                kappa: dir.kappa,
                eta: dir.eta.clone(),
                eta_index: dir.eta_index(),
                passed: intercept.mean <= 2.0 * intercept.se + 1e-12,
                significant: intercept.mean > 3.0 * intercept.se + 1e-12,
                intercept,
                slope: fit(0, &sw),
                positive_fraction: positive as f64 / ens.n_paths() as f64,
                first_order_vanishes: first_order_intercept.mean.abs() <= 3.0 * first_order_intercept.se + 1e-12,
                first_order_intercept,
                decomposition_passed,
            });
        }
    }

    let violations = summaries
        .iter()
        .filter(|s| s.significant)
        .map(|s| {
            format!(
                "t = {}, kappa = {}, eta_index = {}: intercept {:.6e} > 3 SE (SE {:.3e})",
                s.t, s.kappa, s.eta_index, s.intercept.mean, s.intercept.se
            )
        })
        .collect();
    Ok(SpikeReport {
        passed: summaries.iter().all(|s| s.passed),
        first_order_vanishes: summaries.iter().all(|s| s.first_order_vanishes),
        decomposition_passed: adjoint.then(|| summaries.iter().all(|s| s.decomposition_passed == Some(true))),
        cells: cells_out,
        summaries,
        n_outer: ens.n_paths(),
        n_inner: cfg.n_inner,
        violations,
    })
}

/// Runs `pair` from `(0, x0)` to step `k0`; returns `(X, W)` there.
pub(crate) fn advance_to(
    pair: &dyn Strategy,
    m: &MarketModel,
    grid: &TimeGrid,
    k0: usize,
    x0: f64,
    dw: &[f64],
    pi: &mut [f64],
) -> Result<(f64, Vec<f64>)> {
    let d = m.d;
    let mut w = vec![0.0; d];
    let mut x = x0;
    for k in 0..k0 {
        let c = pair.consumption(k, x, &w);
        pair.investment(k, x, &w, pi);
        pi[m.d1..d].fill(0.0);
        let inc = &dw[k * d..(k + 1) * d];
        x = pair.advance(m, grid, k, x, &w, c, pi, inc);
        for j in 0..d {
            w[j] += inc[j];
        }
    }
    if !x.is_finite() {
        return Err(Error::numeric("spike_variation_test", format!("non-finite wealth at step {k0}")));
    }
    Ok((x, w))
}
