use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{StepFit, TildeField, MAX_DIM};
use super::h::HSchedule;
use super::lsmc::{solve_lsmc, LsmcConfig};
use super::ode::{solve_tilde_ode, TildeOde};
use super::system::TildeSystem;
use super::transform::{untransform, PathArrays};
use crate::error::{Error, Result};
use crate::market::{MarketModel, PathEnsemble, TimeGrid};
use crate::preferences::{DiscountFunction, UtilityFunction};
use crate::stats::{Estimate, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "deterministic-ODE")]
    DeterministicOde,
    #[serde(rename = "LSMC")]
    Lsmc,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub h_residual: f64,
    pub r_squared_min: Option<f64>,
    pub r_squared_mean: Option<f64>,
    pub condition_max: Option<f64>,
    pub truncation_hits: u64,
    pub truncation_rate: f64,
    pub warnings: Vec<String>,
}

/// Backward part of the decoupled system.
#[derive(Clone, Debug)]
pub struct TildeBackward {
    pub grid: TimeGrid,
    pub h: HSchedule,
    pub field: TildeField,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// RK4 step of the deterministic solver; `None` means `T/10⁴`.
    pub ode_step: Option<f64>,
    pub lsmc: LsmcConfig,
    /// Use the regression solver even when the coefficients are deterministic.
    pub force_lsmc: bool,
    /// Paths kept in full inside the solution.
    pub stored_paths: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            ode_step: None,
            lsmc: LsmcConfig::default(),
            force_lsmc: false,
            stored_paths: 2000,
        }
    }
}

fn rate_and_h(m: &MarketModel, grid: &TimeGrid, gamma1: f64, gamma2: f64) -> Result<(f64, HSchedule)> {
    let r = m
        .constant_rate()
        .ok_or_else(|| Error::domain("solve", "the exponential pipeline needs a constant interest rate"))?;
    if (grid.start() != 0.0) || (grid.end() - m.horizon).abs() > 1e-12 * m.horizon {
        return Err(Error::Grid(format!("solver grid must span [0, {}]", m.horizon)));
    }
    Ok((r, HSchedule::new(grid, r, gamma1, gamma2)?))
}

/// RK4 solution of the decoupled BSDE with deterministic coefficients (`Z̃ ≡ 0`).
pub fn solve_tilde_bsde_deterministic(
    m: &MarketModel,
    lambda2: &DiscountFunction,
    gamma1: f64,
    gamma2: f64,
    grid: &TimeGrid,
    ode_step: Option<f64>,
) -> Result<TildeBackward> {
    let (r, h) = rate_and_h(m, grid, gamma1, gamma2)?;
    let ode = TildeOde {
        market: m,
        lambda2,
        gamma1,
        gamma2,
        r,
    };
    let step = ode_step.unwrap_or(m.horizon / 1e4);
    if !(step > 0.0) {
        return Err(Error::domain("solve_tilde_bsde_deterministic", format!("ODE step {step}")));
    }
    let y = solve_tilde_ode(&ode, grid, &h, step)?;
    let steps = y[..grid.steps()].iter().map(|v| StepFit::constant(*v, m.d)).collect();
    let field = TildeField::new(m.d, steps, m.terminal.clone(), m.horizon)?;
    let diagnostics = Diagnostics {
        h_residual: h.residual(),
        ..Default::default()
    };
    Ok(TildeBackward {
        grid: grid.clone(),
        h,
        field,
        provenance: Provenance::DeterministicOde,
        diagnostics,
    })
}

/// Regression solution of the decoupled BSDE on the ensemble's grid.
pub fn solve_tilde_bsde_lsmc(
    m: &MarketModel,
    lambda2: &DiscountFunction,
    gamma1: f64,
    gamma2: f64,
    ens: &PathEnsemble,
    cfg: &LsmcConfig,
) -> Result<TildeBackward> {
    let grid = ens.grid();
    let (_, h) = rate_and_h(m, grid, gamma1, gamma2)?;
    let (field, d) = solve_lsmc(m, lambda2, gamma1, gamma2, &h, ens, cfg)?;
    // The first step regresses on a constant only, where R² is zero by construction.
    let rs = if d.r_squared.len() > 1 { &d.r_squared[1..] } else { &d.r_squared[..] };
    let diagnostics = Diagnostics {
        h_residual: h.residual(),
        r_squared_min: Some(rs.iter().copied().fold(f64::INFINITY, f64::min)),
        r_squared_mean: Some(rs.iter().sum::<f64>() / rs.len() as f64),
        condition_max: Some(d.condition_max),
        truncation_hits: d.truncation_hits,
        truncation_rate: d.truncation_rate,
        warnings: d.warnings,
    };
    Ok(TildeBackward {
        grid: grid.clone(),
        h,
        field,
        provenance: Provenance::Lsmc,
        diagnostics,
    })
}

/// Per-grid-point means over all paths; vector quantities use their first
/// coordinate (first untraded coordinate for the `𝓞` column).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMeans {
    pub xt: Vec<f64>,
    pub yt: Vec<f64>,
    pub zt_h: Vec<f64>,
    pub zt_o: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z_h: Vec<f64>,
}

/// Forward simulation output: means over the whole ensemble, `X̃_T` with its
/// standard error and the first `stored` paths in full.
#[derive(Clone, Debug)]
pub struct ForwardTilde {
    pub means: StepMeans,
    pub xt_terminal: Estimate,
    pub tilde: PathArrays,
}

const CHUNK: usize = 1024;
const FIELDS: usize = 7;

/// Simulates `X̃` from `h(0)x` along every path of `ens` and evaluates
/// `(Ỹ, Z̃)` from the solved field.
pub fn simulate_forward_tilde(sys: &TildeSystem, x: f64, ens: &PathEnsemble, stored: usize) -> Result<ForwardTilde> {
    if ens.grid() != &sys.grid {
        return Err(Error::State("forward simulation needs the solver grid".into()));
    }
    if !x.is_finite() {
        return Err(Error::domain("simulate_forward_tilde", format!("x = {x}")));
    }
    let d = sys.d();
    let d1 = sys.market.d1;
    let steps = sys.steps();
    let points = steps + 1;
    let n = ens.n_paths();
    let stored = stored.min(n);
    let x0 = sys.h.at(0) * x;

    type StoredPath = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
    struct Part {
        sums: Vec<f64>,
        terminal: Summary,
        paths: Vec<StoredPath>,
    }

    let parts: Vec<Result<Part>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut part = Part {
                sums: vec![0.0; points * FIELDS],
                terminal: Summary::new(),
                paths: Vec::new(),
            };
            let mut dw = vec![0.0; ens.path_len()];
            let mut w = vec![0.0; points * d];
            let mut xt = vec![0.0; points];
            let mut yt = vec![0.0; points];
            let mut zt = vec![0.0; points * d];
            let mut zs = [0.0; MAX_DIM];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                ens.increments(p, &mut dw);
                xt[0] = x0;
                for k in 0..steps {
                    for j in 0..d {
                        w[(k + 1) * d + j] = w[k * d + j] + dw[k * d + j];
                    }
                    xt[k + 1] = sys.step(k, xt[k], &w[k * d..(k + 1) * d], &dw[k * d..(k + 1) * d]);
                }
                if !xt[steps].is_finite() {
                    return Err(Error::numeric("simulate_forward_tilde", format!("non-finite state on path {p}")));
                }
                for k in 0..points {
                    let wk = &w[k * d..(k + 1) * d];
                    yt[k] = sys.y_tilde(k, wk);
                    sys.z_tilde(k, wk, &mut zt[k * d..(k + 1) * d]);
                    sys.z(k, wk, &mut zs);
                    let hk = sys.h.at(k);
                    let s = &mut part.sums[k * FIELDS..(k + 1) * FIELDS];
                    s[0] += xt[k];
                    s[1] += yt[k];
                    s[2] += zt[k * d];
                    s[3] += if d > d1 { zt[k * d + d1] } else { 0.0 };
                    s[4] += xt[k] / hk;
                    s[5] += yt[k] + (1.0 - 1.0 / hk) * xt[k];
                    s[6] += zs[0];
                }
                part.terminal.push(xt[steps]);
                if p < stored {
                    part.paths.push((p, xt.clone(), yt.clone(), zt.clone(), w.clone(), dw.clone()));
                }
            }
            Ok(part)
        })
        .collect();

    let mut sums = vec![0.0; points * FIELDS];
    let mut terminal = Summary::new();
    let mut tilde = PathArrays::zeros(stored, points, d);
    for part in parts {
        let part = part?;
        for (a, b) in sums.iter_mut().zip(&part.sums) {
            *a += b;
        }
        terminal.merge(&part.terminal);
        for (p, xt, yt, zt, w, dw) in part.paths {
            tilde.x[p * points..(p + 1) * points].copy_from_slice(&xt);
            tilde.y[p * points..(p + 1) * points].copy_from_slice(&yt);
            tilde.z[p * points * d..(p + 1) * points * d].copy_from_slice(&zt);
            tilde.w[p * points * d..(p + 1) * points * d].copy_from_slice(&w);
            tilde.dw[p * steps * d..(p + 1) * steps * d].copy_from_slice(&dw);
        }
    }
    let col = |i: usize| (0..points).map(|k| sums[k * FIELDS + i] / n as f64).collect();
    let means = StepMeans {
        xt: col(0),
        yt: col(1),
        zt_h: col(2),
        zt_o: col(3),
        x: col(4),
        y: col(5),
        z_h: col(6),
    };
    Ok(ForwardTilde {
        means,
        xt_terminal: terminal.estimate(),
        tilde,
    })
}

/// A solved equilibrium FBSDE: the decoupled system, ensemble means, and
/// stored paths in both coordinate systems.
#[derive(Clone, Debug)]
pub struct FbsdeSolution {
    pub system: TildeSystem,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
    pub x0: f64,
    pub n_paths: usize,
    pub means: StepMeans,
    pub xt_terminal: Estimate,
    pub tilde: PathArrays,
    pub state: PathArrays,
}

/// Exponential risk aversions `(γ₁, γ₂)`, or a domain error.
pub fn exponential_gammas(u1: &UtilityFunction, u2: &UtilityFunction) -> Result<(f64, f64)> {
    match (u1.gamma(), u2.gamma()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::domain("solve", "the FBSDE solver needs exponential utilities")),
    }
}

/// Full pipeline: `h`, the backward solve (RK4 for deterministic
/// coefficients, regression otherwise), forward simulation and untransform.
pub fn solve(
    m: &MarketModel,
    lambda2: &DiscountFunction,
    u1: &UtilityFunction,
    u2: &UtilityFunction,
    x0: f64,
    ens: &PathEnsemble,
    cfg: &SolverConfig,
) -> Result<FbsdeSolution> {
    let (g1, g2) = exponential_gammas(u1, u2)?;
    let back = if m.is_deterministic() && !cfg.force_lsmc {
        solve_tilde_bsde_deterministic(m, lambda2, g1, g2, ens.grid(), cfg.ode_step)?
    } else {
        solve_tilde_bsde_lsmc(m, lambda2, g1, g2, ens, &cfg.lsmc)?
    };
    let system = TildeSystem::new(m.clone(), lambda2, back.grid.clone(), back.h, back.field, g1, g2)?;
    let fwd = simulate_forward_tilde(&system, x0, ens, cfg.stored_paths)?;
    let state = untransform(&fwd.tilde, &system.h, m, &system.grid, g2)?;
    Ok(FbsdeSolution {
        provenance: back.provenance,
        diagnostics: back.diagnostics,
        x0,
        n_paths: ens.n_paths(),
        means: fwd.means,
        xt_terminal: fwd.xt_terminal,
        tilde: fwd.tilde,
        state,
        system,
    })
}

/// Sidecar metadata written next to the solution table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
    pub steps: usize,
    pub n_paths: usize,
    pub stored_paths: usize,
    pub x0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub r: f64,
    pub h0: f64,
    pub y_tilde0: f64,
    pub xt_terminal: Estimate,
}

/// Fixed 17-significant-digit rendering used in every table.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl FbsdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.system.grid
    }

    pub fn h(&self) -> &HSchedule {
        &self.system.h
    }

    pub fn meta(&self) -> SolutionMeta {
        SolutionMeta {
            provenance: self.provenance,
            diagnostics: self.diagnostics.clone(),
            steps: self.grid().steps(),
            n_paths: self.n_paths,
            stored_paths: self.tilde.n,
            x0: self.x0,
            gamma1: self.system.gamma1,
            gamma2: self.system.gamma2,
            r: self.system.h.r,
            h0: self.system.h.at(0),
            y_tilde0: self.means.yt[0],
            xt_terminal: self.xt_terminal,
        }
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "t,h,Ytilde_mean,Ztilde_H_mean,Ztilde_O_mean,X_mean,Y_mean,Z_H_mean")?;
        let m = &self.means;
        for (k, &t) in self.grid().times().iter().enumerate() {
            let row = [t, self.h().at(k), m.yt[k], m.zt_h[k], m.zt_o[k], m.x[k], m.y[k], m.z_h[k]];
            let cells: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.csv")))?);
        self.write_csv(&mut f)?;
        f.flush()?;
        let json = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }
}
