//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero when any of them fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use openloop::equilibrium::{
    condition_residuals, duality_martingale_check, equivalence_gap, extract_equilibrium, first_order_residuals,
    spike_variation_test, EquilibriumStrategy, EquivalenceConfig, SpikeConfig,
};
use openloop::fbsde::{
    h_closed_form, solve, solve_tilde_bsde_deterministic, solve_tilde_bsde_lsmc, FbsdeSolution, LsmcConfig,
    SolverConfig,
};
use openloop::market::{
    moment_bound_probe, ConstantStrategy, MarketModel, MomentProbeConfig, PathEnsemble, Preferences, Strategy,
    TimeGrid,
};
use openloop::preferences::{
    utility_class_check, validate_lambda, DiscountFunction, DiscountKind, Kappa, Marginals, TableConfig,
    UtilityFunction,
};
use openloop_cli::pipeline::run_solve;
use openloop_cli::{Context, Overrides};

type Outcome = Result<(bool, String), String>;

fn s1() -> MarketModel {
    MarketModel::constant(1.0, 0.0, 0.3, 0.05, 0.1).unwrap()
}

fn hyperbolic() -> DiscountFunction {
    DiscountFunction::hyperbolic(1.0, 1.0).unwrap()
}

fn exp2() -> UtilityFunction {
    UtilityFunction::exponential(2.0).unwrap()
}

fn s1_prefs() -> Preferences {
    Preferences {
        u1: exp2(),
        u2: exp2(),
        lambda1: hyperbolic(),
        lambda2: hyperbolic(),
    }
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn pair_on(m: &MarketModel, l2: &DiscountFunction, ens: &PathEnsemble) -> Result<(FbsdeSolution, EquilibriumStrategy), String> {
    let sol = solve(m, l2, &exp2(), &exp2(), 1.0, ens, &SolverConfig::default()).map_err(e)?;
    let pair = extract_equilibrium(&sol, &exp2(), &exp2(), l2).map_err(e)?;
    Ok((sol, pair))
}

/// Plain RK4 for `h' = h(ρh − r)` backward from `h(T) = 1`.
fn h_rk4(r: f64, rho: f64, n: usize) -> Vec<f64> {
    let f = |h: f64| h * (rho * h - r);
    let dt = -1.0 / n as f64;
    let mut h = vec![0.0; n + 1];
    h[n] = 1.0;
    for k in (0..n).rev() {
        let y = h[k + 1];
        let k1 = f(y);
        let k2 = f(y + 0.5 * dt * k1);
        let k3 = f(y + 0.5 * dt * k2);
        let k4 = f(y + dt * k3);
        h[k] = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    h
}

fn c1_h_schedule() -> Outcome {
    let n = 999;
    let mut worst = 0.0f64;
    for r in [0.0, 0.05, 0.1] {
        for rho in [0.5, 1.0, 2.0] {
            let reference = h_rk4(r, rho, n);
            for (k, h) in reference.iter().enumerate() {
                let t = k as f64 / n as f64;
                worst = worst.max((h_closed_form(t, r, 1.0, rho, 1.0).map_err(e)? - h).abs());
            }
        }
    }
    let mut gap = 0.0f64;
    for rho in [0.5, 1.0, 2.0] {
        for t in [0.0, 0.3, 0.7] {
            let a = h_closed_form(t, 0.0, 1.0, rho, 1.0).map_err(e)?;
            let b = h_closed_form(t, 1e-9, 1.0, rho, 1.0).map_err(e)?;
            gap = gap.max((a - b).abs());
        }
    }
    Ok((worst <= 1e-8 && gap <= 1e-5, format!("max |h - RK4| {worst:.2e}, r->0 gap {gap:.2e}")))
}

fn c2_closed_form() -> Outcome {
    let grid = TimeGrid::uniform(1.0, 160).map_err(e)?;
    let ens = PathEnsemble::new(grid.clone(), 1, 42, 10_000);
    let (_, pair) = pair_on(&s1(), &hyperbolic(), &ens)?;
    let mut pi_err = 0.0f64;
    let mut pi = [0.0];
    for k in 0..=grid.steps() {
        let h = h_closed_form(grid.t(k), 0.0, 2.0, 2.0, 1.0).map_err(e)?;
        pair.investment(k.min(grid.steps() - 1), 1.0, &[0.0], &mut pi);
        if k < grid.steps() {
            pi_err = pi_err.max((pi[0] - 0.3 / (2.0 * h)).abs());
        }
    }
    let m = MarketModel::constant(1.0, 0.0, 0.0, 0.0, 0.1).map_err(e)?;
    let back = solve_tilde_bsde_deterministic(&m, &DiscountFunction::none(1.0), 2.0, 2.0, &grid, None).map_err(e)?;
    let mut y_err = 0.0f64;
    for k in 0..=grid.steps() {
        let h = h_closed_form(grid.t(k), 0.0, 2.0, 2.0, 1.0).map_err(e)?;
        y_err = y_err.max((back.field.y(k, &[0.0]) - 0.1 * h).abs());
    }
    Ok((
        pi_err <= 1e-10 && y_err <= 1e-8,
        format!("max |pi* - theta/(gamma2 h)| {pi_err:.2e}, max |Ytilde - E h| {y_err:.2e}"),
    ))
}

fn c3_spike() -> Outcome {
    let m = s1();
    let grid = TimeGrid::uniform(1.0, 160).map_err(e)?;
    let ens = PathEnsemble::new(grid, 1, 42, 100_000);
    let (_, pair) = pair_on(&m, &hyperbolic(), &ens)?;
    let cfg = SpikeConfig {
        n_inner: 64,
        ..Default::default()
    };
    let eq = spike_variation_test(&pair, &m, &s1_prefs(), 1.0, &cfg, &ens).map_err(e)?;
    let flat = ConstantStrategy {
        consumption: 0.05,
        investment: vec![0.0],
    };
    let neg = spike_variation_test(&flat, &m, &s1_prefs(), 1.0, &cfg, &ens).map_err(e)?;
    let worst = eq
        .summaries
        .iter()
        .map(|s| s.intercept.mean / s.intercept.se.max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((
        eq.passed && !neg.passed && !neg.violations.is_empty(),
        format!(
            "equilibrium {} (largest intercept/SE {worst:.1}, first-order vanishes {}), flat control {} with {} cell(s) > 3 SE",
            if eq.passed { "passes" } else { "FAILS" },
            eq.first_order_vanishes,
            if neg.passed { "PASSES" } else { "fails" },
            neg.violations.len()
        ),
    ))
}

struct Shifted<'a>(&'a EquilibriumStrategy, f64);

impl Strategy for Shifted<'_> {
    fn consumption(&self, k: usize, x: f64, w: &[f64]) -> f64 {
        self.0.consumption(k, x, w) + self.1
    }

    fn investment(&self, k: usize, x: f64, w: &[f64], pi: &mut [f64]) {
        self.0.investment(k, x, w, pi)
    }

    fn adjoint(&self, k: usize, x: f64, w: &[f64], z: &mut [f64]) -> Option<f64> {
        self.0.adjoint(k, x, w, z)
    }

    fn grid(&self) -> Option<&TimeGrid> {
        self.0.grid()
    }

    fn label(&self) -> String {
        "shifted".into()
    }
}

fn c4_first_order() -> Outcome {
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 160).map_err(e)?, 1, 42, 10_000);
    let (sol, pair) = pair_on(&s1(), &hyperbolic(), &ens)?;
    let (u, l2) = (exp2(), hyperbolic());
    let rep = first_order_residuals(&pair, &sol, &u, &u, &l2).map_err(e)?;
    let dc = 0.01;
    let r = condition_residuals(&Shifted(&pair, dc), &sol, &u, &u, &l2).map_err(e)?;
    let st = &sol.state;
    let mut worst = 0.0f64;
    let mut smallest = f64::INFINITY;
    for p in 0..st.n {
        for k in 0..r.steps {
            let i = st.idx(p, k);
            let c = pair.consumption(k, st.x[i], st.w_at(p, k));
            let got = r.consumption[p * r.steps + k];
            smallest = smallest.min(got.abs());
            worst = worst.max((got / (u.d2(c).map_err(e)? * dc) - 1.0).abs());
        }
    }
    Ok((
        rep.passed && worst <= 0.1 && smallest > 1e-6,
        format!(
            "max residuals c {:.2e} pi {:.2e}; shifted c: Taylor rel. error {worst:.3}, min |residual| {smallest:.2e}",
            rep.consumption.max, rep.investment.max
        ),
    ))
}

fn c5_duality() -> Outcome {
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 160).map_err(e)?, 1, 42, 100_000);
    let (_, pair) = pair_on(&s1(), &hyperbolic(), &ens)?;
    let rep = duality_martingale_check(&pair, &s1(), &exp2(), 1.0, &ens, &[1000, 10_000, 100_000]).map_err(e)?;
    let sc = rep.scaling.as_ref().ok_or("no scaling section")?;
    Ok((
        rep.passed && sc.passed,
        format!(
            "gap {:.3e} (SE {:.3e}), SE*sqrt(n) {:?}, log-log slope {:.3}",
            rep.gap.mean,
            rep.gap.se,
            sc.se_sqrt_n.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            sc.slope
        ),
    ))
}

fn c6_lsmc() -> Outcome {
    let grid = TimeGrid::uniform(1.0, 50).map_err(e)?;
    let ens = PathEnsemble::new(grid.clone(), 1, 42, 100_000);
    let ode = solve_tilde_bsde_deterministic(&s1(), &hyperbolic(), 2.0, 2.0, &grid, None).map_err(e)?;
    let cfg = LsmcConfig {
        degree: 3,
        ..Default::default()
    };
    let lsmc = solve_tilde_bsde_lsmc(&s1(), &hyperbolic(), 2.0, 2.0, &ens, &cfg).map_err(e)?;
    let (a, b) = (ode.field.y(0, &[0.0]), lsmc.field.y(0, &[0.0]));
    let rate = lsmc.diagnostics.truncation_rate;
    Ok((
        (a - b).abs() <= 1e-2 && rate == 0.0,
        format!("Ytilde0 ODE {a:.6} LSMC {b:.6} (diff {:.2e}), truncation rate {rate}", (a - b).abs()),
    ))
}

fn c7_equivalence() -> Outcome {
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 100).map_err(e)?, 1, 42, 20_000);
    let (_, pair) = pair_on(&s1(), &hyperbolic(), &ens)?;
    let cfg = EquivalenceConfig::default();
    let rep = equivalence_gap(&pair, &s1(), &s1_prefs(), 1.0, &cfg, &ens).map_err(e)?;
    let failing = rep.rows.iter().filter(|r| !r.passed).count();

    let l = DiscountFunction::exponential(0.5, 1.0).map_err(e)?;
    let (_, pair) = pair_on(&s1(), &l, &ens)?;
    let prefs = Preferences {
        lambda1: l.clone(),
        lambda2: l.clone(),
        ..s1_prefs()
    };
    let exp = equivalence_gap(&pair, &s1(), &prefs, 1.0, &cfg, &ens).map_err(e)?;
    let identity = exp.exponential_identity.ok_or("identity not evaluated")?;
    Ok((
        rep.passed && rep.rows.len() == 100 && rep.first_order_passed == Some(true) && identity <= 1e-12,
        format!(
            "{} of {} candidates above 2 SE, first-order bound {}; exponential identity {identity:.2e}, verdicts agree {}",
            failing,
            rep.rows.len(),
            if rep.first_order_passed == Some(true) { "holds" } else { "violated" },
            exp.verdicts_agree
        ),
    ))
}

fn c8_moments() -> Outcome {
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 160).map_err(e)?, 1, 42, 100_000);
    let rep = moment_bound_probe(
        &s1(),
        &MomentProbeConfig {
            t: 0.0,
            kappa: 1.0,
            eta: vec![1.0],
            eps: vec![0.2, 0.1, 0.05, 0.025],
            gammas: vec![1.0, 2.0],
            exp_rate: 5.0,
            window_steps: 16,
            base_steps: 160,
        },
        &ens,
    )
    .map_err(e)?;
    let slopes: Vec<String> = rep
        .slopes
        .iter()
        .map(|s| format!("gamma {} slope {:.3}", s.gamma, s.slope.unwrap_or(f64::NAN)))
        .collect();
    let largest = rep.exp_moments.iter().map(|(_, m)| m.mean).fold(0.0f64, f64::max);
    Ok((
        rep.passed(),
        format!("{}; max E exp(5|xi_T|) {largest:.3}", slopes.join(", ")),
    ))
}

struct Convex;

impl Marginals for Convex {
    fn derivative(&self, x: f64, order: u8) -> openloop::Result<f64> {
        Ok(match order {
            1 => x.exp(),
            2 => x.exp(),
            _ => 0.0,
        })
    }
}

fn c9_validation() -> Outcome {
    let kinds = [
        DiscountKind::Exponential { delta: 0.5 },
        DiscountKind::Mixture {
            alpha: 0.4,
            delta: 0.5,
            gamma_rate: 2.0,
        },
        DiscountKind::QuasiExponential { alpha: 0.5, delta: 1.0 },
        DiscountKind::Hyperbolic { delta: 1.0 },
        DiscountKind::RefDependent {
            times: vec![0.0, 1.0],
            rates: vec![0.5, 1.0],
        },
    ];
    let mut families = 0;
    for k in kinds {
        if DiscountFunction::new(k, 1.0).map_err(e)?.validate(200).passed {
            families += 1;
        }
    }
    let exp = utility_class_check(&exp2(), "exponential", -10.0, 10.0, 401);
    let fi = UtilityFunction::fromm_imkeller(Kappa::softplus_shift(), TableConfig::default()).map_err(e)?;
    let fi = utility_class_check(&fi, "fromm-imkeller", -20.0, 20.0, 401);
    let broken_diag = validate_lambda("diag", |t: f64, s: f64| 0.9 / (1.0 + s - t), 1.0, 64);
    let jump = validate_lambda("jump", |t: f64, s: f64| if s - t > 0.3 { 0.5 } else { 1.0 }, 1.0, 128);
    let convex = utility_class_check(&Convex, "convex", -2.0, 2.0, 41);
    let flagged = [!broken_diag.passed, !jump.passed, !convex.passed];
    Ok((
        families == 5 && exp.passed && fi.passed && flagged.iter().all(|f| *f),
        format!(
            "{families}/5 discount families pass, exponential {} fromm-imkeller {}, engineered violations flagged {}/3",
            exp.passed,
            fi.passed,
            flagged.iter().filter(|f| **f).count()
        ),
    ))
}

fn c10_determinism() -> Outcome {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/s1.json");
    let dir = tempfile::tempdir().map_err(e)?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let ov = Overrides {
            out: Some(dir.path().join(run)),
            ..Default::default()
        };
        reports.push(run_solve(&Context::load(&cfg, &ov).map_err(e)?).map_err(e)?);
    }
    let mut identical = true;
    for f in &reports[0].artifacts {
        let a = std::fs::read(dir.path().join("a").join(f)).map_err(e)?;
        let b = std::fs::read(dir.path().join("b").join(f)).map_err(e)?;
        identical &= a == b;
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).map_err(e)?).map_err(e)?;
    let embedded = json["config_hash"].as_str().is_some_and(|h| h.len() == 64) && json["seed"] == 42;
    Ok((
        identical && embedded,
        format!(
            "{} artifacts byte-identical: {identical}; report carries hash {} and seed {}",
            reports[0].artifacts.len(),
            &reports[0].config_hash[..12],
            reports[0].seed
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, c1_h_schedule),
        (2, c2_closed_form),
        (3, c3_spike),
        (4, c4_first_order),
        (5, c5_duality),
        (6, c6_lsmc),
        (7, c7_equivalence),
        (8, c8_moments),
        (9, c9_validation),
        (10, c10_determinism),
    ];
    let mut all = true;
    for (n, f) in criteria {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(msg) => (false, format!("error: {msg}")),
        };
        all &= ok;
        println!(
            "criterion {n:>2}: {} | {detail} | {:.1} s",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
