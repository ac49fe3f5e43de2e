use openloop::fbsde::{
    fbsde_residual_check, simulate_forward_tilde, solve, solve_tilde_bsde_deterministic,
    solve_tilde_bsde_lsmc, transform, untransform, LsmcConfig, Provenance, SolverConfig,
    TildeSystem,
};
use openloop::market::{Coefficient, MarketModel, PathEnsemble, TimeGrid};
use openloop::preferences::{DiscountFunction, UtilityFunction};
use openloop::quadrature::GaussLegendre;
use openloop::stats::Summary;

fn s1() -> MarketModel {
    MarketModel::constant(1.0, 0.0, 0.3, 0.05, 0.1).unwrap()
}

fn hyperbolic() -> DiscountFunction {
    DiscountFunction::hyperbolic(1.0, 1.0).unwrap()
}

fn exp2() -> UtilityFunction {
    UtilityFunction::exponential(2.0).unwrap()
}

// Explicit benchmark solution, see the derivation in the ODE unit tests.
fn y_tilde_s1(t: f64) -> f64 {
    let tau = 1.0 - t;
    let v = 0.1 + 0.0225 * (tau + 0.5 * tau * tau) + 0.05 * tau
        - 0.5 * ((1.0 + tau) * (1.0 + tau).ln() - tau);
    v / (1.0 + tau)
}

#[test]
fn lsmc_agrees_with_ode_on_deterministic_inputs() {
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let ens = PathEnsemble::new(grid.clone(), 1, 42, 100_000);
    let ode = solve_tilde_bsde_deterministic(&s1(), &hyperbolic(), 2.0, 2.0, &grid, None).unwrap();
    let lsmc = solve_tilde_bsde_lsmc(&s1(), &hyperbolic(), 2.0, 2.0, &ens, &LsmcConfig::default()).unwrap();
    let (a, b) = (ode.field.y(0, &[0.0]), lsmc.field.y(0, &[0.0]));
    assert!((a - b).abs() <= 1e-2, "ode {a} lsmc {b}");
    assert_eq!(lsmc.diagnostics.truncation_rate, 0.0);
    assert_eq!(lsmc.provenance, Provenance::Lsmc);
}

#[test]
fn lsmc_vanishing_driver_is_plain_expectation() {
    let m = MarketModel::new(
        1.0,
        1,
        1,
        0.0.into(),
        vec![0.0.into()],
        0.0.into(),
        Coefficient::Tanh {
            level: 0.1,
            amplitude: 0.2,
            coordinate: 0,
            scale: 0.5,
        },
        None,
    )
    .unwrap();
    let grid = TimeGrid::uniform(1.0, 20).unwrap();
    let ens = PathEnsemble::new(grid, 1, 7, 20_000);
    let sol = solve_tilde_bsde_lsmc(&m, &DiscountFunction::none(1.0), 1e6, 1.0, &ens, &LsmcConfig::default())
        .unwrap();
    let mut dw = vec![0.0; ens.path_len()];
    let mc: Summary = (0..ens.n_paths())
        .map(|p| {
            ens.increments(p, &mut dw);
            m.terminal(&[dw.iter().sum()])
        })
        .collect();
    let e = mc.estimate();
    let y0 = sol.field.y(0, &[0.0]);
    assert!((y0 - e.mean).abs() <= 3.0 * e.se, "{y0} vs {} ± {}", e.mean, e.se);
    assert!((y0 - 0.1).abs() <= 3.0 * e.se);
}

#[test]
fn lsmc_zero_data() {
    let m = MarketModel::constant(1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 20).unwrap(), 1, 3, 5000);
    let sol = solve_tilde_bsde_lsmc(&m, &DiscountFunction::none(1.0), 1.5, 1.5, &ens, &LsmcConfig::default())
        .unwrap();
    let mut z = [0.0];
    for k in 0..20 {
        for w in [-2.0, 0.0, 1.3] {
            assert!(sol.field.y(k, &[w]).abs() <= 1e-3);
            sol.field.z(k, &[w], &mut z);
            assert!(z[0].abs() <= 1e-3);
        }
    }
}

#[test]
fn lsmc_incomplete_market_runs_with_diagnostics() {
    let m = MarketModel::new(
        1.0,
        2,
        1,
        0.02.into(),
        vec![
            Coefficient::Tanh {
                level: 0.3,
                amplitude: 0.1,
                coordinate: 1,
                scale: 1.0,
            },
            0.0.into(),
        ],
        0.05.into(),
        Coefficient::Tanh {
            level: 0.1,
            amplitude: 0.3,
            coordinate: 1,
            scale: 0.7,
        },
        None,
    )
    .unwrap();
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 25).unwrap(), 2, 5, 20_000);
    let sol = solve_tilde_bsde_lsmc(&m, &hyperbolic(), 2.0, 2.0, &ens, &LsmcConfig::default()).unwrap();
    let d = &sol.diagnostics;
    assert_eq!(d.truncation_rate, 0.0);
    assert!(d.r_squared_min.unwrap() > 0.3 && d.r_squared_mean.unwrap() > 0.7, "{d:?}");
    // The untraded factor carries the terminal risk, so Z̃^𝓞 is visibly non-zero.
    let mut z = [0.0; 2];
    sol.field.z(20, &[0.0, 0.0], &mut z);
    assert!(z[1] > 0.05, "{z:?}");
}

#[test]
fn lsmc_condition_guard_names_the_step() {
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, 10).unwrap(), 1, 1, 50);
    let cfg = LsmcConfig {
        degree: 6,
        cond_max: 10.0,
        ..LsmcConfig::default()
    };
    let err = solve_tilde_bsde_lsmc(&s1(), &hyperbolic(), 2.0, 2.0, &ens, &cfg).unwrap_err();
    assert!(err.to_string().contains("step 9"), "{err}");
}

fn system(m: &MarketModel, l2: &DiscountFunction, steps: usize) -> TildeSystem {
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let b = solve_tilde_bsde_deterministic(m, l2, 2.0, 2.0, &grid, None).unwrap();
    TildeSystem::new(m.clone(), l2, grid, b.h, b.field, 2.0, 2.0).unwrap()
}

#[test]
fn forward_zero_data_is_constant() {
    let m = MarketModel::constant(1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
    let sys = system(&m, &DiscountFunction::none(1.0), 40);
    let ens = PathEnsemble::new(sys.grid.clone(), 1, 9, 16);
    let f = simulate_forward_tilde(&sys, 1.0, &ens, 16).unwrap();
    assert!(f.tilde.x.iter().all(|v| *v == 0.5));
}

#[test]
fn forward_mean_matches_ode_propagation() {
    let sys = system(&s1(), &hyperbolic(), 50);
    let ens = PathEnsemble::new(sys.grid.clone(), 1, 42, 100_000);
    let f = simulate_forward_tilde(&sys, 1.0, &ens, 0).unwrap();
    let drift = |s: f64| {
        let h = 1.0 / (2.0 - s);
        let l = (1.0 / (2.0 - s)).ln();
        -h * y_tilde_s1(s) + 0.09 / 2.0 + 0.05 * h + 0.5 * h * l
    };
    let oracle = 0.5 + GaussLegendre::new(32).integrate(drift, 0.0, 1.0);
    let e = f.xt_terminal;
    assert!((e.mean - oracle).abs() <= 3.0 * e.se, "{} vs {oracle} ± {}", e.mean, e.se);
}

#[test]
fn forward_is_affine_in_initial_wealth() {
    let sys = system(&s1(), &hyperbolic(), 30);
    let ens = PathEnsemble::new(sys.grid.clone(), 1, 4, 64);
    let a = simulate_forward_tilde(&sys, 0.0, &ens, 64).unwrap();
    let b = simulate_forward_tilde(&sys, 1.0, &ens, 64).unwrap();
    for (u, v) in a.tilde.x.iter().zip(&b.tilde.x) {
        assert!((v - u - 0.5).abs() < 1e-12);
    }
}

fn solved(m: &MarketModel, l2: &DiscountFunction, steps: usize, n: usize, seed: u64) -> openloop::fbsde::FbsdeSolution {
    let ens = PathEnsemble::new(TimeGrid::uniform(1.0, steps).unwrap(), m.d, seed, n);
    solve(m, l2, &exp2(), &exp2(), 1.0, &ens, &SolverConfig::default()).unwrap()
}

#[test]
fn untransform_round_trip_and_closed_forms() {
    let sol = solved(&s1(), &hyperbolic(), 50, 200, 42);
    let grid = sol.grid().clone();
    let back = transform(&sol.state, sol.h(), &s1(), &grid, 2.0).unwrap();
    for (a, b) in back.x.iter().zip(&sol.tilde.x) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in back.y.iter().zip(&sol.tilde.y) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in back.z.iter().zip(&sol.tilde.z) {
        assert!((a - b).abs() <= 1e-12);
    }
    let again = untransform(&back, sol.h(), &s1(), &grid, 2.0).unwrap();
    assert!(again.x.iter().zip(&sol.state.x).all(|(a, b)| (a - b).abs() <= 1e-12));
    for p in 0..sol.state.n {
        let last = sol.state.idx(p, 50);
        assert_eq!(sol.state.x[last], sol.tilde.x[last]);
        assert_eq!(sol.state.y[last], sol.tilde.y[last]);
        assert_eq!(sol.state.y[last], 0.1);
        for k in 0..=50 {
            let h = sol.h().at(k);
            let want = (1.0 - 1.0 / h) * 0.3 / 2.0;
            assert!((sol.state.z_at(p, k)[0] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn residuals_zero_data() {
    let m = MarketModel::constant(1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
    let l2 = DiscountFunction::none(1.0);
    let sol = solved(&m, &l2, 40, 50, 1);
    let r = fbsde_residual_check(&sol.state, &m, &l2, &exp2(), &exp2(), sol.grid()).unwrap();
    for s in [r.forward_drift, r.backward_drift, r.forward_diffusion, r.backward_diffusion] {
        assert!(s.max <= 1e-10, "{r:?}");
    }
    assert!(!r.terminal_mismatch);
}

#[test]
fn residuals_converge_at_first_order() {
    let coarse = solved(&s1(), &hyperbolic(), 50, 2000, 42);
    let fine = solved(&s1(), &hyperbolic(), 100, 2000, 42);
    let check = |s: &openloop::fbsde::FbsdeSolution| {
        fbsde_residual_check(&s.state, &s1(), &hyperbolic(), &exp2(), &exp2(), s.grid()).unwrap()
    };
    let (a, b) = (check(&coarse), check(&fine));
    let fwd = a.forward_drift.mean / b.forward_drift.mean;
    let bwd = a.backward_drift.mean / b.backward_drift.mean;
    assert!((1.6..2.5).contains(&fwd), "forward ratio {fwd}");
    assert!((1.6..2.5).contains(&bwd), "backward ratio {bwd}");
    assert!(a.forward_drift.max < 0.05);
    assert!(!a.terminal_mismatch);
}

#[test]
fn residuals_flag_corrupted_terminal() {
    let mut sol = solved(&s1(), &hyperbolic(), 20, 20, 3);
    for y in sol.state.y.iter_mut() {
        *y += 0.1;
    }
    let r = fbsde_residual_check(&sol.state, &s1(), &hyperbolic(), &exp2(), &exp2(), sol.grid()).unwrap();
    assert!(r.terminal_mismatch);
    assert!((r.terminal_max - 0.1).abs() < 1e-12);
}

#[test]
fn solution_csv_is_deterministic_and_terminal_holds() {
    let a = solved(&s1(), &hyperbolic(), 20, 500, 8);
    let b = solved(&s1(), &hyperbolic(), 20, 500, 8);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_csv(&mut x).unwrap();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("t,h,Ytilde_mean,Ztilde_H_mean,Ztilde_O_mean,X_mean,Y_mean,Z_H_mean\n"));
    assert_eq!(text.lines().count(), 22);
    assert!((a.means.yt[20] - 0.1).abs() < 1e-14);
    assert_eq!(a.provenance, Provenance::DeterministicOde);
    let meta = serde_json::to_value(a.meta()).unwrap();
    assert_eq!(meta["provenance"], "deterministic-ODE");
}
