use super::h::HSchedule;
use crate::error::{Error, Result};
use crate::market::{MarketModel, TimeGrid};
use crate::preferences::DiscountFunction;

/// One classical RK4 step of `y' = f(t, y)` from `(t, y)` over `dt` (may be negative).
#[inline]
pub fn rk4_step(f: impl Fn(f64, f64) -> f64, t: f64, y: f64, dt: f64) -> f64 {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1);
    let k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2);
    let k4 = f(t + dt, y + dt * k3);
    y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates from `(t_end, y_end)` back to `t_start` with steps no longer than `step`.
pub fn rk4_backward(f: impl Fn(f64, f64) -> f64, t_end: f64, y_end: f64, t_start: f64, step: f64) -> f64 {
    let n = ((t_end - t_start) / step).ceil().max(1.0) as usize;
    let dt = (t_end - t_start) / n as f64;
    let mut y = y_end;
    for i in 0..n {
        let t = t_end - i as f64 * dt;
        y = rk4_step(&f, t, y, -dt);
    }
    y
}

/// Right-hand side of the backward equation for `Ỹ` when `Z̃ = 0`:
/// `ρhỸ − |θ^𝓗|²/(2γ₂) − h e − (h/γ₁) log(ρλ₂(s,T)) + r/γ₂`.
pub struct TildeOde<'a> {
    pub market: &'a MarketModel,
    pub lambda2: &'a DiscountFunction,
    pub gamma1: f64,
    pub gamma2: f64,
    pub r: f64,
}

impl TildeOde<'_> {
    pub fn rhs(&self, s: f64, y: f64) -> f64 {
        let rho = self.gamma2 / self.gamma1;
        let h = super::h::h_closed_form(s.clamp(0.0, self.market.horizon), self.r, self.gamma1, self.gamma2, self.market.horizon)
            .unwrap_or(f64::NAN);
        let theta2: f64 = self.market.theta[..self.market.d1]
            .iter()
            .map(|c| c.eval(s, &[]).powi(2))
            .sum();
        let e = self.market.income.eval(s, &[]);
        let l = (rho * self.lambda2.eval(s, self.market.horizon)).ln();
        rho * h * y - theta2 / (2.0 * self.gamma2) - h * e - h / self.gamma1 * l + self.r / self.gamma2
    }
}

/// `Ỹ` at every grid point for deterministic coefficients, by RK4 with
/// sub-steps no longer than `step` inside each grid interval.
pub fn solve_tilde_ode(ode: &TildeOde<'_>, grid: &TimeGrid, h: &HSchedule, step: f64) -> Result<Vec<f64>> {
    let m = ode.market;
    if !m.is_deterministic() {
        return Err(Error::domain("solve_tilde_bsde_deterministic", "coefficients must be deterministic"));
    }
    for &t in grid.times() {
        let l = ode.lambda2.eval(t, m.horizon);
        if !(l > 0.0) {
            return Err(Error::domain("solve_tilde_bsde_deterministic", format!("lambda2({t}, T) = {l}")));
        }
    }
    debug_assert_eq!(h.values.len(), grid.times().len());
    let n = grid.steps();
    let mut y = vec![0.0; n + 1];
    y[n] = m.terminal(&vec![0.0; m.d]);
    for k in (0..n).rev() {
        y[k] = rk4_backward(|s, v| ode.rhs(s, v), grid.t(k + 1), y[k + 1], grid.t(k), step);
        if !y[k].is_finite() {
            return Err(Error::numeric("solve_tilde_bsde_deterministic", format!("non-finite value at step {k}")));
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::market::Coefficient;

    fn market(theta: f64, e: f64, terminal: f64) -> MarketModel {
        MarketModel::constant(1.0, 0.0, theta, e, terminal).unwrap()
    }

    fn solve(m: &MarketModel, l2: &DiscountFunction, steps: usize, step: f64) -> (TimeGrid, Vec<f64>) {
        let g = TimeGrid::uniform(1.0, steps).unwrap();
        let h = HSchedule::new(&g, 0.0, 2.0, 2.0).unwrap();
        let ode = TildeOde { market: m, lambda2: l2, gamma1: 2.0, gamma2: 2.0, r: 0.0 };
        let y = solve_tilde_ode(&ode, &g, &h, step).unwrap();
        (g, y)
    }

    #[test]
    fn degenerate_case_is_terminal_times_h() {
        let m = market(0.0, 0.0, 0.1);
        let (g, y) = solve(&m, &DiscountFunction::none(1.0), 100, 1e-4);
        assert!((y[0] - 0.05).abs() < 1e-10);
        for (k, &t) in g.times().iter().enumerate() {
            assert!((y[k] - 0.1 / (2.0 - t)).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let m = market(0.0, 0.0, 0.0);
        let (_, y) = solve(&m, &DiscountFunction::none(1.0), 20, 1e-3);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    // With ρ = 1, h = 1/(1+τ) and λ₂ = 1/(1+τ), (1+τ)Ỹ has an explicit
    // derivative, so Ỹ_t = [E + a(τ + τ²/2) + eτ − ½((1+τ)ln(1+τ) − τ)]/(1+τ).
    fn benchmark_oracle(t: f64) -> f64 {
        let (a, e, big_e) = (0.09 / 4.0, 0.05, 0.1);
        let tau = 1.0 - t;
        let v = big_e + a * (tau + 0.5 * tau * tau) + e * tau - 0.5 * ((1.0 + tau) * (1.0 + tau).ln() - tau);
        v / (1.0 + tau)
    }

    #[test]
    fn benchmark_matches_explicit_integral() {
        let m = market(0.3, 0.05, 0.1);
        let l2 = DiscountFunction::hyperbolic(1.0, 1.0).unwrap();
        let (g, y) = solve(&m, &l2, 50, 1e-4);
        assert!((y[0] - (0.68375 - 2f64.ln()) / 2.0).abs() < 1e-12);
        for (k, &t) in g.times().iter().enumerate() {
            assert!((y[k] - benchmark_oracle(t)).abs() < 1e-12, "{t}");
        }
        let (_, fine) = solve(&m, &l2, 50, 1e-5);
        assert!((y[0] - fine[0]).abs() < 1e-8);
    }

    #[test]
    fn rejects_random_or_nonpositive_inputs() {
        let mut m = market(0.3, 0.0, 0.0);
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let h = HSchedule::new(&g, 0.0, 1.0, 1.0).unwrap();
        let l2 = DiscountFunction::none(1.0);
        m.theta[0] = Coefficient::Tanh { level: 0.1, amplitude: 0.1, coordinate: 0, scale: 1.0 };
        let ode = TildeOde { market: &m, lambda2: &l2, gamma1: 1.0, gamma2: 1.0, r: 0.0 };
        assert!(solve_tilde_ode(&ode, &g, &h, 1e-3).is_err());
    }

    #[test]
    fn rk4_exponential_decay() {
        let y = rk4_backward(|_, y| y, 1.0, 1.0, 0.0, 1e-3);
        assert!((y - (-1f64).exp()).abs() < 1e-13);
    }
}
