use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Coefficient;

pub const MAX_DIM: usize = 16;
pub const MAX_DEGREE: usize = 6;
pub const MAX_TERMS: usize = 64;

/// Tensor products of probabilists' Hermite polynomials in `W_t/√t`,
/// all multi-indices of total degree at most `degree`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    d: usize,
    degree: usize,
    exps: Vec<Vec<u8>>,
}

impl Basis {
    pub fn new(d: usize, degree: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM || degree > MAX_DEGREE {
            return Err(Error::domain(
                "basis",
                format!("need 1 <= d <= {MAX_DIM} and degree <= {MAX_DEGREE}, got d = {d}, degree = {degree}"),
            ));
        }
        let mut exps = Vec::new();
        for total in 0..=degree {
            let mut cur = vec![0u8; d];
            collect(&mut exps, &mut cur, 0, total);
        }
        if exps.len() > MAX_TERMS {
            return Err(Error::domain(
                "basis",
                format!("{} terms exceed the limit of {MAX_TERMS}", exps.len()),
            ));
        }
        Ok(Self { d, degree, exps })
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Writes the basis at `W = w` into `out[..len]`, with `u = w / scale`.
    #[inline]
    pub fn eval(&self, w: &[f64], scale: f64, out: &mut [f64]) {
        if self.degree == 0 {
            out[0] = 1.0;
            return;
        }
        let mut he = [[0.0f64; MAX_DEGREE + 1]; MAX_DIM];
        for j in 0..self.d {
            let u = w[j] / scale;
            he[j][0] = 1.0;
            he[j][1] = u;
            for n in 1..self.degree {
                he[j][n + 1] = u * he[j][n] - n as f64 * he[j][n - 1];
            }
        }
        for (o, e) in out.iter_mut().zip(&self.exps) {
            let mut v = 1.0;
            for (j, &p) in e.iter().enumerate() {
                if p > 0 {
                    v *= he[j][p as usize];
                }
            }
            *o = v;
        }
    }
}

fn collect(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, j: usize, left: usize) {
    if j + 1 == cur.len() {
        cur[j] = left as u8;
        out.push(cur.clone());
        return;
    }
    for p in (0..=left).rev() {
        cur[j] = p as u8;
        collect(out, cur, j + 1, left - p);
    }
}

/// Regression coefficients of `Ỹ` and `Z̃` on one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFit {
    pub degree: usize,
    pub scale: f64,
    pub y: Vec<f64>,
    /// `d` rows of basis coefficients.
    pub z: Vec<f64>,
}

impl StepFit {
    pub fn constant(y: f64, d: usize) -> Self {
        Self {
            degree: 0,
            scale: 1.0,
            y: vec![y],
            z: vec![0.0; d],
        }
    }
}

/// `(Ỹ, Z̃)` as functions of `(t_k, W_{t_k})` on the solver grid.
/// `Ỹ_N` is the terminal condition; `Z̃_N` reuses the last step's fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TildeField {
    pub d: usize,
    pub steps: Vec<StepFit>,
    pub terminal: Coefficient,
    pub horizon: f64,
    bases: Vec<Basis>,
}

impl TildeField {
    pub fn new(d: usize, steps: Vec<StepFit>, terminal: Coefficient, horizon: f64) -> Result<Self> {
        let top = steps.iter().map(|s| s.degree).max().unwrap_or(0);
        let bases = (0..=top).map(|p| Basis::new(d, p)).collect::<Result<Vec<_>>>()?;
        for (k, s) in steps.iter().enumerate() {
            let nb = bases[s.degree].len();
            if s.y.len() != nb || s.z.len() != nb * d {
                return Err(Error::State(format!("field step {k}: coefficient shape mismatch")));
            }
        }
        Ok(Self {
            d,
            steps,
            terminal,
            horizon,
            bases,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// True when every step is a constant fit, so `(Ỹ, Z̃)` do not depend on `W`.
    pub fn is_deterministic(&self) -> bool {
        self.steps.iter().all(|s| s.degree == 0) && self.terminal.is_deterministic()
    }

    #[inline]
    fn phi(&self, s: &StepFit, w: &[f64], buf: &mut [f64; MAX_TERMS]) -> usize {
        let b = &self.bases[s.degree];
        b.eval(w, s.scale, buf);
        b.len()
    }

    pub fn y(&self, k: usize, w: &[f64]) -> f64 {
        if k >= self.steps.len() {
            return self.terminal.eval(self.horizon, w);
        }
        let s = &self.steps[k];
        let mut buf = [0.0; MAX_TERMS];
        let nb = self.phi(s, w, &mut buf);
        s.y.iter().zip(&buf[..nb]).map(|(c, p)| c * p).sum()
    }

    /// Writes `Z̃_k(w)` into `out[..d]`.
    pub fn z(&self, k: usize, w: &[f64], out: &mut [f64]) {
        let s = &self.steps[k.min(self.steps.len() - 1)];
        let mut buf = [0.0; MAX_TERMS];
        let nb = self.phi(s, w, &mut buf);
        for (j, o) in out[..self.d].iter_mut().enumerate() {
            *o = s.z[j * nb..(j + 1) * nb]
                .iter()
                .zip(&buf[..nb])
                .map(|(c, p)| c * p)
                .sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_counts() {
        assert_eq!(Basis::new(1, 3).unwrap().len(), 4);
        assert_eq!(Basis::new(2, 3).unwrap().len(), 10);
        assert_eq!(Basis::new(3, 2).unwrap().len(), 10);
        assert!(Basis::new(8, 6).is_err());
    }

    #[test]
    fn hermite_values() {
        let b = Basis::new(1, 3).unwrap();
        let mut out = [0.0; 4];
        b.eval(&[2.0], 1.0, &mut out);
        assert_eq!(out, [1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn hermite_orthogonality_by_quadrature() {
        let gl = crate::quadrature::GaussLegendre::new(64);
        let b = Basis::new(1, 4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let v = gl.integrate(
                    |u| {
                        let mut out = [0.0; 5];
                        b.eval(&[u], 1.0, &mut out);
                        out[i] * out[j] * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
                    },
                    -12.0,
                    12.0,
                );
                let want = if i == j { (1..=i).product::<usize>() as f64 } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "{i} {j} {v}");
            }
        }
    }
}
