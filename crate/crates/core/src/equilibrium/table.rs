use std::io::Write;

use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::Result;
use crate::fbsde::fmt17;
use crate::market::{simulate_path, MarketModel, PathEnsemble, PathRecord, Strategy};
use crate::parallel::par_map;

const CHUNK: usize = 1024;

/// Ensemble means of the controls of a pair at every step `k < N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub d1: usize,
    pub times: Vec<f64>,
    pub c_mean: Vec<f64>,
    /// `d1` entries per step.
    pub pi_mean: Vec<f64>,
}

impl StrategyTable {
    /// Columns `t, c_star_mean, pi_star_1..d1`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut header = vec!["t".to_string(), "c_star_mean".to_string()];
        header.extend((1..=self.d1).map(|j| format!("pi_star_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for (k, &t) in self.times.iter().enumerate() {
            let mut row = vec![fmt17(t), fmt17(self.c_mean[k])];
            row.extend(self.pi_mean[k * self.d1..(k + 1) * self.d1].iter().map(|v| fmt17(*v)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates the pair on every path of the ensemble and averages `c` and
/// the traded part of `π` per step.
pub fn strategy_table(pair: &dyn Strategy, m: &MarketModel, x0: f64, ens: &PathEnsemble) -> Result<StrategyTable> {
    let grid = ens.grid();
    check_grid(pair, grid)?;
    let (d, d1, n) = (m.d, m.d1, grid.steps());
    let paths = ens.n_paths();
    let w0 = vec![0.0; d];
    let chunks = par_map(
        paths.div_ceil(CHUNK),
        || (vec![0.0; ens.path_len()], PathRecord::new()),
        |(dw, rec), i| {
            let mut c = vec![0.0; n];
            let mut pi = vec![0.0; n * d1];
            for p in i * CHUNK..((i + 1) * CHUNK).min(paths) {
                ens.increments(p, dw);
                simulate_path(m, pair, grid, 0, x0, &w0, dw, p, rec)?;
                for k in 0..n {
                    c[k] += rec.c[k];
                    for j in 0..d1 {
                        pi[k * d1 + j] += rec.pi[k * d + j];
                    }
                }
            }
            Ok((c, pi))
        },
    )?;
    let mut c_mean = vec![0.0; n];
    let mut pi_mean = vec![0.0; n * d1];
    for (c, pi) in &chunks {
        c_mean.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        pi_mean.iter_mut().zip(pi).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / paths as f64;
    c_mean.iter_mut().chain(pi_mean.iter_mut()).for_each(|v| *v *= scale);
    Ok(StrategyTable {
        d1,
        times: grid.times()[..n].to_vec(),
        c_mean,
        pi_mean,
    })
}
