//! Equilibrium extraction and verification: first-order conditions, spike
//! variations, the adjoint martingale and the time-consistent reward.

mod admissibility;
mod duality;
mod equivalence;
mod extract;
mod first_order;
mod report;
mod spike;
mod table;

pub use admissibility::{
    admissibility_probe, AdmissibilityConfig, AdmissibilityReport, H0Report, H1Report, H2Report,
    RiemannLadder,
};
pub use duality::{duality_martingale_check, DualityReport, SeScaling};
pub use equivalence::{equivalence_gap, CandidateRow, EquivalenceConfig, EquivalenceReport};
pub use extract::{extract_equilibrium, EquilibriumStrategy};
pub use first_order::{
    condition_residuals, first_order_residuals, AbsStats, ConditionResiduals, FirstOrderReport,
};
pub use report::EquilibriumReport;
pub use spike::{spike_variation_test, Direction, SpikeCell, SpikeConfig, SpikeReport, SpikeSummary};
pub use table::{strategy_table, StrategyTable};

use crate::error::{Error, Result};
use crate::market::{Strategy, TimeGrid};

fn check_grid(pair: &dyn Strategy, grid: &TimeGrid) -> Result<()> {
    match pair.grid() {
        Some(g) if g != grid => Err(Error::Grid(format!(
            "strategy '{}' lives on a {}-step grid, simulation uses {} steps",
            pair.label(),
            g.steps(),
            grid.steps()
        ))),
        _ => Ok(()),
    }
}
