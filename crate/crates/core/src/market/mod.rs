//! Market coefficients, path simulation and reward functionals.

mod ensemble;
mod grid;
mod model;
mod moments;
mod reward;
mod simulate;
mod strategy;

pub use ensemble::{InnerNoise, PathEnsemble};
pub use grid::TimeGrid;
pub use model::{Bounds, Coefficient, MarketModel};
pub use moments::{moment_bound_probe, MomentProbeConfig, MomentReport, MomentRow, SlopeFit};
pub use reward::{
    path_value, reward_c, reward_r, reward_r_conditional, step_weights, Preferences,
    RewardEstimate,
};
pub use simulate::{
    perturbation_path, simulate_path, simulate_perturbation, simulate_wealth, PathRecord,
    PerturbationSpec, WealthPaths,
};
pub use strategy::{euler_step, ConstantStrategy, ScheduleStrategy, Strategy};
