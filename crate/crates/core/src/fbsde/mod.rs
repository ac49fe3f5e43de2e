//! Exponential-utility FBSDE: the decoupling factor `h`, backward solvers for
//! the transformed system, forward simulation and the map back.

mod basis;
mod h;
mod lsmc;
mod ode;
mod residual;
mod solution;
mod system;
mod transform;

pub use basis::{Basis, StepFit, TildeField};
pub use h::{h_closed_form, h_rhs, HSchedule};
pub use lsmc::{LsmcConfig, LsmcDiagnostics};
pub use ode::{rk4_backward, rk4_step, TildeOde};
pub use residual::{fbsde_residual_check, ResidualReport, ResidualStats};
pub use solution::{
    exponential_gammas, fmt17, simulate_forward_tilde, solve, solve_tilde_bsde_deterministic,
    solve_tilde_bsde_lsmc, Diagnostics, FbsdeSolution, ForwardTilde, Provenance, SolutionMeta,
    SolverConfig, StepMeans, TildeBackward,
};
pub use system::TildeSystem;
pub use transform::{transform, transform_point, untransform, untransform_point, PathArrays};
