//! Scenario-decomposition solvers for nonseparable discrete-time stochastic
//! control.
//!
//! The crate is organised around a finite [`ScenarioTree`]. Any family of
//! convex per-scenario problems that implements [`SubproblemAdapter`] can be
//! driven to a nonanticipative optimum by [`pha_solve`]. Two families ship
//! with the crate: linear-quadratic control with nonseparable costs
//! ([`online_qp`]) and portfolio selection with smoothing penalties
//! ([`portfolio`]).

pub mod config;
pub mod convex_min;
pub mod error;
pub mod online_qp;
pub mod pha;
pub mod portfolio;
pub mod tree;

pub use convex_min::{minimize, MinimizerSettings, Minimum, SmoothObjective};
pub use error::{Error, Result};
pub use pha::{
    distance_to_reference, multiplier_update, pha_solve, pha_solve_with, stopping_metric,
    ControlEnsemble, Initialization, MultiplierEnsemble, PhaConfig, PhaIteration, PhaOptions,
    PhaResult, SubproblemAdapter,
};
pub use tree::{ScenarioPath, ScenarioTree, StageDistribution, TreeSpec};

/// Problem files for the worked examples, embedded so that tests and the
/// command-line tool can run them without a checkout.
pub mod fixtures {
    pub const EXAMPLE_QP: &str = include_str!("../fixtures/example_qp.json");
    pub const EXAMPLE_QP_SEPARABLE: &str = include_str!("../fixtures/example_qp_separable.json");
    pub const EXAMPLE_QP_DETERMINISTIC: &str =
        include_str!("../fixtures/example_qp_deterministic.json");
    pub const EXAMPLE_UTILITY: &str = include_str!("../fixtures/example_utility.json");
    pub const EXAMPLE_UTILITY_FLAT: &str = include_str!("../fixtures/example_utility_flat.json");
    pub const EXAMPLE_MV: &str = include_str!("../fixtures/example_mv.json");
}
