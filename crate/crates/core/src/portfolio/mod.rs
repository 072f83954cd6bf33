//! Multiperiod portfolio selection with one riskless asset and n risky
//! assets, with smoothing penalties under expected-utility and mean-variance
//! objectives.

mod market;
mod mv;
mod smoothing;
mod stats;
mod utility;

pub use market::{
    excess_returns, wealth_response, wealth_trajectories, wealth_trajectory, MarketModel,
    ReturnKind,
};
pub use mv::{
    aux_augmented_optimum, build_auxiliary, lambda_bounds, lambda_search, mv_analytical_policy,
    mv_k, tilde_u_value, AuxAdapter, AuxiliaryQp, GridPoint, LambdaSearch, MvPolicy, MvsSpec,
    Parabola,
};
pub use smoothing::{smoothing_value, SmoothingKind, SmoothingSpec};
pub use stats::{
    bankruptcy_rate, default_benchmarks, wealth_statistics, BankruptcyReport, StageStatistics,
};
pub use utility::{
    beta_residual, reverse_beta, utility_scenario_objective, UtilityAdapter, UtilitySpec,
};
