//! Wind-aware Z-policies for populations of thermostatically controlled loads.
//!
//! Every load follows the same rule: with wind it cools as fast as wind allows,
//! without wind it drifts up to its private set-point `z` and idles there, and
//! above the active comfort level it always cools at full rate. The crate computes
//! the stationary law of one load, the grid cost of a population as a function of
//! its set-point distribution, and the optimal distribution by several routes.

pub mod cftp;
pub mod costs;
pub mod error;
pub mod heuristic;
pub mod hjb;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod stationary;
pub mod variational;

pub use error::{Error, Result};
pub use model::{
    build_environment, flow, power_draw, step_ensemble, z_policy_drift, ChainRates, EnvState, LoadParams, LoadState,
    MarkovEnvironment, PowerDraw,
};
pub use stationary::{solve_stationary, verify_conservation, StationaryDistribution};
