//! Synthetic replicates: Matérn surfaces, misspecified covariates, local
//! sub-grid variability, and proxies with discrepancy at two scales.

mod matern;
mod scenario;

pub use matern::{
    bessel_k, decay_for_effective_range, matern_correlation, GpSampler, Matern,
    EFFECTIVE_RANGE_CORRELATION,
};
pub use scenario::{
    derive_seed, generate_scenario, land_mask, scenario_shape, ReplicateData, ReplicateWorld,
    ScenarioConfig, ScenarioGenerator, ScenarioShape, SimSettings,
};
