//! The two-likelihood fusion model and its exact marginal posterior.

mod latent;
mod marginal;
mod predict;
mod spec;
mod theta;
mod variance;

pub use latent::{
    delta_conditional, latent_means, orthogonalize, sample_delta, sample_latents_offline,
    LatentDraws, Orthogonalized,
};
pub use marginal::{
    coupled_part, evaluate_with, log_marginal_posterior, log_prior, marginalize_b,
    marginalize_joint, marginalize_phi, obs_gram, reduce_gram, BStage, CoupledPart, Evaluation,
    MarginalizedField, PosteriorEvaluator,
};
pub use predict::{latent_surface, linear_predictor, surface_on_discrepancy_grid, SurfaceSummary};
pub use spec::{
    ExtLayout, FieldBlock, FusionModelSpec, ModelMode, ObservationBlock, PredictionBlock,
    ProxyBlock, VariantFlags,
};
pub use theta::{Family, HyperPriors, HyperState, ParamId};
pub use variance::{obs_variance, proxy_variance, DayCounts, ObsMeta, ProxyKind};
