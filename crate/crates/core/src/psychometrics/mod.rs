//! Personality measures: scale scores, imputation, principal components and
//! the distribution factors built from them.

mod factors;
mod pca;
mod scales;

pub use factors::{
    build_factors, construct_factors, female_fraction, personality_ratios, pooled_trait_matrix, FactorConstruction,
    FactorSet, RatioBands,
};
pub use pca::{
    fit_pca, fit_pca_components, project_and_scale, rescale, CutoffEntry, PcaModel, DEFAULT_CUTOFF, EIGEN_TOLERANCE,
    N_TRAITS, SCALE_MAX, SCALE_MIN,
};
pub use scales::{cronbach_alpha, impute_missing, impute_sample, score_scale, ImputationMode, ImputedSample, TraitScore};
