//! Multi-equation least squares, cluster-robust inference, control functions,
//! Wald tests and the cluster bootstrap.

mod bootstrap;
mod control;
mod design;
mod system;
mod wald;

pub use bootstrap::{
    bootstrap_p_value, cluster_bootstrap, resample_clusters, substream, BootstrapConfig, BootstrapDraws, ClusterRows,
    DEFAULT_REPLICATIONS, MAX_REDRAW_FRACTION, MIN_REPLICATIONS,
};
pub use control::{control_function_stage, ControlFunction, FirstStage, WEAK_INSTRUMENT_F};
pub use design::DesignMatrix;
pub use system::{
    cluster_vcov, fit_system, CoefficientEntry, EquationSummary, FitOptions, Solver, SystemFit, SystemSummary,
};
pub use wald::{
    chi2_sf, involved_params, wald_nonlinear, wald_statistic, LinearRestriction, ProductRestriction, Restriction,
    WaldResult,
};

pub(crate) use system::solve;
