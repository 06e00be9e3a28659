//! Cluster-robust inference for binary response models.

pub mod bootstrap;
pub mod crve;
pub mod data;
pub mod error;
pub mod estimator;
pub mod intervals;
pub mod linalg;
pub mod link;
pub mod rng;
pub mod simulation;

pub use bootstrap::{
    boot_se, draw_weights, p_equal_tail, p_symmetric, run_bootstrap, transform_scores_restricted,
    transform_scores_unrestricted, BootstrapConfig, BootstrapResult, Origin, ScoreContributions, WeightDistribution,
};
pub use crve::{
    cv1, cv1h, cv2l, cv3, cv3l, delete_one_linearized, jackknife_estimates, t_stat, wald, Center, DofReference, DofStyle,
    JackknifeEstimates, TestKind, TestResult, VarianceKind, VarianceMatrix,
};
pub use data::{
    build_dataset, cluster_size_profile, expand_fixed_effects, prepend_constant, CoefVector, Column, ColumnData,
    ColumnTable, Dataset, Design, FixedEffectSpec, GroupedRow, LinearRestrictions, Profile, Restriction,
};
pub use error::{Error, Result};
pub use estimator::{
    detect_separation, fit_delete_one, fit_lpm, fit_lpm_restricted, fit_mle, fit_restricted, ClusterContributions,
    FitOptions, FitResult, LpmFitResult, SeparationVerdict,
};
pub use intervals::{ci_studentized, ci_symmetric, t_quantile, CriticalValue, Interval};
pub use linalg::SolveMode;
pub use link::LinkFamily;
pub use simulation::{
    calibrate_intercept, cluster_sizes, gen_outcomes, gen_regressors, run_placebo, run_rejection_experiment, DgpConfig,
    ExperimentOptions, ExperimentResult, Intercept, Method, PlaceboKind, PlaceboSpec,
};
