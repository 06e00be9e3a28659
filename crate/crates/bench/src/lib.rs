//! Shared fixtures for the benchmarks.

use clusterjack_core::simulation::simulate_dataset;
use clusterjack_core::{fit_mle, Dataset, DgpConfig, FitOptions, FitResult, LinkFamily};

/// One draw from the canonical design with `g` clusters of 500 on average.
pub fn canonical_sample(g: usize) -> Dataset {
    let cfg = DgpConfig { g, n: 500 * g, g1: g / 3, ..DgpConfig::canonical() };
    simulate_dataset(&cfg, cfg.beta1().expect("attainable mean"), 0).expect("valid design")
}

pub fn logit_fit(d: &Dataset) -> FitResult {
    fit_mle(d.design(), LinkFamily::Logit, &FitOptions::default()).expect("fit converges")
}
