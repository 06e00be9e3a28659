//! Monte Carlo experiments: the clustered binary DGP, rejection and
//! coverage tallies, and placebo regressions on real data.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bootstrap::{
    run_bootstrap, transform_scores_restricted, transform_scores_unrestricted, BootstrapConfig, BootstrapResult,
    ScoreContributions, WeightDistribution,
};
use crate::crve::{cv1, cv3, cv3l, two_sided_p, Center, DofStyle};
use crate::data::{Dataset, Design, GroupedRow, Restriction};
use crate::error::{Error, Result};
use crate::estimator::{fit_lpm_with, fit_mle, fit_restricted, FitOptions};
use crate::intervals::{ci_studentized, ci_symmetric};
use crate::linalg::SolveMode;
use crate::link::{logistic, LinkFamily};
use crate::rng::{stream, Purpose};

/// How the constant term is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intercept {
    /// Calibrate so that the unconditional mean of `y` is this value.
    Target(f64),
    Value(f64),
}

/// How the non-treatment dummies are drawn. Each cluster gets its own
/// probability `omega ~ U(0.25, 0.75)` per regressor either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegressorLayout {
    /// One Bernoulli(omega) draw per cluster, shared by all its observations.
    ClusterInvariant,
    /// One Bernoulli(omega) draw per observation.
    WithinCluster,
}

/// Parameters of the clustered logit DGP.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub g: usize,
    pub n: usize,
    /// Cluster-size unevenness.
    pub gamma: f64,
    /// Number of treated clusters.
    pub g1: usize,
    /// Probability that an observation shares its cluster's draw.
    pub phi: f64,
    /// Number of coefficients, including the constant and the treatment.
    pub k: usize,
    pub beta_slopes: f64,
    pub beta_k: f64,
    pub intercept: Intercept,
    pub layout: RegressorLayout,
    pub seed: u64,
}

impl DgpConfig {
    /// `G = 24, N = 12000, gamma = 2, G1 = 8, phi = 0.1, k = 7, pi = 0.31`,
    /// dummies drawn per observation.
    pub fn canonical() -> Self {
        Self {
            g: 24,
            n: 12_000,
            gamma: 2.0,
            g1: 8,
            phi: 0.1,
            k: 7,
            beta_slopes: 1.0,
            beta_k: 0.0,
            intercept: Intercept::Target(0.31),
            layout: RegressorLayout::WithinCluster,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        if self.g < 2 {
            return bad("G must be at least 2");
        }
        if self.n < self.g {
            return bad("N must be at least G");
        }
        if self.g1 < 2 || self.g1 > self.g {
            return bad("G1 must lie between 2 and G");
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return bad("phi must lie in [0, 1]");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if let Intercept::Target(p) = self.intercept {
            if !(p > 0.0 && p < 1.0) {
                return bad("pi must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// The constant term, calibrating when a target mean is given.
    pub fn beta1(&self) -> Result<f64> {
        match self.intercept {
            Intercept::Value(b) => Ok(b),
            Intercept::Target(p) => calibrate_intercept(self, p),
        }
    }

    /// `[beta_1, slopes..., beta_k]`.
    pub fn beta(&self, beta1: f64) -> DVector<f64> {
        DVector::from_fn(self.k, |j, _| {
            if j == 0 {
                beta1
            } else if j == self.k - 1 {
                self.beta_k
            } else {
                self.beta_slopes
            }
        })
    }
}

/// `N_g = floor(N exp(gamma g/G) / sum_j exp(gamma j/G))` for `g < G`; the
/// last cluster takes the remainder.
pub fn cluster_sizes(n: usize, g: usize, gamma: f64) -> Result<Vec<usize>> {
    if g == 0 || n < g {
        return Err(Error::Invalid("need N >= G >= 1".into()));
    }
    let w: Vec<f64> = (1..=g).map(|j| (gamma * j as f64 / g as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut sizes: Vec<usize> = w[..g - 1].iter().map(|wj| (n as f64 * wj / total).floor() as usize).collect();
    let used: usize = sizes.iter().sum();
    sizes.push(n - used);
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(c));
    }
    Ok(sizes)
}

/// Regressors of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressors {
    /// `N x k` row-major, cluster by cluster: `[1, X_2, ..., X_{k-1}, T]`.
    pub x: Vec<f64>,
    pub treated: Vec<bool>,
}

impl Regressors {
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        &self.x[i * k..(i + 1) * k]
    }
}

/// Binary regressors with cluster-specific success probabilities
/// `omega ~ U(0.25, 0.75)` and a treatment dummy for `G1` clusters chosen at
/// random.
pub fn gen_regressors<R: Rng + ?Sized>(cfg: &DgpConfig, sizes: &[usize], rng: &mut R) -> Regressors {
    let k = cfg.k;
    let n: usize = sizes.iter().sum();
    let mut x = vec![0.0; n * k];
    for i in 0..n {
        x[i * k] = 1.0;
    }
    for j in 1..k - 1 {
        let mut start = 0;
        for &s in sizes {
            let omega = rng.random_range(0.25..0.75);
            match cfg.layout {
                RegressorLayout::ClusterInvariant => {
                    let v = if rng.random::<f64>() < omega { 1.0 } else { 0.0 };
                    for i in start..start + s {
                        x[i * k + j] = v;
                    }
                }
                RegressorLayout::WithinCluster => {
                    for i in start..start + s {
                        x[i * k + j] = if rng.random::<f64>() < omega { 1.0 } else { 0.0 };
                    }
                }
            }
            start += s;
        }
    }
    let mut treated = vec![false; sizes.len()];
    for c in rand::seq::index::sample(rng, sizes.len(), cfg.g1).iter() {
        treated[c] = true;
    }
    let mut start = 0;
    for (&s, &t) in sizes.iter().zip(&treated) {
        if t {
            for i in start..start + s {
                x[i * k + k - 1] = 1.0;
            }
        }
        start += s;
    }
    Regressors { x, treated }
}

/// Outcomes of one cluster: `u = v_g` with probability `phi`, else a fresh
/// uniform; `y = 1` iff `Lambda(index) > u`.
fn cluster_outcomes<R: Rng + ?Sized>(
    index: impl Iterator<Item = f64>,
    phi: f64,
    rng: &mut R,
    mut emit: impl FnMut(bool),
) {
    let v_g: f64 = rng.random();
    for x in index {
        let e: f64 = rng.random();
        let u = if e <= phi { v_g } else { rng.random() };
        emit(logistic(x) > u);
    }
}

/// Binary outcomes for linear indices laid out cluster by cluster.
pub fn gen_outcomes<R: Rng + ?Sized>(index: &[f64], sizes: &[usize], phi: f64, rng: &mut R) -> Result<Vec<f64>> {
    if sizes.iter().sum::<usize>() != index.len() {
        return Err(Error::Invalid("cluster sizes do not match the index length".into()));
    }
    let mut y = Vec::with_capacity(index.len());
    let mut start = 0;
    for &s in sizes {
        cluster_outcomes(index[start..start + s].iter().copied(), phi, rng, |v| y.push(if v { 1.0 } else { 0.0 }));
        start += s;
    }
    Ok(y)
}

/// Unconditional mean of `y`: slopes act on independent Bernoulli(1/2)
/// regressors (the marginal law of each `X`) and a share `G1/G` of
/// observations is treated on average.
pub fn expected_mean(cfg: &DgpConfig, beta1: f64) -> f64 {
    let m = cfg.k - 2;
    let share = cfg.g1 as f64 / cfg.g as f64;
    let mut total = 0.0;
    let mut binom = 1.0;
    for s in 0..=m {
        if s > 0 {
            binom = binom * (m - s + 1) as f64 / s as f64;
        }
        let p = binom / 2f64.powi(m as i32);
        let x = beta1 + s as f64 * cfg.beta_slopes;
        total += p * (share * logistic(x + cfg.beta_k) + (1.0 - share) * logistic(x));
    }
    total
}

/// Solves `expected_mean(cfg, beta1) = pi_target` by bisection.
pub fn calibrate_intercept(cfg: &DgpConfig, pi_target: f64) -> Result<f64> {
    if !(pi_target > 0.0 && pi_target < 1.0) {
        return Err(Error::NoRoot(pi_target));
    }
    let (mut lo, mut hi) = (-60.0, 60.0);
    if expected_mean(cfg, lo) > pi_target || expected_mean(cfg, hi) < pi_target {
        return Err(Error::NoRoot(pi_target));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_mean(cfg, mid) < pi_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Regressors and outcomes of replication `r`.
fn draw(cfg: &DgpConfig, beta1: f64, r: u64) -> Result<(Vec<usize>, Regressors, Vec<f64>)> {
    let sizes = cluster_sizes(cfg.n, cfg.g, cfg.gamma)?;
    let reg = gen_regressors(cfg, &sizes, &mut stream(cfg.seed, r, Purpose::Regressors));
    let beta = cfg.beta(beta1);
    let k = cfg.k;
    let index: Vec<f64> =
        (0..cfg.n).map(|i| reg.row(i, k).iter().zip(beta.iter()).map(|(a, b)| a * b).sum()).collect();
    let y = gen_outcomes(&index, &sizes, cfg.phi, &mut stream(cfg.seed, r, Purpose::Outcomes))?;
    Ok((sizes, reg, y))
}

/// Draws replication `r` as a collapsed design.
pub fn simulate_design(cfg: &DgpConfig, beta1: f64, r: u64) -> Result<(Design, Regressors)> {
    let (sizes, reg, y) = draw(cfg, beta1, r)?;
    let k = cfg.k;
    let mut start = 0;
    let mut clusters = Vec::with_capacity(sizes.len());
    for &s in &sizes {
        // Rows of a cluster take at most 2^(k-2) distinct values; tally them
        // before building the design.
        let mut groups: Vec<GroupedRow> = Vec::new();
        for i in start..start + s {
            let row = reg.row(i, k);
            match groups.iter_mut().find(|g| g.x == row) {
                Some(g) => {
                    g.trials += 1.0;
                    g.successes += y[i];
                }
                None => groups.push(GroupedRow { x: row.to_vec(), trials: 1.0, successes: y[i] }),
            }
        }
        clusters.push(groups);
        start += s;
    }
    Ok((Design::from_clusters(dgp_names(k), clusters)?, reg))
}

/// Draws replication `r` as an observation-level dataset; the same data as
/// [`simulate_design`].
pub fn simulate_dataset(cfg: &DgpConfig, beta1: f64, r: u64) -> Result<Dataset> {
    let (sizes, reg, y) = draw(cfg, beta1, r)?;
    let cluster = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect();
    let labels = (1..=cfg.g).map(|g| g.to_string()).collect();
    Dataset::from_parts("y", y, dgp_names(cfg.k), reg.x, "cluster", cluster, labels)
}

fn dgp_names(k: usize) -> Vec<String> {
    let mut names = vec!["_cons".to_string()];
    names.extend((2..k).map(|j| format!("x{j}")));
    names.push("treat".into());
    names
}

/// Tests and intervals tallied by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cv1Normal,
    Cv1T,
    Cv3T,
    Cv3LT,
    WclrC,
    WclrS,
    WcluC,
    WcluS,
    LpmCv1T,
    LpmCv3T,
    WcrC,
    WcrS,
    WcuC,
    WcuS,
    CiCv1,
    CiCv3,
    CiCv3L,
    CiWcluCStudentized,
    CiWcluSStudentized,
    CiWcluCBootSe,
    CiWcluSBootSe,
}

const METHOD_NAMES: [(Method, &str); 21] = [
    (Method::Cv1Normal, "CV1-normal"),
    (Method::Cv1T, "CV1-t"),
    (Method::Cv3T, "CV3-t"),
    (Method::Cv3LT, "CV3L-t"),
    (Method::WclrC, "WCLR-C"),
    (Method::WclrS, "WCLR-S"),
    (Method::WcluC, "WCLU-C"),
    (Method::WcluS, "WCLU-S"),
    (Method::LpmCv1T, "LPM-CV1-t"),
    (Method::LpmCv3T, "LPM-CV3-t"),
    (Method::WcrC, "WCR-C"),
    (Method::WcrS, "WCR-S"),
    (Method::WcuC, "WCU-C"),
    (Method::WcuS, "WCU-S"),
    (Method::CiCv1, "CI-CV1"),
    (Method::CiCv3, "CI-CV3"),
    (Method::CiCv3L, "CI-CV3L"),
    (Method::CiWcluCStudentized, "CI-WCLU-C-stud"),
    (Method::CiWcluSStudentized, "CI-WCLU-S-stud"),
    (Method::CiWcluCBootSe, "CI-WCLU-C-se"),
    (Method::CiWcluSBootSe, "CI-WCLU-S-se"),
];

impl Method {
    pub fn all() -> Vec<Method> {
        METHOD_NAMES.iter().map(|(m, _)| *m).collect()
    }

    pub fn name(self) -> &'static str {
        METHOD_NAMES.iter().find(|(m, _)| *m == self).map(|(_, s)| *s).expect("every method is named")
    }

    /// Coverage of a confidence interval rather than a rejection.
    pub fn is_interval(self) -> bool {
        matches!(
            self,
            Method::CiCv1
                | Method::CiCv3
                | Method::CiCv3L
                | Method::CiWcluCStudentized
                | Method::CiWcluSStudentized
                | Method::CiWcluCBootSe
                | Method::CiWcluSBootSe
        )
    }

    fn is_lpm(self) -> bool {
        matches!(self, Method::LpmCv1T | Method::LpmCv3T | Method::WcrC | Method::WcrS | Method::WcuC | Method::WcuS)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        METHOD_NAMES
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(s.trim()))
            .map(|(m, _)| *m)
            .ok_or_else(|| Error::Invalid(format!("unknown method `{s}`")))
    }
}

/// Settings shared by simulation and placebo experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub methods: Vec<Method>,
    /// Monte Carlo replications `R`.
    pub reps: usize,
    /// Bootstrap replications `B`.
    pub boot_reps: usize,
    /// Test level; intervals have coverage `1 - level`.
    pub level: f64,
    /// `None` picks by the number of clusters.
    pub weights: Option<WeightDistribution>,
    pub solve_mode: SolveMode,
}

impl ExperimentOptions {
    pub fn new(methods: Vec<Method>, reps: usize, boot_reps: usize) -> Self {
        Self { methods, reps, boot_reps, level: 0.05, weights: None, solve_mode: SolveMode::Exact }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Invalid("at least one replication is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid("no methods requested".into()));
        }
        if !(0.0..1.0).contains(&self.level) {
            return Err(Error::Invalid(format!("level {} outside [0, 1)", self.level)));
        }
        let boot = self.methods.iter().any(|m| {
            !matches!(
                m,
                Method::Cv1Normal
                    | Method::Cv1T
                    | Method::Cv3T
                    | Method::Cv3LT
                    | Method::LpmCv1T
                    | Method::LpmCv3T
                    | Method::CiCv1
                    | Method::CiCv3
                    | Method::CiCv3L
            )
        });
        if boot && self.boot_reps == 0 {
            return Err(Error::Invalid("bootstrap methods need B >= 1".into()));
        }
        Ok(())
    }
}

/// Rejection frequencies (or coverage) per method.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub label: String,
    pub methods: Vec<Method>,
    /// Rejections for tests, covering intervals for interval methods.
    pub hits: Vec<usize>,
    pub reps: usize,
    /// Replications where every method could be computed.
    pub valid: usize,
    pub boot_reps: usize,
    pub level: f64,
    /// Skipped replications by reason.
    pub skips: BTreeMap<String, usize>,
}

impl ExperimentResult {
    pub fn frequency(&self, m: Method) -> f64 {
        let i = self.methods.iter().position(|&x| x == m).expect("method not in experiment");
        self.hits[i] as f64 / self.valid as f64
    }

    /// `sqrt(p (1 - p) / R)` over the valid replications.
    pub fn mc_se(&self, m: Method) -> f64 {
        let p = self.frequency(m);
        (p * (1.0 - p) / self.valid as f64).sqrt()
    }

    pub fn skipped(&self) -> usize {
        self.reps - self.valid
    }

    pub fn delimited_header() -> &'static str {
        "config,method,kind,R,valid,skipped,B,level,frequency,mc_se,skip_reasons"
    }

    /// One comma-separated row per method.
    pub fn to_delimited(&self) -> String {
        let reasons: Vec<String> = self.skips.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mut out = String::new();
        for &m in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{}\n",
                self.label,
                m,
                if m.is_interval() { "coverage" } else { "rejection" },
                self.reps,
                self.valid,
                self.skipped(),
                self.boot_reps,
                self.level,
                self.frequency(m),
                self.mc_se(m),
                reasons.join(";"),
            ));
        }
        out
    }
}

fn skip_reason(e: &Error) -> &'static str {
    match e {
        Error::Separation { .. } => "separation",
        Error::NonConvergence { .. } => "nonconvergence",
        Error::TooManyDropped { .. } => "jackknife_separation",
        Error::RankDeficient
        | Error::SingularMatrix
        | Error::SingularInformation
        | Error::SingularHessian
        | Error::SingularSubsampleInformation { .. } => "singular",
        Error::ZeroVariance | Error::AllDegenerate | Error::NonPositiveSe(_) => "degenerate",
        _ => "other",
    }
}

/// Everything needed to evaluate the methods on one sample.
struct Sample<'a> {
    design: &'a Design,
    /// Column of the tested coefficient.
    index: usize,
    /// Value under the null for tests.
    null: f64,
    /// True value for coverage.
    truth: f64,
    seed: u64,
    replication: u64,
}

/// Rejections (tests) or coverage (intervals) for one sample, in the order
/// of `opts.methods`.
fn evaluate(sample: &Sample<'_>, opts: &ExperimentOptions) -> Result<Vec<bool>> {
    let methods = &opts.methods;
    let has = |m: Method| methods.contains(&m);
    let any = |ms: &[Method]| ms.iter().any(|m| methods.contains(m));
    let design = sample.design;
    let g = design.n_clusters();
    let k = design.k();
    let j = sample.index;
    let dof = Some(g - 1);
    let alpha = opts.level;
    let fit_opts = FitOptions { solve_mode: opts.solve_mode, ..FitOptions::default() };
    let weights = opts.weights.unwrap_or_else(|| WeightDistribution::auto(g));
    let mut a = DVector::zeros(k);
    a[j] = 1.0;
    let boot = |c: &ScoreContributions, t_obs: f64, variant: u64| -> Result<BootstrapResult> {
        let cfg = BootstrapConfig {
            reps: opts.boot_reps,
            weights,
            seed: sample.seed,
            stream: sample.replication * 64 + variant,
        };
        run_bootstrap(c, &a, t_obs, &cfg)
    };
    let covers = |lo: f64, hi: f64| lo <= sample.truth && sample.truth <= hi;
    let level = 1.0 - alpha;

    let mut out = vec![false; methods.len()];
    let mut set = |m: Method, v: bool| {
        for (o, x) in out.iter_mut().zip(methods) {
            if *x == m {
                *o = v;
            }
        }
    };

    if methods.iter().any(|m| !m.is_lpm()) {
        let fit = fit_mle(design, LinkFamily::Logit, &fit_opts)?;
        let beta = fit.beta.get(j);
        let v1 = cv1(&fit, DofStyle::Full)?;
        let se1 = v1.se(j);
        if !(se1 > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let t1 = (beta - sample.null) / se1;
        set(Method::Cv1Normal, two_sided_p(t1, None) < alpha);
        set(Method::Cv1T, two_sided_p(t1, dof) < alpha);
        if has(Method::CiCv1) {
            set(Method::CiCv1, alpha == 0.0 || { let ci = ci_symmetric(beta, se1, level, dof)?; covers(ci.lower, ci.upper) });
        }
        if any(&[Method::Cv3T, Method::CiCv3]) {
            let se = cv3(design, &fit, Center::Mle, &fit_opts)?.se(j);
            set(Method::Cv3T, two_sided_p((beta - sample.null) / se, dof) < alpha);
            if has(Method::CiCv3) {
                set(Method::CiCv3, alpha == 0.0 || { let ci = ci_symmetric(beta, se, level, dof)?; covers(ci.lower, ci.upper) });
            }
        }
        if any(&[Method::Cv3LT, Method::CiCv3L]) {
            let se = cv3l(&fit)?.se(j);
            set(Method::Cv3LT, two_sided_p((beta - sample.null) / se, dof) < alpha);
            if has(Method::CiCv3L) {
                set(Method::CiCv3L, alpha == 0.0 || { let ci = ci_symmetric(beta, se, level, dof)?; covers(ci.lower, ci.upper) });
            }
        }
        if any(&[Method::WclrC, Method::WclrS]) {
            let rfit = fit_restricted(design, LinkFamily::Logit, Restriction::new(j, sample.null), &fit_opts)?;
            if has(Method::WclrC) {
                let r = boot(&ScoreContributions::classic(&rfit), t1, 0)?;
                set(Method::WclrC, r.p_sym < alpha);
            }
            if has(Method::WclrS) {
                let r = boot(&transform_scores_restricted(&rfit)?, t1, 1)?;
                set(Method::WclrS, r.p_sym < alpha);
            }
        }
        let unrestricted = [
            (false, Method::WcluC, Method::CiWcluCStudentized, Method::CiWcluCBootSe, 2),
            (true, Method::WcluS, Method::CiWcluSStudentized, Method::CiWcluSBootSe, 3),
        ];
        for (transformed, test, stud, bse, variant) in unrestricted {
            if !any(&[test, stud, bse]) {
                continue;
            }
            let c = if transformed { transform_scores_unrestricted(&fit)? } else { ScoreContributions::classic(&fit) };
            let r = boot(&c, t1, variant)?;
            set(test, r.p_sym < alpha);
            if has(stud) {
                set(stud, alpha == 0.0 || { let ci = ci_studentized(beta, se1, &r.t_star, level)?; covers(ci.lower, ci.upper) });
            }
            if has(bse) {
                let se = r.boot_se()?;
                set(bse, alpha == 0.0 || { let ci = ci_symmetric(beta, se, level, dof)?; covers(ci.lower, ci.upper) });
            }
        }
    }

    if methods.iter().any(|m| m.is_lpm()) {
        let lfit = fit_lpm_with(design, None, opts.solve_mode)?;
        let delta = lfit.delta.get(j);
        let se1 = cv1(&lfit, DofStyle::Full)?.se(j);
        if !(se1 > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let t1 = (delta - sample.null) / se1;
        set(Method::LpmCv1T, two_sided_p(t1, dof) < alpha);
        if has(Method::LpmCv3T) {
            // Linearized delete-one steps are exact for least squares.
            let se = cv3l(&lfit)?.se(j);
            set(Method::LpmCv3T, two_sided_p((delta - sample.null) / se, dof) < alpha);
        }
        if any(&[Method::WcrC, Method::WcrS]) {
            let rfit = fit_lpm_with(design, Some(Restriction::new(j, sample.null)), opts.solve_mode)?;
            if has(Method::WcrC) {
                set(Method::WcrC, boot(&ScoreContributions::classic(&rfit), t1, 4)?.p_sym < alpha);
            }
            if has(Method::WcrS) {
                set(Method::WcrS, boot(&transform_scores_restricted(&rfit)?, t1, 5)?.p_sym < alpha);
            }
        }
        if has(Method::WcuC) {
            set(Method::WcuC, boot(&ScoreContributions::classic(&lfit), t1, 6)?.p_sym < alpha);
        }
        if has(Method::WcuS) {
            set(Method::WcuS, boot(&transform_scores_unrestricted(&lfit)?, t1, 7)?.p_sym < alpha);
        }
    }
    Ok(out)
}

fn tally(label: String, opts: &ExperimentOptions, outcomes: Vec<Result<Vec<bool>>>) -> ExperimentResult {
    let mut hits = vec![0usize; opts.methods.len()];
    let mut valid = 0;
    let mut skips = BTreeMap::new();
    for o in outcomes {
        match o {
            Ok(v) => {
                valid += 1;
                for (h, x) in hits.iter_mut().zip(v) {
                    *h += usize::from(x);
                }
            }
            Err(e) => *skips.entry(skip_reason(&e).to_string()).or_insert(0) += 1,
        }
    }
    ExperimentResult {
        label,
        methods: opts.methods.clone(),
        hits,
        reps: opts.reps,
        valid,
        boot_reps: opts.boot_reps,
        level: opts.level,
        skips,
    }
}

/// Simulates `R` datasets from the DGP and tallies, per method, how often
/// the test of `beta_k = beta_k` (its true value) rejects at `level`, or how
/// often the interval covers it.
pub fn run_rejection_experiment(cfg: &DgpConfig, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    opts.validate()?;
    let beta1 = cfg.beta1()?;
    cluster_sizes(cfg.n, cfg.g, cfg.gamma)?;
    let outcomes: Vec<Result<Vec<bool>>> = (0..opts.reps as u64)
        .into_par_iter()
        .map(|r| {
            let (design, _) = simulate_design(cfg, beta1, r)?;
            let sample = Sample {
                design: &design,
                index: cfg.k - 1,
                null: cfg.beta_k,
                truth: cfg.beta_k,
                seed: cfg.seed,
                replication: r,
            };
            evaluate(&sample, opts)
        })
        .collect();
    let label = format!(
        "G={} N={} gamma={} G1={} phi={} k={} pi={} beta_k={}",
        cfg.g,
        cfg.n,
        cfg.gamma,
        cfg.g1,
        cfg.phi,
        cfg.k,
        match cfg.intercept {
            Intercept::Target(p) => p.to_string(),
            Intercept::Value(b) => format!("b1:{b}"),
        },
        cfg.beta_k
    );
    Ok(tally(label, opts, outcomes))
}

/// The placebo regressor added in each replication.
#[derive(Debug, Clone, PartialEq)]
pub enum PlaceboKind {
    /// One for `treated` clusters chosen at random, zero elsewhere.
    Binary { treated: usize },
    /// A standardized AR(1) series with standard normal innovations,
    /// simulated separately for each cluster over the distinct values of
    /// `periods` (one entry per input row, in input order). Without periods
    /// each cluster gets a single draw.
    Ar1 { rho: f64, periods: Option<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboSpec {
    pub kind: PlaceboKind,
    pub seed: u64,
}

fn placebo_column<R: Rng + ?Sized>(d: &Dataset, kind: &PlaceboKind, rng: &mut R) -> Result<Placebo> {
    let g = d.n_clusters();
    match kind {
        PlaceboKind::Binary { treated } => {
            if *treated == 0 || *treated > g {
                return Err(Error::Invalid(format!("cannot treat {treated} of {g} clusters")));
            }
            let mut v = vec![0.0; g];
            for c in rand::seq::index::sample(rng, g, *treated).iter() {
                v[c] = 1.0;
            }
            Ok(Placebo::PerCluster(v))
        }
        PlaceboKind::Ar1 { rho, periods: None } => {
            let _ = rho;
            let v: Vec<f64> = (0..g).map(|_| rng.sample(StandardNormal)).collect();
            Ok(Placebo::PerCluster(standardize(v)))
        }
        PlaceboKind::Ar1 { rho, periods: Some(periods) } => {
            if periods.len() != d.n_obs() {
                return Err(Error::Invalid("period column length differs from the sample".into()));
            }
            let mut levels: Vec<f64> = periods.clone();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let t_of = |p: f64| levels.binary_search_by(|l| l.total_cmp(&p)).expect("period level exists");
            let series: Vec<Vec<f64>> = (0..g)
                .map(|_| {
                    let mut z = Vec::with_capacity(levels.len());
                    let mut prev = 0.0;
                    for t in 0..levels.len() {
                        let e: f64 = rng.sample(StandardNormal);
                        prev = if t == 0 { e } else { rho * prev + e };
                        z.push(prev);
                    }
                    z
                })
                .collect();
            let order = d.row_order();
            let v = (0..d.n_obs()).map(|i| series[d.cluster()[i]][t_of(periods[order[i]])]).collect();
            Ok(Placebo::PerRow(standardize(v)))
        }
    }
}

enum Placebo {
    PerCluster(Vec<f64>),
    PerRow(Vec<f64>),
}

fn standardize(v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if !(sd > 0.0) {
        return v.iter().map(|x| x - mean).collect();
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// Adds a random placebo regressor to `d` in each of `R` replications and
/// tallies how often each method rejects that its coefficient is zero.
pub fn run_placebo(d: &Dataset, spec: &PlaceboSpec, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    opts.validate()?;
    match &spec.kind {
        PlaceboKind::Binary { treated } if *treated == 0 || *treated > d.n_clusters() => {
            return Err(Error::Invalid(format!("cannot treat {treated} of {} clusters", d.n_clusters())));
        }
        PlaceboKind::Ar1 { periods: Some(p), .. } if p.len() != d.n_obs() => {
            return Err(Error::Invalid("period column length differs from the sample".into()));
        }
        _ => {}
    }
    let k = d.k() + 1;
    let outcomes: Vec<Result<Vec<bool>>> = (0..opts.reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(spec.seed, r, Purpose::Placebo);
            let design = match placebo_column(d, &spec.kind, &mut rng)? {
                Placebo::PerCluster(v) => d.design().with_cluster_column("placebo", &v)?,
                Placebo::PerRow(v) => d.with_column("placebo", &v)?.design().clone(),
            };
            let sample = Sample { design: &design, index: k - 1, null: 0.0, truth: 0.0, seed: spec.seed, replication: r };
            evaluate(&sample, opts)
        })
        .collect();
    let label = match &spec.kind {
        PlaceboKind::Binary { treated } => format!("placebo binary G1={treated}"),
        PlaceboKind::Ar1 { rho, .. } => format!("placebo ar1 rho={rho}"),
    };
    Ok(tally(label, opts, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_sizes_for_three_gammas() {
        let even = cluster_sizes(12_000, 24, 0.0).unwrap();
        assert!(even.iter().all(|&s| s == 500));
        for (gamma, max, min) in [(2.0, 1120, 163), (4.0, 1889, 40)] {
            let s = cluster_sizes(12_000, 24, gamma).unwrap();
            assert_eq!(s.iter().sum::<usize>(), 12_000);
            assert_eq!(*s.iter().max().unwrap(), max);
            assert_eq!(*s.iter().min().unwrap(), min);
            assert!(s.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(cluster_sizes(30, 24, 6.0), Err(Error::EmptyCluster(0)));
    }

    #[test]
    fn regressors_have_g1_treated_clusters_and_mean_one_half() {
        for layout in [RegressorLayout::ClusterInvariant, RegressorLayout::WithinCluster] {
            let cfg = DgpConfig { n: 240, layout, ..DgpConfig::canonical() };
            let sizes = vec![10; 24];
            let mut rng = stream(3, 0, Purpose::Regressors);
            let mut ones = 0.0;
            let mut cells = 0.0;
            let mut varies = false;
            for _ in 0..400 {
                let reg = gen_regressors(&cfg, &sizes, &mut rng);
                assert_eq!(reg.treated.iter().filter(|&&t| t).count(), 8);
                for g in 0..24 {
                    let first = reg.row(10 * g, 7).to_vec();
                    for i in 10 * g..10 * (g + 1) {
                        let row = reg.row(i, 7);
                        assert_eq!(row[0], 1.0);
                        assert_eq!(row[6], if reg.treated[g] { 1.0 } else { 0.0 });
                        varies |= row != first.as_slice();
                        ones += row[1..6].iter().sum::<f64>();
                        cells += 5.0;
                    }
                }
            }
            assert_eq!(varies, layout == RegressorLayout::WithinCluster);
            let p = ones / cells;
            // Draws within a cluster are correlated; 400 x 24 x 5 cluster
            // probabilities bound the effective sample from below.
            assert!((p - 0.5).abs() < 4.0 * (0.25 / 48_000.0f64).sqrt(), "{p}");
        }
    }

    #[test]
    fn outcomes_follow_the_marginal_law() {
        for phi in [0.0, 0.5, 1.0] {
            let mut rng = stream(11, 0, Purpose::Outcomes);
            let sizes = vec![10; 10_000];
            let y = gen_outcomes(&vec![0.4; 100_000], &sizes, phi, &mut rng).unwrap();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let p = logistic(0.4);
            // Clustered draws inflate the variance of the mean.
            let deff = 1.0 + 9.0 * phi * phi;
            assert!((mean - p).abs() < 4.0 * (p * (1.0 - p) * deff / 1e5).sqrt(), "{phi}: {mean}");
        }
        let mut rng = stream(12, 0, Purpose::Outcomes);
        let y = gen_outcomes(&[0.0; 40], &[20, 20], 1.0, &mut rng).unwrap();
        assert!(y[..20].iter().all(|&v| v == y[0]) && y[20..].iter().all(|&v| v == y[20]));
    }

    #[test]
    fn independent_outcomes_have_no_within_cluster_correlation() {
        let mut rng = stream(13, 0, Purpose::Outcomes);
        let y = gen_outcomes(&vec![0.0; 40_000], &vec![2; 20_000], 0.0, &mut rng).unwrap();
        let (mut sxy, mut sx) = (0.0, 0.0);
        for pair in y.chunks(2) {
            sxy += (pair[0] - 0.5) * (pair[1] - 0.5);
            sx += (pair[0] - 0.5).powi(2);
        }
        let corr = sxy / sx;
        assert!(corr.abs() < 4.0 / (20_000f64).sqrt(), "{corr}");
    }

    #[test]
    fn calibration() {
        let mut cfg = DgpConfig { beta_slopes: 0.0, ..DgpConfig::canonical() };
        assert!(calibrate_intercept(&cfg, 0.5).unwrap().abs() < 1e-12);
        cfg.beta_slopes = 1.0;
        let b1 = calibrate_intercept(&cfg, 0.31).unwrap();
        assert!((expected_mean(&cfg, b1) - 0.31).abs() < 1e-12);
        assert!(expected_mean(&cfg, b1 + 0.1) > expected_mean(&cfg, b1));

        // Fresh simulated samples agree with the calibrated mean.
        let mut total = 0.0;
        let mut n = 0.0;
        for r in 0..200 {
            let (design, _) = simulate_design(&DgpConfig { seed: 77, ..cfg.clone() }, b1, r).unwrap();
            total += design.mean_y(None) * design.n_obs() as f64;
            n += design.n_obs() as f64;
        }
        assert!((total / n - 0.31).abs() < 0.005, "{}", total / n);
        assert_eq!(calibrate_intercept(&cfg, 1.0), Err(Error::NoRoot(1.0)));
    }

    #[test]
    fn collapsed_and_raw_simulations_agree() {
        let cfg = DgpConfig { n: 1200, g: 12, g1: 4, ..DgpConfig::canonical() };
        let b1 = cfg.beta1().unwrap();
        let (design, _) = simulate_design(&cfg, b1, 5).unwrap();
        let d = simulate_dataset(&cfg, b1, 5).unwrap();
        assert_eq!(&design, d.design());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::all() {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("CV9".parse::<Method>().is_err());
    }

    #[test]
    fn zero_level_never_rejects() {
        let cfg = DgpConfig { g: 12, n: 1200, g1: 4, ..DgpConfig::canonical() };
        let mut opts = ExperimentOptions::new(Method::all(), 5, 19);
        opts.level = 0.0;
        let r = run_rejection_experiment(&cfg, &opts).unwrap();
        for &m in &opts.methods {
            if m.is_interval() {
                assert_eq!(r.frequency(m), 1.0);
            } else {
                assert_eq!(r.frequency(m), 0.0, "{m}");
            }
        }
    }

    #[test]
    fn normal_critical_values_reject_at_least_as_often() {
        let cfg = DgpConfig { g: 12, n: 2400, g1: 4, seed: 5, ..DgpConfig::canonical() };
        let opts = ExperimentOptions::new(vec![Method::Cv1Normal, Method::Cv1T], 200, 0);
        let r = run_rejection_experiment(&cfg, &opts).unwrap();
        assert!(r.frequency(Method::Cv1Normal) >= r.frequency(Method::Cv1T));
        assert_eq!(r.valid + r.skipped(), 200);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let cfg = DgpConfig::canonical();
        assert!(run_rejection_experiment(&cfg, &ExperimentOptions::new(vec![Method::Cv1T], 0, 0)).is_err());
        assert!(run_rejection_experiment(&cfg, &ExperimentOptions::new(vec![Method::WclrS], 3, 0)).is_err());
        let bad = DgpConfig { g1: 1, ..cfg };
        assert!(run_rejection_experiment(&bad, &ExperimentOptions::new(vec![Method::Cv1T], 3, 0)).is_err());
    }
}
