//! Pseudo-maximum-likelihood estimation of binary response models, the
//! linear probability model, and perfect-classifier detection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{CoefVector, Design, Restriction};
use crate::error::{Error, Result};
use crate::linalg::{add_outer_upper, fill_lower, select, select_vec, GramInverse, SolveMode};
use crate::link::{logistic, LinkFamily};

/// Linear indices beyond this magnitude trigger a separation check.
pub const SEPARATION_INDEX: f64 = 30.0;
/// Predicted probability of the observed outcome above which a group is
/// treated as perfectly classified.
pub const SEPARATION_PROB_FLOOR: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Convergence tolerance on the infinity norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// `Pseudo` lets the optimizer step through unidentified directions
    /// (fixed effects of an omitted cluster) instead of failing.
    pub solve_mode: SolveMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, solve_mode: SolveMode::Exact }
    }
}

/// Per-cluster score and information contributions shared by the logit fit
/// and the linear probability model. Variance estimators and the bootstrap
/// only see this interface.
pub trait ClusterContributions {
    fn coefficients(&self) -> &CoefVector;
    /// `G x k`; row `g` is the score of cluster `g` at the estimate.
    fn cluster_scores(&self) -> &DMatrix<f64>;
    fn cluster_info(&self) -> &[DMatrix<f64>];
    fn info_total(&self) -> &DMatrix<f64>;
    fn n_obs(&self) -> usize;
    fn solve_mode(&self) -> SolveMode;
    /// The restriction imposed during estimation, if any.
    fn restriction(&self) -> Option<Restriction>;

    /// True for the linear probability model.
    fn is_linear(&self) -> bool {
        false
    }

    fn k(&self) -> usize {
        self.coefficients().len()
    }

    fn n_clusters(&self) -> usize {
        self.cluster_scores().nrows()
    }

    /// Indices of the coefficients that were estimated.
    fn free_indices(&self) -> Vec<usize> {
        let fixed = self.restriction().map(|r| r.index);
        (0..self.k()).filter(|&j| Some(j) != fixed).collect()
    }

    fn score(&self, g: usize) -> DVector<f64> {
        self.cluster_scores().row(g).transpose()
    }
}

/// Result of a (possibly restricted) pseudo-ML fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: CoefVector,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub cluster_scores: DMatrix<f64>,
    pub cluster_info: Vec<DMatrix<f64>>,
    pub info_total: DMatrix<f64>,
    pub hessian_total: DMatrix<f64>,
    /// Over the estimated coefficients only.
    pub gradient_inf_norm: f64,
    /// Columns that are identically zero in the sample (pseudo mode only).
    pub rank_deficient_columns: Vec<usize>,
    pub family: LinkFamily,
    pub restriction: Option<Restriction>,
    pub n_obs: usize,
    pub solve_mode: SolveMode,
}

impl ClusterContributions for FitResult {
    fn coefficients(&self) -> &CoefVector {
        &self.beta
    }
    fn cluster_scores(&self) -> &DMatrix<f64> {
        &self.cluster_scores
    }
    fn cluster_info(&self) -> &[DMatrix<f64>] {
        &self.cluster_info
    }
    fn info_total(&self) -> &DMatrix<f64> {
        &self.info_total
    }
    fn n_obs(&self) -> usize {
        self.n_obs
    }
    fn solve_mode(&self) -> SolveMode {
        self.solve_mode
    }
    fn restriction(&self) -> Option<Restriction> {
        self.restriction
    }
}

/// Contributions of one group of `n` identical rows with `s` successes.
struct GroupTerms {
    loglik: f64,
    score: f64,
    hessian: f64,
    info: f64,
}

#[inline]
fn group_terms(family: LinkFamily, eta: f64, n: f64, s: f64) -> GroupTerms {
    let f = n - s;
    match family {
        LinkFamily::Logit => {
            let p = logistic(eta);
            let q = logistic(-eta);
            let mut loglik = 0.0;
            if s > 0.0 {
                loglik += s * family.log_cdf(eta);
            }
            if f > 0.0 {
                loglik += f * family.log_cdf(-eta);
            }
            let w = n * p * q;
            GroupTerms { loglik, score: s * q - f * p, hessian: -w, info: w }
        }
        _ => {
            let mut loglik = 0.0;
            let mut score = 0.0;
            let mut hessian = 0.0;
            if s > 0.0 {
                loglik += s * family.log_cdf(eta);
                score += s * family.score_factor(eta, 1.0);
                hessian += s * family.hessian_factor(eta, 1.0);
            }
            if f > 0.0 {
                loglik += f * family.log_cdf(-eta);
                score += f * family.score_factor(eta, 0.0);
                hessian += f * family.hessian_factor(eta, 0.0);
            }
            GroupTerms { loglik, score, hessian, info: n * family.weight(eta) }
        }
    }
}

#[inline]
fn index(row: &[f64], beta: &[f64]) -> f64 {
    row.iter().zip(beta).map(|(x, b)| x * b).sum()
}

fn clusters_except(design: &Design, omit: Option<usize>) -> impl Iterator<Item = usize> + '_ {
    (0..design.n_clusters()).filter(move |&g| Some(g) != omit)
}

/// Pseudo-loglikelihood at `beta`, optionally omitting one cluster.
pub fn loglik(design: &Design, family: LinkFamily, beta: &DVector<f64>, omit: Option<usize>) -> f64 {
    let b = beta.as_slice();
    let mut ll = 0.0;
    for g in clusters_except(design, omit) {
        for i in design.cluster_groups(g) {
            let eta = index(design.row(i), b);
            let (n, s) = (design.trials(i), design.successes(i));
            if s > 0.0 {
                ll += s * family.log_cdf(eta);
            }
            if n > s {
                ll += (n - s) * family.log_cdf(-eta);
            }
        }
    }
    ll
}

struct Evaluation {
    loglik: f64,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

fn evaluate(design: &Design, family: LinkFamily, beta: &DVector<f64>, omit: Option<usize>) -> Evaluation {
    let k = design.k();
    let b = beta.as_slice();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(k);
    let mut hess = DMatrix::zeros(k, k);
    for g in clusters_except(design, omit) {
        for i in design.cluster_groups(g) {
            let row = design.row(i);
            let t = group_terms(family, index(row, b), design.trials(i), design.successes(i));
            ll += t.loglik;
            for (gj, x) in grad.iter_mut().zip(row) {
                *gj += t.score * x;
            }
            add_outer_upper(&mut hess, row, t.hessian);
        }
    }
    fill_lower(&mut hess);
    Evaluation { loglik: ll, gradient: grad, hessian: hess }
}

/// Per-cluster scores and information blocks, plus the total Hessian.
pub(crate) fn contributions(
    design: &Design,
    family: LinkFamily,
    beta: &DVector<f64>,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>, DMatrix<f64>, DMatrix<f64>) {
    let k = design.k();
    let n_clusters = design.n_clusters();
    let b = beta.as_slice();
    let mut scores = DMatrix::zeros(n_clusters, k);
    let mut info = Vec::with_capacity(n_clusters);
    let mut hess = DMatrix::zeros(k, k);
    let mut total = DMatrix::zeros(k, k);
    for g in 0..n_clusters {
        let mut jg = DMatrix::zeros(k, k);
        for i in design.cluster_groups(g) {
            let row = design.row(i);
            let t = group_terms(family, index(row, b), design.trials(i), design.successes(i));
            for (j, x) in row.iter().enumerate() {
                scores[(g, j)] += t.score * x;
            }
            add_outer_upper(&mut jg, row, t.info);
            add_outer_upper(&mut hess, row, t.hessian);
        }
        fill_lower(&mut jg);
        total += &jg;
        info.push(jg);
    }
    fill_lower(&mut hess);
    (scores, info, total, hess)
}

/// Outcome of the Newton iterations.
#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub beta: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_inf_norm: f64,
}

/// Newton's method with step halving over the coefficients in `free`; the
/// others stay at their values in `start`.
pub(crate) fn newton(
    design: &Design,
    family: LinkFamily,
    start: DVector<f64>,
    free: &[usize],
    omit: Option<usize>,
    opts: &FitOptions,
) -> Result<NewtonOutcome> {
    let mut beta = start;
    let mut previous = beta.clone();
    let mut eval = evaluate(design, family, &beta, omit);
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm = select_vec(&eval.gradient, free).amax();

    while iterations < opts.max_iter {
        gnorm = select_vec(&eval.gradient, free).amax();
        if gnorm <= opts.tol {
            converged = true;
            break;
        }
        let neg_h = -select(&eval.hessian, free, free);
        let step = GramInverse::new(&neg_h, opts.solve_mode)
            .map_err(|_| Error::RankDeficient)?
            .solve(&select_vec(&eval.gradient, free));

        // Near the optimum the loglikelihood change drops below its rounding
        // error, so allow a decrease of that size.
        let slack = 1e-12 * (1.0 + eval.loglik.abs());
        let tiny = 1e-10 * (1.0 + beta.amax());
        let mut t = 1.0;
        let mut accepted = None;
        // The full step is always tried, however short.
        loop {
            let mut cand = beta.clone();
            for (s, &j) in step.iter().zip(free) {
                cand[j] += t * s;
            }
            let ll = loglik(design, family, &cand, omit);
            if ll.is_finite() && ll >= eval.loglik - slack {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
            if t * step.amax() <= tiny {
                break;
            }
        }
        iterations += 1;
        match accepted {
            Some(cand) => {
                previous = std::mem::replace(&mut beta, cand);
                eval = evaluate(design, family, &beta, omit);
            }
            None => {
                // No ascent possible at working precision; the step has
                // stagnated.
                gnorm = select_vec(&eval.gradient, free).amax();
                converged = gnorm <= opts.tol.sqrt();
                break;
            }
        }
    }
    if iterations == opts.max_iter {
        gnorm = select_vec(&eval.gradient, free).amax();
        converged = gnorm <= opts.tol;
    }

    if let SeparationVerdict::Separated { direction } =
        detect_separation(design, family, &beta, Some(&previous), omit)
    {
        return Err(Error::Separation { direction });
    }
    if !converged {
        return Err(Error::NonConvergence { iterations, gradient: gnorm });
    }
    Ok(NewtonOutcome { beta, loglik: eval.loglik, iterations, converged, gradient_inf_norm: gnorm })
}

/// Zero start except the intercept at the log-odds of the mean outcome.
fn default_start(design: &Design, omit: Option<usize>) -> DVector<f64> {
    let mut start = DVector::zeros(design.k());
    if let Some(c) = design.constant_column() {
        let ybar = design.mean_y(omit);
        if ybar > 0.0 && ybar < 1.0 {
            start[c] = (ybar / (1.0 - ybar)).ln();
        }
    }
    start
}

fn finish(
    design: &Design,
    family: LinkFamily,
    out: NewtonOutcome,
    restriction: Option<Restriction>,
    opts: &FitOptions,
) -> FitResult {
    let (cluster_scores, cluster_info, info_total, hessian_total) = contributions(design, family, &out.beta);
    FitResult {
        beta: CoefVector::new(out.beta, design.names().to_vec()),
        loglik: out.loglik,
        converged: out.converged,
        iterations: out.iterations,
        cluster_scores,
        cluster_info,
        info_total,
        hessian_total,
        gradient_inf_norm: out.gradient_inf_norm,
        rank_deficient_columns: match opts.solve_mode {
            SolveMode::Exact => Vec::new(),
            SolveMode::Pseudo => design.zero_columns(None),
        },
        family,
        restriction,
        n_obs: design.n_obs(),
        solve_mode: opts.solve_mode,
    }
}

/// Maximizes the pseudo-loglikelihood over all coefficients.
pub fn fit_mle(design: &Design, family: LinkFamily, opts: &FitOptions) -> Result<FitResult> {
    let free: Vec<usize> = (0..design.k()).collect();
    let out = newton(design, family, default_start(design, None), &free, None, opts)?;
    Ok(finish(design, family, out, None, opts))
}

/// Maximizes the pseudo-loglikelihood subject to `beta[j] = r`. The returned
/// contributions are full `k`-dimensional, evaluated at the restricted
/// estimate.
pub fn fit_restricted(
    design: &Design,
    family: LinkFamily,
    restriction: Restriction,
    opts: &FitOptions,
) -> Result<FitResult> {
    restriction.check(design.k())?;
    let free: Vec<usize> = (0..design.k()).filter(|&j| j != restriction.index).collect();
    let mut start = default_start(design, None);
    start[restriction.index] = restriction.value;
    let out = newton(design, family, start, &free, None, opts)?;
    Ok(finish(design, family, out, Some(restriction), opts))
}

/// Re-estimates `fit`'s model without cluster `omit`, starting from `start`
/// (the full-sample estimate when `None`). Restricted fits keep their
/// restriction.
pub fn fit_delete_one(
    design: &Design,
    fit: &FitResult,
    omit: usize,
    start: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<DVector<f64>> {
    let start = start.cloned().unwrap_or_else(|| fit.beta.values.clone());
    let free = fit.free_indices();
    Ok(newton(design, fit.family, start, &free, Some(omit), opts)?.beta)
}

/// Separation verdict with a certifying direction when one was found.
#[derive(Debug, Clone, PartialEq)]
pub enum SeparationVerdict {
    None,
    Separated { direction: Vec<f64> },
}

/// Checks whether the data admit a (quasi-)perfect classifier near the
/// current iterate. Triggered by extreme linear indices or fitted
/// probabilities; a verdict of `Separated` always comes with a direction `d`
/// such that `x d >= 0` for every success and `x d <= 0` for every failure,
/// with at least one strict inequality.
pub fn detect_separation(
    design: &Design,
    family: LinkFamily,
    beta: &DVector<f64>,
    previous: Option<&DVector<f64>>,
    omit: Option<usize>,
) -> SeparationVerdict {
    let b = beta.as_slice();
    let mut triggered = false;
    for g in clusters_except(design, omit) {
        for i in design.cluster_groups(g) {
            let eta = index(design.row(i), b);
            let (n, s) = (design.trials(i), design.successes(i));
            let p_obs = if s == n {
                family.cdf(eta)
            } else if s == 0.0 {
                family.cdf(-eta)
            } else {
                0.0
            };
            if eta.abs() > SEPARATION_INDEX || p_obs > SEPARATION_PROB_FLOOR {
                triggered = true;
            }
        }
    }
    if !triggered {
        return SeparationVerdict::None;
    }

    let mut candidates = vec![beta.clone()];
    if let Some(prev) = previous {
        candidates.push(beta - prev);
    }
    let k = design.k();
    let mut info = DMatrix::zeros(k, k);
    for g in clusters_except(design, omit) {
        for i in design.cluster_groups(g) {
            let row = design.row(i);
            add_outer_upper(&mut info, row, design.trials(i) * family.weight(index(row, b)));
        }
    }
    fill_lower(&mut info);
    let eig = SymmetricEigen::new(info);
    let top = eig.eigenvalues.amax();
    for (c, &l) in eig.eigenvalues.iter().enumerate() {
        if l <= 1e-8 * top {
            let v = eig.eigenvectors.column(c).into_owned();
            candidates.push(-&v);
            candidates.push(v);
        }
    }

    for d in candidates {
        let scale = d.amax();
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        let d = d / scale;
        if certifies(design, &d, omit) {
            let direction = d.iter().map(|&v| if v.abs() < 1e-8 { 0.0 } else { v }).collect();
            return SeparationVerdict::Separated { direction };
        }
    }
    SeparationVerdict::None
}

fn certifies(design: &Design, d: &DVector<f64>, omit: Option<usize>) -> bool {
    let d = d.as_slice();
    let mut strict = false;
    for g in clusters_except(design, omit) {
        for i in design.cluster_groups(g) {
            let row = design.row(i);
            let tol = 1e-7 * row.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            let m = index(row, d);
            if design.successes(i) > 0.0 && m < -tol {
                return false;
            }
            if design.failures(i) > 0.0 && m > tol {
                return false;
            }
            strict |= m.abs() > tol;
        }
    }
    strict
}

/// OLS estimates of the linear probability model, in the same per-cluster
/// layout as [`FitResult`].
#[derive(Debug, Clone)]
pub struct LpmFitResult {
    pub delta: CoefVector,
    /// Row `g` is `X_g' u_g`.
    pub cluster_scores: DMatrix<f64>,
    /// `X_g' X_g`.
    pub cluster_info: Vec<DMatrix<f64>>,
    pub info_total: DMatrix<f64>,
    pub restriction: Option<Restriction>,
    pub n_obs: usize,
    pub solve_mode: SolveMode,
}

impl ClusterContributions for LpmFitResult {
    fn is_linear(&self) -> bool {
        true
    }
    fn coefficients(&self) -> &CoefVector {
        &self.delta
    }
    fn cluster_scores(&self) -> &DMatrix<f64> {
        &self.cluster_scores
    }
    fn cluster_info(&self) -> &[DMatrix<f64>] {
        &self.cluster_info
    }
    fn info_total(&self) -> &DMatrix<f64> {
        &self.info_total
    }
    fn n_obs(&self) -> usize {
        self.n_obs
    }
    fn solve_mode(&self) -> SolveMode {
        self.solve_mode
    }
    fn restriction(&self) -> Option<Restriction> {
        self.restriction
    }
}

/// Least squares for `y = X delta + u`.
pub fn fit_lpm(design: &Design) -> Result<LpmFitResult> {
    lpm(design, None, SolveMode::Exact)
}

/// Least squares subject to `delta[j] = r`.
pub fn fit_lpm_restricted(design: &Design, restriction: Restriction) -> Result<LpmFitResult> {
    restriction.check(design.k())?;
    lpm(design, Some(restriction), SolveMode::Exact)
}

/// Least squares with an explicit solve mode (pseudo for fixed effects).
pub fn fit_lpm_with(design: &Design, restriction: Option<Restriction>, mode: SolveMode) -> Result<LpmFitResult> {
    if let Some(r) = restriction {
        r.check(design.k())?;
    }
    lpm(design, restriction, mode)
}

fn lpm(design: &Design, restriction: Option<Restriction>, mode: SolveMode) -> Result<LpmFitResult> {
    let k = design.k();
    let n_clusters = design.n_clusters();
    let mut info = Vec::with_capacity(n_clusters);
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for g in 0..n_clusters {
        let mut jg = DMatrix::zeros(k, k);
        for i in design.cluster_groups(g) {
            let row = design.row(i);
            add_outer_upper(&mut jg, row, design.trials(i));
            for (t, x) in xty.iter_mut().zip(row) {
                *t += design.successes(i) * x;
            }
        }
        fill_lower(&mut jg);
        xtx += &jg;
        info.push(jg);
    }

    let fixed = restriction.map(|r| r.index);
    let free: Vec<usize> = (0..k).filter(|&j| Some(j) != fixed).collect();
    let mut rhs = select_vec(&xty, &free);
    if let Some(r) = restriction {
        for (t, &j) in rhs.iter_mut().zip(&free) {
            *t -= r.value * xtx[(j, r.index)];
        }
    }
    let solver = GramInverse::new(&select(&xtx, &free, &free), mode).map_err(|_| Error::RankDeficient)?;
    let sol = solver.solve(&rhs);
    let mut delta = DVector::zeros(k);
    for (v, &j) in sol.iter().zip(&free) {
        delta[j] = *v;
    }
    if let Some(r) = restriction {
        delta[r.index] = r.value;
    }

    let d = delta.as_slice();
    let mut scores = DMatrix::zeros(n_clusters, k);
    for g in 0..n_clusters {
        for i in design.cluster_groups(g) {
            let row = design.row(i);
            let resid = design.successes(i) - design.trials(i) * index(row, d);
            for (j, x) in row.iter().enumerate() {
                scores[(g, j)] += resid * x;
            }
        }
    }
    Ok(LpmFitResult {
        delta: CoefVector::new(delta, design.names().to_vec()),
        cluster_scores: scores,
        cluster_info: info,
        info_total: xtx,
        restriction,
        n_obs: design.n_obs(),
        solve_mode: mode,
    })
}

/// Observation-level LPM residuals `y - X delta`, in the dataset's row order.
pub fn lpm_residuals(data: &crate::data::Dataset, fit: &LpmFitResult) -> Vec<f64> {
    let d = fit.delta.values.as_slice();
    (0..data.n_obs()).map(|i| data.y()[i] - index(data.row(i), d)).collect()
}
