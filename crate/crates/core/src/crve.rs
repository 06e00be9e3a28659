//! Cluster-robust variance matrix estimators and the tests built on them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::data::{CoefVector, Design, LinearRestrictions, Restriction};
use crate::error::{Error, Result};
use crate::estimator::{fit_delete_one, ClusterContributions, FitOptions, FitResult};
use crate::linalg::{cholesky_checked, select, select_vec, sym_inv_sqrt, sym_sqrt, symmetrize, GramInverse, SolveMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceKind {
    Cv1,
    Cv1H,
    Cv3,
    Cv3J,
    Cv3L,
    Cv2L,
    BootSe,
}

/// Reference distribution for t statistics and symmetric intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum DofReference {
    /// Student t with `G - 1` degrees of freedom.
    #[default]
    T,
    Normal,
}

/// Small-sample factor convention for CV1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum DofStyle {
    /// `G/(G-1) * (N-1)/(N-k)`.
    #[default]
    Full,
    /// `G/(G-1)` only.
    Stata,
}

/// Centering of the delete-one estimates in the jackknife.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Center {
    /// Around the full-sample estimate (CV3).
    #[default]
    Mle,
    /// Around the mean of the delete-one estimates (CV3J).
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatrix {
    pub matrix: DMatrix<f64>,
    pub kind: VarianceKind,
    pub dof_reference: DofReference,
    pub n_clusters: usize,
    /// Clusters whose delete-one subsample was separated and left out.
    pub dropped_clusters: Vec<usize>,
}

impl VarianceMatrix {
    fn new(matrix: DMatrix<f64>, kind: VarianceKind, n_clusters: usize) -> Self {
        Self {
            matrix: symmetrize(matrix),
            kind,
            dof_reference: DofReference::T,
            n_clusters,
            dropped_clusters: Vec::new(),
        }
    }

    pub fn se(&self, j: usize) -> f64 {
        self.matrix[(j, j)].max(0.0).sqrt()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|j| self.se(j)).collect()
    }

    pub fn with_reference(mut self, reference: DofReference) -> Self {
        self.dof_reference = reference;
        self
    }
}

/// `G/(G-1) * (N-1)/(N-k)`, or `G/(G-1)` in the Stata style.
pub fn small_sample_factor(g: usize, n: usize, k: usize, style: DofStyle) -> f64 {
    let g = g as f64;
    let base = g / (g - 1.0);
    match style {
        DofStyle::Full => base * (n as f64 - 1.0) / (n as f64 - k as f64),
        DofStyle::Stata => base,
    }
}

fn bread<C: ClusterContributions + ?Sized>(fit: &C) -> Result<DMatrix<f64>> {
    GramInverse::new(fit.info_total(), fit.solve_mode())
        .map(|g| g.inverse())
        .map_err(|_| Error::SingularInformation)
}

fn meat<C: ClusterContributions + ?Sized>(fit: &C) -> DMatrix<f64> {
    let s = fit.cluster_scores();
    s.transpose() * s
}

/// The CV1 sandwich `c J^-1 (sum s_g s_g') J^-1`.
pub fn cv1<C: ClusterContributions + ?Sized>(fit: &C, style: DofStyle) -> Result<VarianceMatrix> {
    let b = bread(fit)?;
    let c = small_sample_factor(fit.n_clusters(), fit.n_obs(), fit.k(), style);
    Ok(VarianceMatrix::new(&b * meat(fit) * &b * c, VarianceKind::Cv1, fit.n_clusters()))
}

/// CV1 with the inverse negative Hessian as the bread.
pub fn cv1h(fit: &FitResult, style: DofStyle) -> Result<VarianceMatrix> {
    let neg_h = -&fit.hessian_total;
    let b = match fit.solve_mode {
        SolveMode::Exact => cholesky_checked(&neg_h).ok_or(Error::SingularHessian)?.inverse(),
        SolveMode::Pseudo => GramInverse::new(&neg_h, SolveMode::Pseudo)?.inverse(),
    };
    let c = small_sample_factor(fit.n_clusters(), fit.n_obs, fit.k(), style);
    Ok(VarianceMatrix::new(&b * meat(fit) * &b * c, VarianceKind::Cv1H, fit.n_clusters()))
}

/// Delete-one-cluster estimates from full refits.
#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeEstimates {
    /// `None` where the subsample was separated.
    pub betas: Vec<Option<DVector<f64>>>,
    pub dropped: Vec<usize>,
}

impl JackknifeEstimates {
    pub fn kept(&self) -> impl Iterator<Item = (usize, &DVector<f64>)> {
        self.betas.iter().enumerate().filter_map(|(g, b)| b.as_ref().map(|b| (g, b)))
    }
}

/// Refits the model once per omitted cluster, in parallel, warm-started at
/// the full-sample estimate. Separated subsamples are recorded and skipped;
/// more than 10% of them is an error.
pub fn jackknife_estimates(design: &Design, fit: &FitResult, opts: &FitOptions) -> Result<JackknifeEstimates> {
    let g = design.n_clusters();
    if g < 2 {
        return Err(Error::Invalid("the jackknife needs at least two clusters".into()));
    }
    let opts = FitOptions { solve_mode: fit.solve_mode, ..*opts };
    let results: Vec<Result<DVector<f64>>> =
        (0..g).into_par_iter().map(|omit| fit_delete_one(design, fit, omit, None, &opts)).collect();
    let mut betas = Vec::with_capacity(g);
    let mut dropped = Vec::new();
    for (omit, r) in results.into_iter().enumerate() {
        match r {
            Ok(b) => betas.push(Some(b)),
            Err(Error::Separation { .. }) => {
                dropped.push(omit);
                betas.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if dropped.len() as f64 > 0.1 * g as f64 {
        return Err(Error::TooManyDropped { dropped: dropped.len(), clusters: g });
    }
    Ok(JackknifeEstimates { betas, dropped })
}

/// `(G-1)/G sum (b_g - c)(b_g - c)'` over the kept delete-one estimates.
pub fn cv3_from_estimates(beta: &DVector<f64>, jack: &JackknifeEstimates, center: Center) -> VarianceMatrix {
    let g = jack.betas.len();
    let k = beta.len();
    let c = match center {
        Center::Mle => beta.clone(),
        Center::Mean => {
            let kept = jack.kept().count().max(1) as f64;
            jack.kept().fold(DVector::zeros(k), |acc, (_, b)| acc + b) / kept
        }
    };
    let mut v = DMatrix::zeros(k, k);
    for (_, b) in jack.kept() {
        let d = b - &c;
        v += &d * d.transpose();
    }
    let kind = match center {
        Center::Mle => VarianceKind::Cv3,
        Center::Mean => VarianceKind::Cv3J,
    };
    let mut out = VarianceMatrix::new(v * ((g as f64 - 1.0) / g as f64), kind, g);
    out.dropped_clusters = jack.dropped.clone();
    out
}

/// The jackknife CRVE from `G` delete-one refits.
pub fn cv3(design: &Design, fit: &FitResult, center: Center, opts: &FitOptions) -> Result<VarianceMatrix> {
    let jack = jackknife_estimates(design, fit, opts)?;
    Ok(cv3_from_estimates(&fit.beta.values, &jack, center))
}

/// One-step approximations `b_g = -(J - J_g)^-1 s_g` to the delete-one
/// differences, stacked as a `G x k` matrix. For restricted fits only the
/// free coefficients move; the restricted column is zero.
pub fn delete_one_linearized<C: ClusterContributions + ?Sized>(fit: &C) -> Result<DMatrix<f64>> {
    let free = fit.free_indices();
    let k = fit.k();
    let g = fit.n_clusters();
    let j_ff = select(fit.info_total(), &free, &free);
    let mut out = DMatrix::zeros(g, k);
    for c in 0..g {
        let jg = select(&fit.cluster_info()[c], &free, &free);
        let s = select_vec(&fit.score(c), &free);
        let sub = GramInverse::new(&(&j_ff - jg), fit.solve_mode())
            .map_err(|_| Error::SingularSubsampleInformation { cluster: c })?;
        let b = -sub.solve(&s);
        for (v, &j) in b.iter().zip(&free) {
            out[(c, j)] = *v;
        }
    }
    Ok(out)
}

/// `(G-1)/G sum b_g b_g'` from a stack of linearized delete-one steps.
pub fn cv3l_from_steps(steps: &DMatrix<f64>) -> VarianceMatrix {
    let g = steps.nrows() as f64;
    VarianceMatrix::new(steps.transpose() * steps * ((g - 1.0) / g), VarianceKind::Cv3L, steps.nrows())
}

/// The linearized jackknife CRVE.
pub fn cv3l<C: ClusterContributions + ?Sized>(fit: &C) -> Result<VarianceMatrix> {
    Ok(cv3l_from_steps(&delete_one_linearized(fit)?))
}

/// Bias-reduced linearization: scores rescaled by
/// `J^(1/2) (I - A_g)^(-1/2) J^(-1/2)` with `A_g = J^(-1/2) J_g J^(-1/2)`,
/// then sandwiched with `J^-1` and no scalar factor.
pub fn cv2l<C: ClusterContributions + ?Sized>(fit: &C) -> Result<VarianceMatrix> {
    let j = fit.info_total();
    let k = fit.k();
    let root = sym_sqrt(j);
    let inv_root = sym_inv_sqrt(j).map_err(|_| Error::SingularInformation)?;
    let mut m = DMatrix::zeros(k, k);
    for (c, jg) in fit.cluster_info().iter().enumerate() {
        let a = symmetrize(&inv_root * jg * &inv_root);
        let adj = sym_inv_sqrt(&(DMatrix::identity(k, k) - a)).map_err(|_| Error::NonPdAdjustment { cluster: c })?;
        let s = &root * adj * &inv_root * fit.score(c);
        m += &s * s.transpose();
    }
    let b = bread(fit)?;
    Ok(VarianceMatrix::new(&b * m * &b, VarianceKind::Cv2L, fit.n_clusters()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    Wald,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// `None` for the normal (infinite degrees of freedom).
    pub dof: Option<usize>,
    pub p_value: f64,
    pub kind: TestKind,
}

/// Wald statistic for `R beta = r` with a chi-squared(r) P value.
pub fn wald(beta: &CoefVector, v: &VarianceMatrix, restr: &LinearRestrictions) -> Result<TestResult> {
    let r = &restr.matrix;
    let d = r * &beta.values - &restr.rhs;
    let rvr = symmetrize(r * &v.matrix * r.transpose());
    let chol = cholesky_checked(&rvr).ok_or(Error::SingularRvr)?;
    let w = d.dot(&chol.solve(&d)).max(0.0);
    let q = r.nrows();
    let p = ChiSquared::new(q as f64).expect("positive degrees of freedom").sf(w);
    Ok(TestResult { statistic: w, dof: Some(q), p_value: p.clamp(0.0, 1.0), kind: TestKind::Wald })
}

/// Degrees of freedom used with `reference` for `g` clusters.
pub fn reference_dof(reference: DofReference, g: usize) -> Option<usize> {
    match reference {
        DofReference::T => Some(g - 1),
        DofReference::Normal => None,
    }
}

/// Two-sided P value of `t` under t(dof), or the normal when `dof` is `None`.
pub fn two_sided_p(t: f64, dof: Option<usize>) -> f64 {
    let tail = match dof {
        Some(d) => StudentsT::new(0.0, 1.0, d as f64).expect("positive degrees of freedom").sf(t.abs()),
        None => Normal::standard().sf(t.abs()),
    };
    (2.0 * tail).clamp(0.0, 1.0)
}

/// `t = (beta_j - r) / se_j` with a two-sided P value.
pub fn t_stat(beta: &CoefVector, v: &VarianceMatrix, restr: Restriction, reference: DofReference) -> Result<TestResult> {
    restr.check(beta.len())?;
    let var = v.matrix[(restr.index, restr.index)];
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let t = (beta.get(restr.index) - restr.value) / var.sqrt();
    let dof = reference_dof(reference, v.n_clusters);
    Ok(TestResult { statistic: t, dof, p_value: two_sided_p(t, dof), kind: TestKind::T })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit_mle, FitOptions};
    use crate::link::LinkFamily;

    struct Toy {
        coef: CoefVector,
        scores: DMatrix<f64>,
        info: Vec<DMatrix<f64>>,
        total: DMatrix<f64>,
        n: usize,
    }

    impl Toy {
        fn new(scores: DMatrix<f64>, info: Vec<DMatrix<f64>>, n: usize) -> Self {
            let k = scores.ncols();
            let total = info.iter().fold(DMatrix::zeros(k, k), |a, b| a + b);
            let coef = CoefVector::new(DVector::zeros(k), (0..k).map(|j| format!("x{j}")).collect());
            Self { coef, scores, info, total, n }
        }
    }

    impl ClusterContributions for Toy {
        fn coefficients(&self) -> &CoefVector {
            &self.coef
        }
        fn cluster_scores(&self) -> &DMatrix<f64> {
            &self.scores
        }
        fn cluster_info(&self) -> &[DMatrix<f64>] {
            &self.info
        }
        fn info_total(&self) -> &DMatrix<f64> {
            &self.total
        }
        fn n_obs(&self) -> usize {
            self.n
        }
        fn solve_mode(&self) -> SolveMode {
            SolveMode::Exact
        }
        fn restriction(&self) -> Option<Restriction> {
            None
        }
    }

    #[test]
    fn small_sample_factors() {
        assert!((small_sample_factor(12, 100, 3, DofStyle::Full) - 12.0 / 11.0 * 99.0 / 97.0).abs() < 1e-15);
        assert_eq!(small_sample_factor(12, 100, 3, DofStyle::Stata), 12.0 / 11.0);
    }

    #[test]
    fn zero_scores_give_zero_variance() {
        let toy = Toy::new(DMatrix::zeros(3, 1), vec![DMatrix::from_element(1, 1, 2.0); 3], 30);
        assert_eq!(cv1(&toy, DofStyle::Full).unwrap().matrix[(0, 0)], 0.0);
        assert_eq!(delete_one_linearized(&toy).unwrap(), DMatrix::zeros(3, 1));
    }

    #[test]
    fn two_cluster_linearized_steps() {
        // Identical information halves: b_1 = -(J/2)^-1 s_1.
        let jg = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let scores = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, -0.3, 0.2]);
        let toy = Toy::new(scores, vec![jg.clone(), jg.clone()], 40);
        let b = delete_one_linearized(&toy).unwrap();
        let inv = jg.clone().try_inverse().unwrap();
        let expected = -(&inv * DVector::from_vec(vec![0.3, -0.2]));
        assert!((b.row(0).transpose() - &expected).amax() < 1e-14);
        let v = cv3l(&toy).unwrap();
        let direct = (b.row(0).transpose() * b.row(0) + b.row(1).transpose() * b.row(1)) * 0.5;
        assert!((v.matrix - direct).amax() < 1e-14);
    }

    #[test]
    fn cv2l_adjustment_matches_eigen_oracle() {
        // G identical blocks: A_g = I/G, so the rescaling is (1 - 1/G)^(-1/2).
        let g = 4;
        let jg = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]);
        let scores = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, -0.3, 0.1, 0.4, -0.5, -0.2, 0.2]);
        let toy = Toy::new(scores.clone(), vec![jg.clone(); g], 80);
        let v = cv2l(&toy).unwrap();
        let total = jg * g as f64;
        let inv = total.try_inverse().unwrap();
        let scale = 1.0 / (1.0 - 1.0 / g as f64);
        let expected = &inv * (scores.transpose() * &scores) * &inv * scale;
        assert!((v.matrix - expected).amax() < 1e-12);

        let jnull = DMatrix::zeros(2, 2);
        let toy = Toy::new(scores.rows(0, 2).into_owned(), vec![DMatrix::identity(2, 2), jnull], 20);
        assert_eq!(cv2l(&toy).unwrap_err(), Error::NonPdAdjustment { cluster: 0 });
    }

    #[test]
    fn cv2l_vanishing_cluster_keeps_its_score() {
        let j0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let tiny = DMatrix::identity(2, 2) * 1e-12;
        let scores = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 0.4, -0.1]);
        let toy = Toy::new(scores, vec![j0.clone(), j0.clone(), tiny], 10);
        let v = cv2l(&toy).unwrap();
        let inv = toy.total.clone().try_inverse().unwrap();
        let s = DVector::from_vec(vec![0.4, -0.1]);
        let expected = &inv * &s * s.transpose() * &inv;
        assert!((v.matrix - expected).amax() < 1e-9);
    }

    #[test]
    fn t_and_wald_agree_for_one_restriction() {
        let beta = CoefVector::new(DVector::from_vec(vec![0.5, -1.2]), vec!["a".into(), "b".into()]);
        let v = VarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]), VarianceKind::Cv1, 12);
        let t = t_stat(&beta, &v, Restriction::zero(1), DofReference::T).unwrap();
        assert!((t.statistic + 4.0).abs() < 1e-12);
        let w = wald(&beta, &v, &LinearRestrictions::from(Restriction::zero(1)).for_k(2).unwrap()).unwrap();
        assert!((w.statistic - 16.0).abs() < 1e-10);

        // Two restrictions, explicit 2x2 inverse.
        let lr = LinearRestrictions::new(DMatrix::identity(2, 2), DVector::from_vec(vec![0.0, -1.0])).unwrap();
        let w = wald(&beta, &v, &lr).unwrap();
        let (a, b, c) = (0.04, 0.01, 0.09);
        let det = a * c - b * b;
        let (d0, d1) = (0.5, -0.2);
        let expected = (c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det;
        assert!((w.statistic - expected).abs() < 1e-12);
        assert_eq!(w.dof, Some(2));

        let null = LinearRestrictions::new(DMatrix::identity(2, 2), beta.values.clone()).unwrap();
        let w = wald(&beta, &v, &null).unwrap();
        assert_eq!((w.statistic, w.p_value), (0.0, 1.0));
    }

    #[test]
    fn t_stat_plumbing() {
        let beta = CoefVector::new(DVector::from_vec(vec![0.346811]), vec!["x".into()]);
        let v = VarianceMatrix::new(DMatrix::from_element(1, 1, 0.190638f64.powi(2)), VarianceKind::Cv1, 12);
        let t = t_stat(&beta, &v, Restriction::zero(0), DofReference::T).unwrap();
        assert!((t.statistic - 1.8192).abs() < 5e-5);
        assert!((t.p_value - 0.0962).abs() < 5e-5);
        let z = t_stat(&beta, &v, Restriction::zero(0), DofReference::Normal).unwrap();
        assert!(z.p_value < t.p_value);
        assert_eq!(z.dof, None);

        let zero = CoefVector::new(DVector::from_vec(vec![0.0]), vec!["x".into()]);
        let t = t_stat(&zero, &v, Restriction::zero(0), DofReference::T).unwrap();
        assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
        let flat = VarianceMatrix::new(DMatrix::zeros(1, 1), VarianceKind::Cv1, 12);
        assert_eq!(t_stat(&beta, &flat, Restriction::zero(0), DofReference::T).unwrap_err(), Error::ZeroVariance);
    }

    #[test]
    fn singular_wald_is_reported() {
        let beta = CoefVector::new(DVector::from_vec(vec![1.0, 1.0]), vec!["a".into(), "b".into()]);
        let v = VarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), VarianceKind::Cv1, 5);
        let lr = LinearRestrictions::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(wald(&beta, &v, &lr).unwrap_err(), Error::SingularRvr);
    }

    #[test]
    fn probit_hessian_bread_differs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (g, per) = (8, 30);
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut cl = Vec::new();
        for c in 0..g {
            for _ in 0..per {
                let v: f64 = rng.random_range(-1.0..1.0);
                x.extend([1.0, v]);
                y.push(if rng.random::<f64>() < crate::link::logistic(0.5 * v) { 1.0 } else { 0.0 });
                cl.push(c);
            }
        }
        let labels = (0..g).map(|c| c.to_string()).collect();
        let d = crate::data::Dataset::from_parts("y", y, vec!["c".into(), "x".into()], x, "g", cl, labels).unwrap();
        let opts = FitOptions::default();
        let logit = fit_mle(d.design(), LinkFamily::Logit, &opts).unwrap();
        let a = cv1(&logit, DofStyle::Full).unwrap();
        let b = cv1h(&logit, DofStyle::Full).unwrap();
        assert!((&a.matrix - &b.matrix).amax() <= 1e-10 * a.matrix.amax());
        let probit = fit_mle(d.design(), LinkFamily::Probit, &opts).unwrap();
        let a = cv1(&probit, DofStyle::Full).unwrap();
        let b = cv1h(&probit, DofStyle::Full).unwrap();
        let rel = a.matrix.zip_map(&b.matrix, |p, q| ((p - q) / p).abs()).amax();
        assert!(rel > 1e-6);
    }
}
