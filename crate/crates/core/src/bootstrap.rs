//! Wild cluster bootstrap over per-cluster score and information
//! contributions.
//!
//! One engine serves the linearized logit bootstraps (WCLR, WCLU) and the
//! classic linear-model ones (WCR, WCU): both only need `s_g`, `J_g` and `J`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::crve::delete_one_linearized;
use crate::data::Restriction;
use crate::error::{Error, Result};
use crate::estimator::ClusterContributions;
use crate::linalg::{GramInverse, SolveMode};
use crate::rng::{substream, Purpose};

/// Where the contributions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    LogitRestricted,
    LogitUnrestricted,
    LpmRestricted,
    LpmUnrestricted,
}

impl Origin {
    pub fn is_restricted(self) -> bool {
        matches!(self, Origin::LogitRestricted | Origin::LpmRestricted)
    }

    fn of<C: ClusterContributions + ?Sized>(fit: &C) -> Self {
        match (fit.is_linear(), fit.restriction().is_some()) {
            (false, true) => Origin::LogitRestricted,
            (false, false) => Origin::LogitUnrestricted,
            (true, true) => Origin::LpmRestricted,
            (true, false) => Origin::LpmUnrestricted,
        }
    }
}

/// Score vectors and information blocks that drive the bootstrap DGP.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreContributions {
    /// `G x k`.
    pub scores: DMatrix<f64>,
    pub info: Vec<DMatrix<f64>>,
    pub info_total: DMatrix<f64>,
    pub origin: Origin,
    /// Jackknife-transformed ("-S") rather than raw ("-C") scores.
    pub transformed: bool,
    pub restriction: Option<Restriction>,
    pub n_obs: usize,
    pub solve_mode: SolveMode,
}

impl ScoreContributions {
    /// Raw scores of `fit`.
    pub fn classic<C: ClusterContributions + ?Sized>(fit: &C) -> Self {
        Self {
            scores: fit.cluster_scores().clone(),
            info: fit.cluster_info().to_vec(),
            info_total: fit.info_total().clone(),
            origin: Origin::of(fit),
            transformed: false,
            restriction: fit.restriction(),
            n_obs: fit.n_obs(),
            solve_mode: fit.solve_mode(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.scores.nrows()
    }

    pub fn k(&self) -> usize {
        self.scores.ncols()
    }
}

/// `s_g - J_g b_g` with `b_g` the linearized delete-one step over the
/// estimated coefficients.
fn transform<C: ClusterContributions + ?Sized>(fit: &C) -> Result<ScoreContributions> {
    let steps = delete_one_linearized(fit)?;
    let mut out = ScoreContributions::classic(fit);
    for g in 0..out.n_clusters() {
        let adj = &fit.cluster_info()[g] * steps.row(g).transpose();
        for j in 0..out.k() {
            out.scores[(g, j)] -= adj[j];
        }
    }
    out.transformed = true;
    Ok(out)
}

/// Transformed scores `s_g - J_g b_g` of an unrestricted fit.
pub fn transform_scores_unrestricted<C: ClusterContributions + ?Sized>(fit: &C) -> Result<ScoreContributions> {
    if fit.restriction().is_some() {
        return Err(Error::Invalid("expected an unrestricted fit".into()));
    }
    transform(fit)
}

/// Transformed scores of a fit with one coefficient held fixed. Only the
/// free coefficients enter the delete-one adjustment, so the correction
/// spans `k - 1` directions.
pub fn transform_scores_restricted<C: ClusterContributions + ?Sized>(fit: &C) -> Result<ScoreContributions> {
    if fit.restriction().is_none() {
        return Err(Error::UnsupportedRestriction("the fit imposes no restriction".into()));
    }
    transform(fit)
}

/// Auxiliary weight distribution with mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightDistribution {
    /// `+1` or `-1` with probability 1/2 each.
    Rademacher,
    /// Six points `+-sqrt(3/2), +-1, +-sqrt(1/2)` with probability 1/6 each.
    Webb,
}

const WEBB: [f64; 6] = [
    -1.224_744_871_391_589,
    -1.0,
    -std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
    1.0,
    1.224_744_871_391_589,
];

impl WeightDistribution {
    /// Rademacher with 13 or more clusters, Webb otherwise.
    pub fn auto(n_clusters: usize) -> Self {
        if n_clusters >= 13 {
            WeightDistribution::Rademacher
        } else {
            WeightDistribution::Webb
        }
    }

    pub fn atoms(self) -> &'static [f64] {
        match self {
            WeightDistribution::Rademacher => &[-1.0, 1.0],
            WeightDistribution::Webb => &WEBB,
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            WeightDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightDistribution::Webb => WEBB[rng.random_range(0..6)],
        }
    }
}

/// `g` i.i.d. draws from `dist`.
pub fn draw_weights<R: Rng + ?Sized>(g: usize, dist: WeightDistribution, rng: &mut R) -> Vec<f64> {
    (0..g).map(|_| dist.draw(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub weights: WeightDistribution,
    pub seed: u64,
    /// Key that separates the streams of different bootstraps sharing a seed
    /// (for example, Monte Carlo replications).
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub t_obs: f64,
    /// Bootstrap t statistics of the non-degenerate replications.
    pub t_star: Vec<f64>,
    /// `a' b*` for every replication.
    pub beta_star_a: Vec<f64>,
    pub p_sym: f64,
    pub p_et: f64,
    pub reps: usize,
    pub enumeration: bool,
    /// Replications with zero bootstrap variance, excluded from `t_star`.
    pub degenerate: usize,
    pub origin: Origin,
}

impl BootstrapResult {
    /// Standard deviation of `a' b*`; only meaningful when the bootstrap DGP
    /// does not impose the null.
    pub fn boot_se(&self) -> Result<f64> {
        if self.origin.is_restricted() {
            return Err(Error::RestrictedOrigin);
        }
        boot_se(&self.beta_star_a)
    }
}

/// Precomputed per-cluster quantities for one linear combination `a`.
struct Engine {
    /// `q' s_g` with `q = J^-1 a`.
    alpha: Vec<f64>,
    /// `J_g q`, `G x k` row-major.
    gamma: Vec<f64>,
    /// `G x k` row-major scores.
    scores: Vec<f64>,
    j_inv: DMatrix<f64>,
    k: usize,
    factor: f64,
}

impl Engine {
    fn new(c: &ScoreContributions, a: &DVector<f64>) -> Result<Self> {
        let g = c.n_clusters();
        let k = c.k();
        let j_inv = GramInverse::new(&c.info_total, c.solve_mode)
            .map_err(|_| Error::SingularInformation)?
            .inverse();
        let q = &j_inv * a;
        let mut alpha = Vec::with_capacity(g);
        let mut gamma = Vec::with_capacity(g * k);
        let mut scores = Vec::with_capacity(g * k);
        for (h, jg) in c.info.iter().enumerate() {
            let s = c.scores.row(h);
            alpha.push((s * &q)[0]);
            gamma.extend((jg * &q).iter());
            scores.extend(s.iter());
        }
        let (gf, n) = (g as f64, c.n_obs as f64);
        let factor = gf * (n - 1.0) / ((gf - 1.0) * (n - k as f64));
        Ok(Self { alpha, gamma, scores, j_inv, k, factor })
    }

    /// Returns `(a' b*, a' V* a)` for weights `v`.
    fn replicate(&self, v: &[f64], sum: &mut DVector<f64>) -> (f64, f64) {
        let k = self.k;
        sum.fill(0.0);
        let mut num = 0.0;
        for (h, &w) in v.iter().enumerate() {
            num += w * self.alpha[h];
            for j in 0..k {
                sum[j] += w * self.scores[h * k + j];
            }
        }
        let b = &self.j_inv * &*sum;
        let mut den = 0.0;
        for (h, &w) in v.iter().enumerate() {
            let gb: f64 = self.gamma[h * k..(h + 1) * k].iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let e = w * self.alpha[h] - gb;
            den += e * e;
        }
        (num, self.factor * den)
    }
}

/// Runs the wild cluster bootstrap for the linear combination `a' beta`.
///
/// Each replication multiplies every cluster's score by a weight, re-solves
/// `b* = J^-1 sum v_g s_g`, and studentizes `a' b*` with the CV1-form
/// variance of the bootstrap scores `v_g s_g - J_g b*`. When the weights are
/// Rademacher and `2^G <= reps`, all `2^G` sign vectors are enumerated
/// instead.
pub fn run_bootstrap(
    c: &ScoreContributions,
    a: &DVector<f64>,
    t_obs: f64,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let g = c.n_clusters();
    if g < 2 {
        return Err(Error::Invalid("the bootstrap needs at least two clusters".into()));
    }
    if a.len() != c.k() || a.amax() == 0.0 {
        return Err(Error::Invalid("the tested combination must be a nonzero k-vector".into()));
    }
    if cfg.reps == 0 {
        return Err(Error::Invalid("at least one bootstrap replication is required".into()));
    }
    let engine = Engine::new(c, a)?;
    let enumeration = cfg.weights == WeightDistribution::Rademacher && g < 63 && (1u64 << g) <= cfg.reps as u64;
    let reps = if enumeration { 1usize << g } else { cfg.reps };

    let draws: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map_init(
            || (vec![0.0; g], DVector::zeros(c.k())),
            |(v, sum), b| {
                if enumeration {
                    for (h, w) in v.iter_mut().enumerate() {
                        *w = if (b >> h) & 1 == 1 { -1.0 } else { 1.0 };
                    }
                } else {
                    let mut rng = substream(cfg.seed, cfg.stream, Purpose::Bootstrap, b as u64);
                    for w in v.iter_mut() {
                        *w = cfg.weights.draw(&mut rng);
                    }
                }
                engine.replicate(v, sum)
            },
        )
        .collect();

    let mut t_star = Vec::with_capacity(reps);
    let mut beta_star_a = Vec::with_capacity(reps);
    let mut degenerate = 0;
    for (num, var) in draws {
        beta_star_a.push(num);
        if var > 0.0 && var.is_finite() {
            t_star.push(num / var.sqrt());
        } else {
            degenerate += 1;
        }
    }
    if t_star.is_empty() {
        return Err(Error::AllDegenerate);
    }
    Ok(BootstrapResult {
        t_obs,
        p_sym: p_symmetric(t_obs, &t_star),
        p_et: p_equal_tail(t_obs, &t_star),
        t_star,
        beta_star_a,
        reps,
        enumeration,
        degenerate,
        origin: c.origin,
    })
}

/// Share of bootstrap statistics strictly larger in absolute value.
pub fn p_symmetric(t_obs: f64, t_star: &[f64]) -> f64 {
    let above = t_star.iter().filter(|t| t.abs() > t_obs.abs()).count();
    above as f64 / t_star.len() as f64
}

/// `2/B min(#{t* > t}, #{t* <= t})`, capped at one.
pub fn p_equal_tail(t_obs: f64, t_star: &[f64]) -> f64 {
    let above = t_star.iter().filter(|&&t| t > t_obs).count();
    let below = t_star.len() - above;
    (2.0 * above.min(below) as f64 / t_star.len() as f64).min(1.0)
}

/// Sample standard deviation (divisor `B - 1`).
pub fn boot_se(beta_star_a: &[f64]) -> Result<f64> {
    let b = beta_star_a.len();
    if b < 2 {
        return Err(Error::TooFewReplications { got: b, level: f64::NAN });
    }
    let mean = beta_star_a.iter().sum::<f64>() / b as f64;
    let ss: f64 = beta_star_a.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / (b - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(g: usize, k: usize, seed: u64, centered: bool) -> ScoreContributions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scores = DMatrix::from_fn(g, k, |_, _| rng.random_range(-1.0..1.0));
        if centered {
            let mean = scores.row_mean();
            for mut r in scores.row_iter_mut() {
                r -= &mean;
            }
        }
        let info: Vec<DMatrix<f64>> = (0..g)
            .map(|_| {
                let m = DMatrix::from_fn(k, k + 1, |_, _| rng.random_range(-1.0..1.0));
                &m * m.transpose()
            })
            .collect();
        let info_total = info.iter().fold(DMatrix::zeros(k, k), |a, b| a + b);
        ScoreContributions {
            scores,
            info,
            info_total,
            origin: if centered { Origin::LogitUnrestricted } else { Origin::LogitRestricted },
            transformed: false,
            restriction: None,
            n_obs: 20 * g,
            solve_mode: SolveMode::Exact,
        }
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(p_symmetric(1.5, &[2.0, 0.5, 3.0, 1.0]), 0.5);
        assert_eq!(p_symmetric(9.0, &[2.0, -0.5, 3.0, 1.0]), 0.0);
        assert_eq!(p_symmetric(0.0, &[2.0, -0.5, 3.0, 1.0]), 1.0);
        assert_eq!(p_equal_tail(0.0, &[-2.0, -1.0, 1.0, 2.0]), 1.0);
        assert_eq!(p_equal_tail(5.0, &[-2.0, -1.0, 1.0, 2.0]), 0.0);
        assert_eq!(p_equal_tail(1.5, &[-3.0, -1.0, 0.0, 2.0]), 0.5);
    }

    #[test]
    fn boot_se_examples() {
        assert_eq!(boot_se(&[0.3; 5]).unwrap(), 0.0);
        assert!((boot_se(&[-1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weight_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = draw_weights(1000, WeightDistribution::Rademacher, &mut rng);
        assert!(r.iter().all(|&v| v == 1.0 || v == -1.0));
        let w = draw_weights(6000, WeightDistribution::Webb, &mut rng);
        for atom in WEBB {
            let n = w.iter().filter(|&&v| v == atom).count();
            assert!(n > 850 && n < 1150, "{atom}: {n}");
        }
        for dist in [WeightDistribution::Rademacher, WeightDistribution::Webb] {
            let a = dist.atoms();
            let m: f64 = a.iter().sum::<f64>() / a.len() as f64;
            let v: f64 = a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64;
            assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-15);
        }
        assert_eq!(WeightDistribution::auto(12), WeightDistribution::Webb);
        assert_eq!(WeightDistribution::auto(13), WeightDistribution::Rademacher);
    }

    #[test]
    fn all_plus_weights_give_zero_for_centered_scores() {
        let c = toy(6, 3, 2, true);
        let a = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let e = Engine::new(&c, &a).unwrap();
        let (num, var) = e.replicate(&[1.0; 6], &mut DVector::zeros(3));
        assert!(num.abs() < 1e-12 && var > 0.0);
    }

    #[test]
    fn enumeration_is_antisymmetric() {
        let c = toy(8, 3, 3, false);
        let a = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let cfg = BootstrapConfig { reps: 999, weights: WeightDistribution::Rademacher, seed: 1, stream: 0 };
        let r = run_bootstrap(&c, &a, 1.0, &cfg).unwrap();
        assert!(r.enumeration);
        assert_eq!(r.reps, 256);
        assert_eq!(r.degenerate, 0);
        for b in 0..256 {
            let flipped = !b & 0xff;
            assert!((r.t_star[b] + r.t_star[flipped]).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = toy(20, 2, 4, true);
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let cfg = BootstrapConfig { reps: 199, weights: WeightDistribution::Rademacher, seed: 9, stream: 3 };
        let r1 = run_bootstrap(&c, &a, 0.7, &cfg).unwrap();
        let r2 = run_bootstrap(&c, &a, 0.7, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert!(!r1.enumeration);
        let other = run_bootstrap(&c, &a, 0.7, &BootstrapConfig { stream: 4, ..cfg }).unwrap();
        assert_ne!(r1.t_star, other.t_star);
        assert!(r1.boot_se().unwrap() > 0.0);
        let restricted = run_bootstrap(&toy(20, 2, 4, false), &a, 0.7, &cfg).unwrap();
        assert_eq!(restricted.boot_se(), Err(Error::RestrictedOrigin));
    }

    #[test]
    fn three_cluster_enumeration_matches_direct_formula() {
        let c = toy(3, 2, 5, true);
        let a = DVector::from_vec(vec![0.0, 1.0]);
        let cfg = BootstrapConfig { reps: 8, weights: WeightDistribution::Rademacher, seed: 0, stream: 0 };
        let r = run_bootstrap(&c, &a, 0.0, &cfg).unwrap();
        let j_inv = c.info_total.clone().try_inverse().unwrap();
        let mut direct = Vec::new();
        for b in 0..8usize {
            let v: Vec<f64> = (0..3).map(|h| if (b >> h) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let mut s = DVector::zeros(2);
            for h in 0..3 {
                s += c.scores.row(h).transpose() * v[h];
            }
            direct.push((&j_inv * s)[1]);
        }
        for (x, y) in r.beta_star_a.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-12);
        }
        let mean = direct.iter().sum::<f64>() / 8.0;
        let se = (direct.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
        assert!((r.boot_se().unwrap() - se).abs() < 1e-12);
    }
}
