//! Symmetric binary-response link families.
//!
//! Everything is expressed through two ratios, `f(x)/F(x)` and `f'(x)/f(x)`,
//! which stay finite far into the tails where `F` itself underflows.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Beyond this point the normal tail uses its asymptotic series.
const TAIL: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum LinkFamily {
    #[default]
    Logit,
    Probit,
}

impl LinkFamily {
    /// `F(x)`.
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            LinkFamily::Logit => logistic(x),
            LinkFamily::Probit => 0.5 * erfc(-x / std::f64::consts::SQRT_2),
        }
    }

    /// `f(x)`.
    pub fn pdf(self, x: f64) -> f64 {
        match self {
            LinkFamily::Logit => logistic(x) * logistic(-x),
            LinkFamily::Probit => (-0.5 * x * x).exp() / SQRT_2PI,
        }
    }

    /// `f'(x)`.
    pub fn pdf_deriv(self, x: f64) -> f64 {
        self.pdf(x) * self.dlog_pdf(x)
    }

    /// `log F(x)` without cancellation in either tail.
    pub fn log_cdf(self, x: f64) -> f64 {
        match self {
            LinkFamily::Logit => {
                if x > 0.0 {
                    -(-x).exp().ln_1p()
                } else {
                    x - x.exp().ln_1p()
                }
            }
            LinkFamily::Probit => {
                if x > 0.0 {
                    (-self.cdf(-x)).ln_1p()
                } else if x >= -TAIL {
                    self.cdf(x).ln()
                } else {
                    let z = -x;
                    -0.5 * z * z - z.ln() - LN_SQRT_2PI + normal_tail_series(z).ln()
                }
            }
        }
    }

    /// `f(x) / F(x)`.
    pub fn ratio(self, x: f64) -> f64 {
        match self {
            LinkFamily::Logit => logistic(-x),
            LinkFamily::Probit => {
                if x >= -TAIL {
                    self.pdf(x) / self.cdf(x)
                } else {
                    let z = -x;
                    z / normal_tail_series(z)
                }
            }
        }
    }

    /// `f'(x) / f(x)`.
    pub fn dlog_pdf(self, x: f64) -> f64 {
        match self {
            LinkFamily::Logit => logistic(-x) - logistic(x),
            LinkFamily::Probit => -x,
        }
    }

    /// Information weight `f(x)^2 / (F(x) F(-x))`; `Λ(x)Λ(-x)` for logit.
    pub fn weight(self, x: f64) -> f64 {
        match self {
            LinkFamily::Logit => logistic(x) * logistic(-x),
            LinkFamily::Probit => self.ratio(x) * self.ratio(-x),
        }
    }

    /// Scalar multiplying the regressor row in the score of one observation.
    pub fn score_factor(self, x: f64, y: f64) -> f64 {
        y * self.ratio(x) - (1.0 - y) * self.ratio(-x)
    }

    /// Scalar multiplying `row' row` in the Hessian of one observation.
    pub fn hessian_factor(self, x: f64, y: f64) -> f64 {
        if self == LinkFamily::Logit {
            // The general form loses digits to cancellation in the tails.
            return -self.weight(x);
        }
        let one = {
            let r = self.ratio(x);
            r * (self.dlog_pdf(x) - r)
        };
        let zero = {
            let r = self.ratio(-x);
            r * (self.dlog_pdf(-x) - r)
        };
        y * one + (1.0 - y) * zero
    }

    /// Log-likelihood of one observation.
    pub fn loglik(self, x: f64, y: f64) -> f64 {
        y * self.log_cdf(x) + (1.0 - y) * self.log_cdf(-x)
    }

    /// Score contribution of one observation with linear index `x`.
    pub fn score_contrib(self, x: f64, y: f64, row: &[f64]) -> DVector<f64> {
        let f = self.score_factor(x, y);
        DVector::from_iterator(row.len(), row.iter().map(|r| f * r))
    }

    /// Hessian contribution of one observation with linear index `x`.
    pub fn hessian_contrib(self, x: f64, y: f64, row: &[f64]) -> DMatrix<f64> {
        let h = self.hessian_factor(x, y);
        let v = DVector::from_column_slice(row);
        &v * v.transpose() * h
    }
}

/// Numerically stable `1 / (1 + exp(-x))`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `z Φ(-z) / φ(z)` for large `z`.
fn normal_tail_series(z: f64) -> f64 {
    let w = 1.0 / (z * z);
    1.0 - w * (1.0 - 3.0 * w * (1.0 - 5.0 * w * (1.0 - 7.0 * w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FAMILIES: [LinkFamily; 2] = [LinkFamily::Logit, LinkFamily::Probit];

    #[test]
    fn cdf_values() {
        assert_eq!(LinkFamily::Logit.cdf(0.0), 0.5);
        assert!((LinkFamily::Logit.cdf(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((LinkFamily::Probit.cdf(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn weights_at_zero() {
        assert_eq!(LinkFamily::Logit.weight(0.0), 0.25);
        let expected = 1.0 / (2.0 * std::f64::consts::PI) / 0.25;
        assert!((LinkFamily::Probit.weight(0.0) - expected).abs() < 1e-14);
        assert!((expected - 0.636_619_772).abs() < 1e-9);
    }

    #[test]
    fn cdf_symmetry_on_grid() {
        for fam in FAMILIES {
            for i in 0..=400 {
                let x = -20.0 + 0.1 * i as f64;
                assert!((fam.cdf(x) + fam.cdf(-x) - 1.0).abs() < 1e-12, "{fam:?} {x}");
                assert!((fam.pdf(x) - fam.pdf(-x)).abs() < 1e-15);
                assert!(fam.pdf(x) >= 0.0);
                if i > 0 {
                    assert!(fam.cdf(x) >= fam.cdf(x - 0.1));
                }
            }
        }
    }

    #[test]
    fn logit_derivative_matches_central_difference() {
        let f = LinkFamily::Logit;
        for i in 0..=80 {
            let x = -10.0 + 0.25 * i as f64;
            let h = 1e-5;
            // Difference the smaller tail to avoid cancellation near 1.
            let fd = if x > 0.0 {
                (f.cdf(-x + h) - f.cdf(-x - h)) / (2.0 * h)
            } else {
                (f.cdf(x + h) - f.cdf(x - h)) / (2.0 * h)
            };
            let an = f.cdf(x) * f.cdf(-x);
            assert!(((fd - an) / an).abs() < 1e-8, "{x}: {fd} vs {an}");
        }
    }

    #[test]
    fn logit_score_at_zero() {
        let s = LinkFamily::Logit.score_contrib(0.0, 0.0, &[1.0, 2.0]);
        assert_eq!(s.as_slice(), &[-0.5, -1.0]);
        let s = LinkFamily::Logit.score_contrib(60.0, 1.0, &[1.0, 2.0]);
        assert!(s.amax() < 1e-25);
    }

    #[test]
    fn logit_hessian_is_minus_weight() {
        let f = LinkFamily::Logit;
        for i in 0..=80 {
            let x = -10.0 + 0.25 * i as f64;
            for y in [0.0, 1.0] {
                // Generic ratio form of the observation Hessian.
                let r = if y == 1.0 { f.ratio(x) } else { f.ratio(-x) };
                let dl = if y == 1.0 { f.dlog_pdf(x) } else { f.dlog_pdf(-x) };
                let h = r * (dl - r);
                let w = f.weight(x);
                assert!((h + w).abs() <= 1e-10 * w, "{x} {y}: {h} vs {w}");
                assert_eq!(f.hessian_factor(x, y), -w);
            }
        }
        let h = f.hessian_contrib(0.3, 1.0, &[1.0, -2.0, 0.5]);
        assert!((&h - h.transpose()).amax() == 0.0);
        assert!(h.symmetric_eigenvalues().max() <= 1e-15);
    }

    #[test]
    fn probit_hessian_symmetric_at_zero() {
        let f = LinkFamily::Probit;
        assert!((f.hessian_factor(0.0, 0.0) - f.hessian_factor(0.0, 1.0)).abs() < 1e-15);
        assert_eq!(f.pdf_deriv(0.0), 0.0);
    }

    #[test]
    fn probit_tails_are_continuous() {
        let f = LinkFamily::Probit;
        let a = f.ratio(-TAIL + 1e-9);
        let b = f.ratio(-TAIL - 1e-9);
        assert!(((a - b) / a).abs() < 1e-9);
        let a = f.log_cdf(-TAIL + 1e-9);
        let b = f.log_cdf(-TAIL - 1e-9);
        assert!(((a - b) / a).abs() < 1e-9);
        assert!(f.log_cdf(-60.0).is_finite());
        assert!(f.score_factor(-60.0, 1.0).is_finite());
    }

    proptest! {
        #[test]
        fn probit_score_matches_finite_difference(
            beta in proptest::collection::vec(-1.5f64..1.5, 3),
            row in proptest::collection::vec(-2.0f64..2.0, 3),
            y in 0u8..2,
        ) {
            let f = LinkFamily::Probit;
            let y = y as f64;
            let idx = |b: &[f64]| b.iter().zip(&row).map(|(a, r)| a * r).sum::<f64>();
            let s = f.score_contrib(idx(&beta), y, &row);
            for j in 0..3 {
                let h = 1e-6;
                let mut up = beta.clone();
                up[j] += h;
                let mut dn = beta.clone();
                dn[j] -= h;
                let fd = (f.loglik(idx(&up), y) - f.loglik(idx(&dn), y)) / (2.0 * h);
                prop_assert!((fd - s[j]).abs() <= 1e-6 * s[j].abs().max(1e-3), "{} vs {}", fd, s[j]);
            }
        }

        #[test]
        fn logit_weight_is_even(x in -40.0f64..40.0) {
            let f = LinkFamily::Logit;
            prop_assert_eq!(f.weight(x), f.weight(-x));
        }
    }
}
