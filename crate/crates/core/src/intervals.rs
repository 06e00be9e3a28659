//! Confidence intervals: symmetric with a reference critical value, and
//! studentized bootstrap.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::crve::VarianceKind;
use crate::error::{Error, Result};

/// Source of the critical values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalValue {
    /// Student t with the given degrees of freedom; `None` for the normal.
    Reference(Option<usize>),
    /// Empirical quantiles of bootstrap t statistics.
    Studentized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub critical: CriticalValue,
    pub se_source: Option<VarianceKind>,
}

impl Interval {
    pub fn with_se_source(mut self, kind: VarianceKind) -> Self {
        self.se_source = Some(kind);
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("confidence level {level} outside (0, 1)")))
    }
}

/// Inverse CDF of Student t with `dof` degrees of freedom; the normal when
/// `dof` is `None`.
pub fn t_quantile(p: f64, dof: Option<usize>) -> f64 {
    match dof {
        Some(d) => StudentsT::new(0.0, 1.0, d as f64).expect("positive degrees of freedom").inverse_cdf(p),
        None => Normal::standard().inverse_cdf(p),
    }
}

/// `beta +- c se` with `c` the `1 - alpha/2` quantile of the reference.
pub fn ci_symmetric(beta: f64, se: f64, level: f64, dof: Option<usize>) -> Result<Interval> {
    check_level(level)?;
    if !(se > 0.0) {
        return Err(Error::NonPositiveSe(se));
    }
    let c = t_quantile(0.5 + level / 2.0, dof);
    Ok(Interval {
        lower: beta - c * se,
        upper: beta + c * se,
        level,
        critical: CriticalValue::Reference(dof),
        se_source: None,
    })
}

/// Empirical `q` quantile of sorted values: order statistic `(B+1) q` when
/// that is an integer, otherwise linear interpolation between its
/// neighbours (clamped to the sample range).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let pos = (b as f64 + 1.0) * q;
    let r = pos.round();
    if (pos - r).abs() < 1e-9 * pos.max(1.0) {
        return sorted[(r as usize).clamp(1, b) - 1];
    }
    let lo = pos.floor();
    let frac = pos - lo;
    let i = (lo as usize).clamp(1, b);
    let j = (lo as usize + 1).clamp(1, b);
    sorted[i - 1] + frac * (sorted[j - 1] - sorted[i - 1])
}

/// `[beta - c*(1 - a/2) se1, beta - c*(a/2) se1]` from bootstrap t statistics.
pub fn ci_studentized(beta: f64, se1: f64, t_star: &[f64], level: f64) -> Result<Interval> {
    check_level(level)?;
    if !(se1 > 0.0) {
        return Err(Error::NonPositiveSe(se1));
    }
    let alpha = 1.0 - level;
    if (t_star.len() as f64 + 1.0) * alpha / 2.0 < 1.0 - 1e-9 {
        return Err(Error::TooFewReplications { got: t_star.len(), level });
    }
    let mut sorted = t_star.to_vec();
    sorted.sort_by(f64::total_cmp);
    let hi = empirical_quantile(&sorted, 1.0 - alpha / 2.0);
    let lo = empirical_quantile(&sorted, alpha / 2.0);
    Ok(Interval {
        lower: beta - hi * se1,
        upper: beta - lo * se1,
        level,
        critical: CriticalValue::Studentized,
        se_source: Some(VarianceKind::Cv1),
    })
}
