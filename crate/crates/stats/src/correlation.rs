//! Pearson, Spearman and Kendall correlation coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::real::{mean, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
    Kendall,
}

impl CorrelationMethod {
    pub const ALL: [CorrelationMethod; 3] = [Self::Pearson, Self::Spearman, Self::Kendall];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pearson => "pearson",
            Self::Spearman => "spearman",
            Self::Kendall => "kendall",
        }
    }

    /// Evaluates this coefficient. Kendall on constant input returns 0 rather than an error.
    pub fn compute<T: Real>(self, x: &[T], y: &[T]) -> Result<T> {
        match self {
            Self::Pearson => pearson(x, y),
            Self::Spearman => spearman(x, y),
            Self::Kendall => kendall(x, y).map(|k| k.tau),
        }
    }
}

fn check_lengths<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::Parameter(format!(
            "correlation needs at least 2 observations, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    check_lengths(x, y)?;
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(StatsError::UndefinedCorrelation("constant input".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn mean_ranks<T: Real>(x: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let r = T::from_count(start + 1 + end) / T::lit(2.0);
        for &idx in &order[start..end] {
            ranks[idx] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson of the mean-rank vectors.
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    check_lengths(x, y)?;
    pearson(&mean_ranks(x), &mean_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KendallTau<T> {
    pub tau: T,
    /// Set when either input is constant; `tau` is then 0 by construction.
    pub constant_input: bool,
}

/// Kendall tau-a: tied pairs contribute zero and there is no tie normalization.
pub fn kendall<T: Real>(x: &[T], y: &[T]) -> Result<KendallTau<T>> {
    check_lengths(x, y)?;
    let n = x.len();
    let sgn = |v: T| {
        if v > T::zero() {
            1i64
        } else if v < T::zero() {
            -1
        } else {
            0
        }
    };
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += sgn(x[i] - x[j]) * sgn(y[i] - y[j]);
        }
    }
    let constant = x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]);
    let pairs = T::from_count(n * (n - 1)) / T::lit(2.0);
    Ok(KendallTau {
        tau: T::from_i64(s).unwrap() / pairs,
        constant_input: constant,
    })
}
