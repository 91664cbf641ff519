//! Exact Shapley attribution over every predictor coalition.
//!
//! The coalition value is the adjusted R-squared of the OLS model restricted
//! to the coalition, with the empty coalition worth 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::linalg::ThinQr;
use crate::real::Real;
use crate::regression::{ols_fit, Dataset};

pub const MAX_PLAYERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport<T> {
    pub predictor_names: Vec<String>,
    pub phi: Vec<T>,
    /// `v(S)` indexed by coalition bitmask (bit `j` = predictor `j`).
    pub coalition_values: Vec<T>,
    /// Coalitions whose design was singular; their value was taken from the
    /// largest nested non-singular sub-coalition.
    pub singular_coalitions: Vec<u32>,
}

impl<T: Real> ShapleyReport<T> {
    pub fn full_value(&self) -> T {
        *self.coalition_values.last().expect("non-empty game")
    }

    /// Predictor indices sorted by decreasing attribution.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.phi.len()).collect();
        idx.sort_by(|&a, &b| {
            self.phi[b]
                .partial_cmp(&self.phi[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

fn factorials<T: Real>(m: usize) -> Vec<T> {
    let mut f = vec![T::one(); m + 1];
    for i in 1..=m {
        f[i] = f[i - 1] * T::from_count(i);
    }
    f
}

/// Shapley values of an `m`-player game given `v` for every bitmask.
pub fn shapley_from_values<T: Real>(m: usize, values: &[T]) -> Vec<T> {
    assert_eq!(values.len(), 1 << m, "need one value per coalition");
    let fact = factorials::<T>(m);
    let weights: Vec<T> = (0..m)
        .map(|s| fact[s] * fact[m - s - 1] / fact[m])
        .collect();
    (0..m)
        .map(|i| {
            let bit = 1usize << i;
            (0..values.len())
                .filter(|s| s & bit == 0)
                .map(|s| weights[s.count_ones() as usize] * (values[s | bit] - values[s]))
                .sum()
        })
        .collect()
}

fn members(mask: usize, m: usize) -> Vec<usize> {
    (0..m).filter(|j| mask & (1 << j) != 0).collect()
}

/// Adjusted R-squared of the coalition, or of its largest nested
/// non-singular sub-coalition (second element `true`) when singular.
fn coalition_value<T: Real>(d: &Dataset<T>, mask: usize) -> Result<(T, bool)> {
    if mask == 0 {
        return Ok((T::zero(), false));
    }
    let m = d.n_predictors();
    let cols = members(mask, m);
    let sub = d.select_predictors(&cols);
    let qr = ThinQr::new(&sub.design(), T::lit(1e-10));
    if qr.is_full_rank() {
        let report = ols_fit(&sub)?;
        return Ok((report.adj_r2.expect("OLS reports adjusted R2"), false));
    }
    // design column j + 1 is coalition member cols[j]
    let reduced = qr
        .kept()
        .iter()
        .filter(|&&c| c > 0)
        .fold(0usize, |acc, &c| acc | (1 << cols[c - 1]));
    let (v, _) = coalition_value(d, reduced)?;
    Ok((v, true))
}

pub fn shapley_values<T: Real>(d: &Dataset<T>) -> Result<ShapleyReport<T>> {
    let m = d.n_predictors();
    if m == 0 || m > MAX_PLAYERS {
        return Err(StatsError::Parameter(format!(
            "exact Shapley needs 1..={MAX_PLAYERS} predictors, got {m}"
        )));
    }
    let evaluated: Vec<(T, bool)> = (0..1usize << m)
        .into_par_iter()
        .map(|mask| coalition_value(d, mask))
        .collect::<Result<_>>()?;
    let values: Vec<T> = evaluated.iter().map(|(v, _)| *v).collect();
    let singular = evaluated
        .iter()
        .enumerate()
        .filter(|(_, (_, s))| *s)
        .map(|(mask, _)| mask as u32)
        .collect();
    Ok(ShapleyReport {
        predictor_names: d.predictor_names.clone(),
        phi: shapley_from_values(m, &values),
        coalition_values: values,
        singular_coalitions: singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_player_game() {
        let phi = shapley_from_values::<f64>(2, &[0.0, 0.3, 0.4, 0.6]);
        assert!((phi[0] - 0.25).abs() < 1e-15);
        assert!((phi[1] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn null_player_gets_nothing() {
        // player 2 never changes the value
        let base = [0.0, 0.2, 0.5, 0.9];
        let mut v = vec![0.0; 8];
        for s in 0..8 {
            v[s] = base[s & 3];
        }
        let phi = shapley_from_values::<f64>(3, &v);
        assert!(phi[2].abs() < 1e-15);
        assert!((phi.iter().sum::<f64>() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_oversized_games() {
        let cols: Vec<Vec<f64>> = (0..17).map(|j| vec![j as f64; 3]).collect();
        let names: Vec<String> = (0..17).map(|j| format!("x{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let d = Dataset::from_columns(&cols, &refs, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(shapley_values(&d), Err(StatsError::Parameter(_))));
    }
}
