use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::real::Real;
use crate::special::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest<T> {
    pub statistic: T,
    pub df: usize,
    pub p_value: T,
}

/// Contingency-table chi-square test of homogeneity. Yates' continuity
/// correction (`|O - E| - 0.5`, clamped at zero) is applied when the table
/// has exactly two rows.
pub fn chi2_contingency_yates<T: Real>(table: &[Vec<T>]) -> Result<ChiSquareTest<T>> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r < 2 || c < 2 {
        return Err(StatsError::Parameter(format!(
            "contingency table must be at least 2x2, got {r}x{c}"
        )));
    }
    if table.iter().any(|row| row.len() != c) {
        return Err(StatsError::Parameter("ragged contingency table".into()));
    }
    if table.iter().flatten().any(|&v| v < T::zero() || !v.is_finite()) {
        return Err(StatsError::Data("contingency counts must be finite and non-negative".into()));
    }
    let row_sums: Vec<T> = table.iter().map(|row| row.iter().copied().sum()).collect();
    let col_sums: Vec<T> = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    if let Some(i) = row_sums.iter().position(|&s| s == T::zero()) {
        return Err(StatsError::Data(format!("row {i} has a zero margin")));
    }
    if let Some(j) = col_sums.iter().position(|&s| s == T::zero()) {
        return Err(StatsError::Data(format!("column {j} has a zero margin")));
    }
    let total: T = row_sums.iter().copied().sum();
    let yates = r == 2;
    let half = T::lit(0.5);
    let mut stat = T::zero();
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            let mut dev = (obs - expected).abs();
            if yates {
                dev = (dev - half).max(T::zero());
            }
            stat = stat + dev * dev / expected;
        }
    }
    let df = (r - 1) * (c - 1);
    Ok(ChiSquareTest {
        statistic: stat,
        df,
        p_value: chi2_sf(stat, T::from_count(df)),
    })
}

/// One-way goodness-of-fit test; `expected = None` means a uniform expectation.
pub fn chi2_oneway<T: Real>(observed: &[T], expected: Option<&[T]>) -> Result<ChiSquareTest<T>> {
    let k = observed.len();
    if k < 2 {
        return Err(StatsError::Parameter(format!(
            "one-way chi-square needs at least 2 cells, got {k}"
        )));
    }
    let uniform;
    let expected = match expected {
        Some(e) => {
            if e.len() != k {
                return Err(StatsError::LengthMismatch {
                    left: k,
                    right: e.len(),
                });
            }
            e
        }
        None => {
            let total: T = observed.iter().copied().sum();
            uniform = vec![total / T::from_count(k); k];
            &uniform[..]
        }
    };
    if let Some(i) = expected.iter().position(|&e| e <= T::zero()) {
        return Err(StatsError::Data(format!("expected count in cell {i} is not positive")));
    }
    let stat: T = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let df = k - 1;
    Ok(ChiSquareTest {
        statistic: stat,
        df,
        p_value: chi2_sf(stat, T::from_count(df)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_give_unit_p() {
        let t = chi2_contingency_yates::<f64>(&[vec![5.0, 9.0, 3.0], vec![5.0, 9.0, 3.0]]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.df, 2);
    }

    #[test]
    fn yates_two_by_two() {
        let t = chi2_contingency_yates::<f64>(&[vec![10.0, 20.0], vec![20.0, 10.0]]).unwrap();
        assert!((t.statistic - 5.4).abs() < 1e-12);
        assert_eq!(t.df, 1);
    }

    #[test]
    fn no_correction_beyond_two_rows() {
        // expected 10 everywhere, |O-E| = 2 in four cells: 4 * 4 / 10
        let t = chi2_contingency_yates::<f64>(&[
            vec![12.0, 8.0],
            vec![8.0, 12.0],
            vec![10.0, 10.0],
        ])
        .unwrap();
        assert!((t.statistic - 1.6).abs() < 1e-12);
        assert_eq!(t.df, 2);
    }

    #[test]
    fn zero_margin_is_rejected() {
        assert!(matches!(
            chi2_contingency_yates::<f64>(&[vec![0.0, 3.0], vec![0.0, 4.0]]),
            Err(StatsError::Data(_))
        ));
    }

    #[test]
    fn oneway_uniform() {
        let t = chi2_oneway::<f64>(&[5.0, 5.0, 5.0, 5.0], None).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        let t = chi2_oneway::<f64>(&[10.0, 20.0], None).unwrap();
        assert!((t.statistic - 10.0 / 3.0).abs() < 1e-12);
        let t = chi2_oneway::<f64>(&[3.0, 7.0], Some(&[3.0, 7.0])).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!(chi2_oneway::<f64>(&[3.0, 7.0], Some(&[0.0, 10.0])).is_err());
    }
}
