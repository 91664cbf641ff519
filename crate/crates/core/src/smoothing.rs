//! Savitzky–Golay smoothing of position series.
//!
//! Interior samples use the centred convolution. Near the ends the filter
//! evaluates the least-squares polynomial of the first (last) full window at
//! the sample's own offset, so any polynomial of degree up to `order` passes
//! through unchanged everywhere, edges included.

use roadsafe_stats::linalg::solve_square;
use roadsafe_stats::{Matrix, Real};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 21;
pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgParams {
    pub window: usize,
    pub order: usize,
}

impl Default for SgParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            order: DEFAULT_ORDER,
        }
    }
}

/// Precomputed filter: one weight row per evaluation offset inside a window.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay<T> {
    window: usize,
    order: usize,
    rows: Vec<Vec<T>>,
}

impl<T: Real> SavitzkyGolay<T> {
    pub fn new(window: usize, order: usize) -> Result<Self> {
        if window % 2 == 0 {
            return Err(Error::Parameter(format!("window must be odd, got {window}")));
        }
        if window <= order {
            return Err(Error::Parameter(format!(
                "window ({window}) must exceed polynomial order ({order})"
            )));
        }
        let half = window / 2;
        // abscissae scaled to [-1, 1] keep the normal matrix well conditioned
        let scale = T::from_count(half.max(1));
        let t: Vec<T> = (0..window)
            .map(|i| (T::from_count(i) - T::from_count(half)) / scale)
            .collect();
        let k = order + 1;
        let mut vander = Matrix::zeros(window, k);
        for (i, &ti) in t.iter().enumerate() {
            let mut p = T::one();
            for j in 0..k {
                vander[(i, j)] = p;
                p = p * ti;
            }
        }
        let mut normal = Matrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                normal[(a, b)] = (0..window).map(|i| vander[(i, a)] * vander[(i, b)]).sum();
            }
        }
        let rows = (0..window)
            .map(|s| {
                let e: Vec<T> = (0..k).map(|j| vander[(s, j)]).collect();
                let c = solve_square(&normal, &e)
                    .ok_or_else(|| Error::Parameter("singular smoothing system".into()))?;
                Ok((0..window)
                    .map(|i| (0..k).map(|j| vander[(i, j)] * c[j]).sum())
                    .collect())
            })
            .collect::<Result<Vec<Vec<T>>>>()?;
        Ok(Self { window, order, rows })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Weights of the centred filter.
    pub fn coefficients(&self) -> &[T] {
        &self.rows[self.window / 2]
    }

    pub fn apply(&self, series: &[T]) -> Result<Vec<T>> {
        let n = series.len();
        let w = self.window;
        if n < w {
            return Err(Error::Parameter(format!(
                "series of length {n} is shorter than the window ({w})"
            )));
        }
        let half = w / 2;
        let weigh = |row: &[T], start: usize| -> T {
            row.iter().zip(&series[start..start + w]).map(|(&a, &b)| a * b).sum()
        };
        Ok((0..n)
            .map(|i| {
                if i < half {
                    weigh(&self.rows[i], 0)
                } else if i + half >= n {
                    weigh(&self.rows[i + w - n], n - w)
                } else {
                    weigh(&self.rows[half], i - half)
                }
            })
            .collect())
    }
}

pub fn smooth_savitzky_golay<T: Real>(series: &[T], window: usize, order: usize) -> Result<Vec<T>> {
    SavitzkyGolay::new(window, order)?.apply(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_ramp_unchanged() {
        let c = smooth_savitzky_golay(&[5.0f64; 7], 5, 2).unwrap();
        assert!(c.iter().all(|v| (v - 5.0).abs() < 1e-12));
        let ramp: Vec<f64> = (0..=20).map(f64::from).collect();
        let out = smooth_savitzky_golay(&ramp, 5, 2).unwrap();
        for (a, b) in ramp.iter().zip(&out) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn classic_five_point_quadratic_weights() {
        let sg = SavitzkyGolay::<f64>::new(5, 2).unwrap();
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in sg.coefficients().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(SavitzkyGolay::<f64>::new(4, 2).is_err());
        assert!(SavitzkyGolay::<f64>::new(3, 3).is_err());
        assert!(smooth_savitzky_golay(&[1.0f64, 2.0], 5, 2).is_err());
    }

    #[test]
    fn reduces_alternating_noise() {
        let noisy: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let out = smooth_savitzky_golay(&noisy, 21, 3).unwrap();
        let energy = |v: &[f64]| v[10..40].iter().map(|x| x * x).sum::<f64>();
        assert!(energy(&out) < 0.1 * energy(&noisy));
    }

    #[test]
    fn works_in_single_precision() {
        let ramp: Vec<f32> = (0..30).map(|i| i as f32 * 0.5).collect();
        let out = smooth_savitzky_golay(&ramp, 7, 3).unwrap();
        for (a, b) in ramp.iter().zip(&out) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
