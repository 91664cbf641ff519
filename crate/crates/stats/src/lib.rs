//! Statistical routines for relating safety metrics to crash counts:
//! correlation coefficients, OLS and Poisson regression, chi-square tests,
//! k-fold cross-validation and exact Shapley attribution.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the `f64` instantiations used by the pipeline.

pub mod chisq;
pub mod correlation;
pub mod cv;
pub mod error;
pub mod linalg;
mod real;
pub mod regression;
pub mod shapley;
pub mod special;

pub use chisq::{chi2_contingency_yates, chi2_oneway, ChiSquareTest};
pub use correlation::{kendall, pearson, spearman, CorrelationMethod, KendallTau};
pub use cv::{kfold_cv, CvReport};
pub use error::{Result, StatsError};
pub use linalg::Matrix;
pub use real::Real;
pub use regression::{
    adjusted_r2, evaluate, n_mse, ols_fit, poisson_fit, Dataset, HoldoutScore, ModelKind,
    NmseMode, RegressionReport,
};
pub use shapley::{shapley_from_values, shapley_values, ShapleyReport};

pub type Dataset64 = Dataset<f64>;
pub type Matrix64 = Matrix<f64>;
pub type RegressionReport64 = RegressionReport<f64>;
pub type CvReport64 = CvReport<f64>;
pub type ShapleyReport64 = ShapleyReport<f64>;
pub type ChiSquareTest64 = ChiSquareTest<f64>;
