//! Linear (OLS) and log-link Poisson (IRLS) regression with an intercept.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::linalg::{Matrix, ThinQr};
use crate::real::{mean, Real};
use crate::special::{chi2_sf, f_sf};

/// Relative residual norm below which a design column counts as collinear.
const RANK_TOL: f64 = 1e-10;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
/// Linear predictor cap so `exp` stays finite while the intercept runs away.
const ETA_MAX: f64 = 700.0;

pub const INTERCEPT: &str = "intercept";

/// Predictor matrix and response. Rows never contain absent values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub predictor_names: Vec<String>,
    pub row_keys: Vec<String>,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        x: Matrix<T>,
        y: Vec<T>,
        predictor_names: Vec<String>,
        row_keys: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(StatsError::LengthMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        if predictor_names.len() != x.ncols() {
            return Err(StatsError::LengthMismatch {
                left: predictor_names.len(),
                right: x.ncols(),
            });
        }
        if row_keys.len() != y.len() {
            return Err(StatsError::LengthMismatch {
                left: row_keys.len(),
                right: y.len(),
            });
        }
        let finite = y.iter().all(|v| v.is_finite())
            && (0..x.nrows()).all(|i| x.row(i).iter().all(|v| v.is_finite()));
        if !finite {
            return Err(StatsError::Data("non-finite value in dataset".into()));
        }
        Ok(Self {
            x,
            y,
            predictor_names,
            row_keys,
        })
    }

    /// Dataset from predictor columns with generated row keys.
    pub fn from_columns(columns: &[Vec<T>], names: &[&str], y: Vec<T>) -> Result<Self> {
        let keys = (0..y.len()).map(|i| i.to_string()).collect();
        let x = if columns.is_empty() {
            Matrix::zeros(y.len(), 0)
        } else {
            Matrix::from_columns(columns)
        };
        Self::new(
            x,
            y,
            names.iter().map(|s| s.to_string()).collect(),
            keys,
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            predictor_names: self.predictor_names.clone(),
            row_keys: rows.iter().map(|&i| self.row_keys[i].clone()).collect(),
        }
    }

    pub fn select_predictors(&self, cols: &[usize]) -> Self {
        Self {
            x: self.x.select_columns(cols),
            y: self.y.clone(),
            predictor_names: cols.iter().map(|&j| self.predictor_names[j].clone()).collect(),
            row_keys: self.row_keys.clone(),
        }
    }

    /// `[1 | X]`.
    pub fn design(&self) -> Matrix<T> {
        design_matrix(&self.x)
    }
}

pub(crate) fn design_matrix<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut d = Matrix::zeros(x.nrows(), x.ncols() + 1);
    for i in 0..x.nrows() {
        d[(i, 0)] = T::one();
        for j in 0..x.ncols() {
            d[(i, j + 1)] = x[(i, j)];
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Poisson,
}

/// How per-observation N-MSE terms are aggregated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseMode {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport<T> {
    pub model_kind: ModelKind,
    /// Coefficient names, intercept first.
    pub terms: Vec<String>,
    /// Coefficients, intercept first.
    pub beta: Vec<T>,
    /// Residual variance (linear) or Pearson dispersion (Poisson).
    pub sigma2: T,
    pub r2: Option<T>,
    pub adj_r2: Option<T>,
    pub f_stat: Option<T>,
    pub f_pvalue: Option<T>,
    pub n_mse: T,
    pub rss: T,
    pub tss: T,
    pub n: usize,
    /// Design columns including the intercept.
    pub p: usize,
    pub deviance: Option<T>,
    pub null_deviance: Option<T>,
    pub lr_pvalue: Option<T>,
    pub iterations: Option<usize>,
}

impl<T: Real> RegressionReport<T> {
    /// Fitted mean for each row of a predictor matrix (no intercept column).
    pub fn predict(&self, x: &Matrix<T>) -> Vec<T> {
        let eta = design_matrix(x).mul_vec(&self.beta);
        match self.model_kind {
            ModelKind::Linear => eta,
            ModelKind::Poisson => eta.into_iter().map(|e| e.min(T::lit(ETA_MAX)).exp()).collect(),
        }
    }
}

/// Out-of-sample scores of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutScore<T> {
    /// `1 - RSS/TSS`; may be negative, absent when the held-out response is constant.
    pub r2: Option<T>,
    pub adj_r2: Option<T>,
    pub n_mse: T,
    pub n: usize,
}

pub fn evaluate<T: Real>(
    report: &RegressionReport<T>,
    x: &Matrix<T>,
    y: &[T],
    mode: NmseMode,
) -> HoldoutScore<T> {
    let yhat = report.predict(x);
    let ybar = mean(y);
    let tss: T = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    let rss: T = y.iter().zip(&yhat).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let r2 = (tss > T::zero()).then(|| T::one() - rss / tss);
    let adj_r2 = r2.and_then(|r| adjusted_r2(r, y.len(), report.p).ok());
    HoldoutScore {
        r2,
        adj_r2,
        n_mse: n_mse(y, &yhat, mode),
        n: y.len(),
    }
}

/// `1 - (1 - r2)(n - 1)/(n - p)` with `p` counting the intercept column.
pub fn adjusted_r2<T: Real>(r2: T, n: usize, p: usize) -> Result<T> {
    if n <= p {
        return Err(StatsError::Parameter(format!(
            "adjusted R-squared needs n > p (n = {n}, p = {p})"
        )));
    }
    Ok(T::one() - (T::one() - r2) * T::from_count(n - 1) / T::from_count(n - p))
}

/// Normalized MSE: terms `(y - yhat)^2 / ((y + yhat)^2 / 2)`, both-zero pairs
/// contribute 0.
pub fn n_mse<T: Real>(y: &[T], yhat: &[T], mode: NmseMode) -> T {
    assert_eq!(y.len(), yhat.len(), "n_mse length mismatch");
    let two = T::lit(2.0);
    let total: T = y
        .iter()
        .zip(yhat)
        .map(|(&a, &b)| {
            if a == T::zero() && b == T::zero() {
                T::zero()
            } else {
                let s = a + b;
                (a - b) * (a - b) / (s * s / two)
            }
        })
        .sum();
    match mode {
        NmseMode::Sum => total,
        NmseMode::Mean if y.is_empty() => T::zero(),
        NmseMode::Mean => total / T::from_count(y.len()),
    }
}

fn term_names<T>(d: &Dataset<T>) -> Vec<String> {
    std::iter::once(INTERCEPT.to_string())
        .chain(d.predictor_names.iter().cloned())
        .collect()
}

fn full_rank_qr<T: Real>(design: &Matrix<T>, names: &[String]) -> Result<ThinQr<T>> {
    let qr = ThinQr::new(design, T::lit(RANK_TOL));
    if !qr.is_full_rank() {
        return Err(StatsError::SingularDesign {
            columns: qr.dropped().iter().map(|&j| names[j].clone()).collect(),
        });
    }
    Ok(qr)
}

/// Ordinary least squares with intercept, overall F test and R-squared family.
pub fn ols_fit<T: Real>(d: &Dataset<T>) -> Result<RegressionReport<T>> {
    let n = d.n();
    let p = d.n_predictors() + 1;
    if n <= p {
        return Err(StatsError::Parameter(format!(
            "OLS needs more rows than design columns (n = {n}, p = {p})"
        )));
    }
    let design = d.design();
    let names = term_names(d);
    let qr = full_rank_qr(&design, &names)?;
    let ybar = mean(&d.y);
    let tss: T = d.y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    if tss <= T::zero() {
        return Err(StatsError::UndefinedR2);
    }
    let beta = qr.solve(&d.y);
    let yhat = design.mul_vec(&beta);
    let mut rss: T = d.y.iter().zip(&yhat).map(|(&a, &b)| (a - b) * (a - b)).sum();
    if rss <= tss * T::epsilon() * T::from_count(n) {
        rss = T::zero();
    }
    let ess: T = yhat.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    let r2 = if rss == T::zero() {
        T::one()
    } else {
        (ess / tss).min(T::one()).max(T::zero())
    };
    let adj = adjusted_r2(r2, n, p)?;
    let df_model = T::from_count(p - 1);
    let df_resid = T::from_count(n - p);
    let (f_stat, f_pvalue) = if p == 1 {
        (None, None)
    } else if rss == T::zero() {
        (Some(T::infinity()), Some(T::zero()))
    } else {
        let f = ((tss - rss) / df_model) / (rss / df_resid);
        (Some(f), Some(f_sf(f, df_model, df_resid)))
    };
    Ok(RegressionReport {
        model_kind: ModelKind::Linear,
        terms: names,
        beta,
        sigma2: rss / df_resid,
        r2: Some(r2),
        adj_r2: Some(adj),
        f_stat,
        f_pvalue,
        n_mse: n_mse(&d.y, &yhat, NmseMode::Mean),
        rss,
        tss,
        n,
        p,
        deviance: None,
        null_deviance: None,
        lr_pvalue: None,
        iterations: None,
    })
}

fn poisson_deviance<T: Real>(y: &[T], mu: &[T]) -> T {
    let two = T::lit(2.0);
    y.iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            let ylog = if yi > T::zero() { yi * (yi / mi).ln() } else { T::zero() };
            two * (ylog - (yi - mi))
        })
        .sum()
}

/// Log-link Poisson maximum likelihood by iteratively reweighted least squares.
pub fn poisson_fit<T: Real>(d: &Dataset<T>) -> Result<RegressionReport<T>> {
    if d.y.iter().any(|&v| v < T::zero()) {
        return Err(StatsError::Data("Poisson response must be non-negative".into()));
    }
    let n = d.n();
    let p = d.n_predictors() + 1;
    if n < p {
        return Err(StatsError::Parameter(format!(
            "Poisson fit needs at least as many rows as design columns (n = {n}, p = {p})"
        )));
    }
    let design = d.design();
    let names = term_names(d);
    full_rank_qr(&design, &names)?;

    let half = T::lit(0.5);
    let mut mu: Vec<T> = d.y.iter().map(|&v| v + half).collect();
    let mut eta: Vec<T> = mu.iter().map(|m| m.ln()).collect();
    let mut beta: Option<Vec<T>> = None;
    let mut iterations = 0;
    loop {
        if iterations == IRLS_MAX_ITER {
            return Err(StatsError::NonConvergence { iterations });
        }
        iterations += 1;
        let mut weighted = Matrix::zeros(n, p);
        let mut z = vec![T::zero(); n];
        for i in 0..n {
            let w = mu[i].sqrt();
            for j in 0..p {
                weighted[(i, j)] = design[(i, j)] * w;
            }
            z[i] = (eta[i] + (d.y[i] - mu[i]) / mu[i]) * w;
        }
        let qr = ThinQr::new(&weighted, T::lit(RANK_TOL));
        if !qr.is_full_rank() {
            return Err(StatsError::NonConvergence { iterations });
        }
        let next = qr.solve(&z);
        eta = design
            .mul_vec(&next)
            .into_iter()
            .map(|e| e.min(T::lit(ETA_MAX)))
            .collect();
        mu = eta.iter().map(|e| e.exp()).collect();
        if mu.iter().any(|m| *m <= T::zero() || !m.is_finite()) {
            return Err(StatsError::NonConvergence { iterations });
        }
        let converged = beta.as_ref().is_some_and(|prev| {
            prev.iter()
                .zip(&next)
                .all(|(a, b)| (*a - *b).abs() < T::lit(IRLS_TOL))
        });
        beta = Some(next);
        if converged {
            break;
        }
    }
    let beta = beta.expect("at least one IRLS step");
    let ybar = mean(&d.y);
    let tss: T = d.y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    let rss: T = d.y.iter().zip(&mu).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let r2 = (tss > T::zero()).then(|| T::one() - rss / tss);
    let adj_r2 = r2.and_then(|r| adjusted_r2(r, n, p).ok());
    let pearson: T = d
        .y
        .iter()
        .zip(&mu)
        .map(|(&a, &m)| (a - m) * (a - m) / m)
        .sum();
    let sigma2 = if n > p {
        pearson / T::from_count(n - p)
    } else {
        T::nan()
    };
    let deviance = poisson_deviance(&d.y, &mu);
    let null_mu = vec![ybar; n];
    let null_deviance = if ybar > T::zero() {
        poisson_deviance(&d.y, &null_mu)
    } else {
        T::zero()
    };
    let lr_pvalue = (p > 1).then(|| {
        let stat = (null_deviance - deviance).max(T::zero());
        chi2_sf(stat, T::from_count(p - 1))
    });
    Ok(RegressionReport {
        model_kind: ModelKind::Poisson,
        terms: names,
        beta,
        sigma2,
        r2,
        adj_r2,
        f_stat: None,
        f_pvalue: None,
        n_mse: n_mse(&d.y, &mu, NmseMode::Mean),
        rss,
        tss,
        n,
        p,
        deviance: Some(deviance),
        null_deviance: Some(null_deviance),
        lr_pvalue,
        iterations: Some(iterations),
    })
}

pub fn fit<T: Real>(d: &Dataset<T>, kind: ModelKind) -> Result<RegressionReport<T>> {
    match kind {
        ModelKind::Linear => ols_fit(d),
        ModelKind::Poisson => poisson_fit(d),
    }
}
