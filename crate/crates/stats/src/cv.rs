//! Seeded k-fold cross-validation of the regression models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::real::{mean, Real};
use crate::regression::{evaluate, fit, Dataset, HoldoutScore, ModelKind, NmseMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult<T> {
    pub fold: usize,
    pub train_n: usize,
    pub score: HoldoutScore<T>,
    /// Overall F test of the model fitted on the training folds (linear only).
    pub train_f_pvalue: Option<T>,
    pub train_lr_pvalue: Option<T>,
}

/// Fold-averaged performance. Held-out R-squared is not clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport<T> {
    pub model_kind: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult<T>>,
    pub skipped_folds: Vec<usize>,
    pub mean_r2: Option<T>,
    pub mean_adj_r2: Option<T>,
    pub mean_n_mse: Option<T>,
    pub mean_train_f_pvalue: Option<T>,
    pub mean_train_lr_pvalue: Option<T>,
    pub warnings: Vec<String>,
}

/// Splits a seeded permutation of `0..n` into `k` contiguous folds; the first
/// `n % k` folds get one extra row.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    folds
}

fn mean_of<T: Real>(values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let v: Vec<T> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

pub fn kfold_cv<T: Real>(
    d: &Dataset<T>,
    k: usize,
    seed: u64,
    kind: ModelKind,
    mode: NmseMode,
) -> Result<CvReport<T>> {
    let n = d.n();
    if k < 2 || k > n {
        return Err(StatsError::Parameter(format!(
            "k-fold needs 2 <= k <= n (k = {k}, n = {n})"
        )));
    }
    let folds = fold_indices(n, k, seed);
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut warnings = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let mut in_test = vec![false; n];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let train_d = d.select_rows(&train);
        let model = match fit(&train_d, kind) {
            Ok(m) => m,
            Err(StatsError::UndefinedR2) => {
                warnings.push(format!("fold {f}: constant training response, skipped"));
                skipped.push(f);
                continue;
            }
            Err(e) => return Err(e),
        };
        let test_d = d.select_rows(test);
        let score = evaluate(&model, &test_d.x, &test_d.y, mode);
        if score.r2.is_none() {
            warnings.push(format!("fold {f}: constant held-out response, skipped"));
            skipped.push(f);
            continue;
        }
        results.push(FoldResult {
            fold: f,
            train_n: train.len(),
            score,
            train_f_pvalue: model.f_pvalue,
            train_lr_pvalue: model.lr_pvalue,
        });
    }
    Ok(CvReport {
        model_kind: kind,
        k,
        seed,
        mean_r2: mean_of(results.iter().map(|r| r.score.r2)),
        mean_adj_r2: mean_of(results.iter().map(|r| r.score.adj_r2)),
        mean_n_mse: mean_of(results.iter().map(|r| Some(r.score.n_mse))),
        mean_train_f_pvalue: mean_of(results.iter().map(|r| r.train_f_pvalue)),
        mean_train_lr_pvalue: mean_of(results.iter().map(|r| r.train_lr_pvalue)),
        folds: results,
        skipped_folds: skipped,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_rows() {
        let folds = fold_indices(11, 3, 7);
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 3]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn perfectly_linear_data_generalizes() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let d = Dataset::from_columns(&[x], &["x"], y).unwrap();
        let cv = kfold_cv(&d, 5, 1, ModelKind::Linear, NmseMode::Mean).unwrap();
        assert!((cv.mean_r2.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cv.folds.len(), 5);
    }

    #[test]
    fn same_seed_same_report() {
        let x: Vec<f64> = (0..30).map(|i| ((i * 37) % 11) as f64).collect();
        let y: Vec<f64> = (0..30).map(|i| ((i * 13) % 7) as f64 + 1.0).collect();
        let d = Dataset::from_columns(&[x], &["x"], y).unwrap();
        let a = kfold_cv(&d, 5, 42, ModelKind::Poisson, NmseMode::Mean).unwrap();
        let b = kfold_cv(&d, 5, 42, ModelKind::Poisson, NmseMode::Mean).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leave_one_out_runs() {
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let y = vec![1.0, 3.0, 2.0, 5.0, 4.0, 6.0, 8.0, 7.0];
        let d = Dataset::from_columns(&[x], &["x"], y).unwrap();
        let cv = kfold_cv(&d, 8, 3, ModelKind::Linear, NmseMode::Mean).unwrap();
        assert_eq!(cv.skipped_folds.len(), 8);
        assert!(cv.mean_r2.is_none());
    }
}
