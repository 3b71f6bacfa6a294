use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FloodgateError, Result};
use crate::rng::{stream, TAG_CV};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    /// Descending penalty grid on the standardized scale. `None` selects the
    /// default 50-point path for the fitter.
    pub lambda_grid: Option<Vec<f64>>,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            lambda_grid: None,
            tolerance: 1e-7,
            max_iters: 10_000,
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(FloodgateError::validation("folds", "need at least 2 folds"));
        }
        if n < self.folds {
            return Err(FloodgateError::Size(format!(
                "fit split has {n} rows, fewer than {} folds",
                self.folds
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(FloodgateError::validation("tolerance", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(FloodgateError::validation("max_iters", "must be positive"));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(FloodgateError::validation("lambda_grid", "grid is empty"));
            }
            if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(FloodgateError::validation(
                    "lambda_grid",
                    "entries must be finite and nonnegative",
                ));
            }
            if grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(FloodgateError::validation(
                    "lambda_grid",
                    "grid must be strictly decreasing",
                ));
            }
        }
        Ok(())
    }
}

/// Fold label for each of `n` rows; a function of `(seed, n)` only.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, &[TAG_CV, n as u64]));
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

pub(crate) fn fold_rows(fold: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &f) in fold.iter().enumerate() {
        if f == k {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}
