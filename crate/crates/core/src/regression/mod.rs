//! Working-regression fitters. Each fitter sees only the fit split.

mod cv;
mod logistic;
mod ols;
mod penalized;
mod working;

pub use cv::{fold_assignment, CvConfig};
pub use logistic::{fit_logistic, fit_logistic_at, LogisticTrace, Penalty};
pub use ols::{fit_ols, ols_oracle_lcb, student_t_quantile, OlsFit};
pub use penalized::{fit_lasso, fit_lasso_at, fit_ridge, fit_ridge_at, lasso_kkt_violation};
pub use working::{dot, AtZ, FitInfo, Link, RegressionKind, RegressionSpec, WorkingRegression};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;

/// Fitter selection for the CLI and simulation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Fitter {
    Ols,
    Ridge,
    Lasso,
    LogitL1,
    LogitL2,
}

impl Fitter {
    pub fn fit(self, data: &Dataset, cv: &CvConfig, seed: u64) -> Result<WorkingRegression> {
        match self {
            Fitter::Ols => Ok(fit_ols(data)?.regression),
            Fitter::Ridge => fit_ridge(data, cv, seed),
            Fitter::Lasso => fit_lasso(data, cv, seed),
            Fitter::LogitL1 => fit_logistic(data, Penalty::L1, cv, seed),
            Fitter::LogitL2 => fit_logistic(data, Penalty::L2, cv, seed),
        }
    }

    pub fn parse(name: &str) -> Option<Fitter> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "ols" => Some(Fitter::Ols),
            "ridge" => Some(Fitter::Ridge),
            "lasso" => Some(Fitter::Lasso),
            "logit_l1" => Some(Fitter::LogitL1),
            "logit_l2" => Some(Fitter::LogitL2),
            _ => None,
        }
    }
}

/// Column-major standardized copy of `[X | Z]` with constant columns removed.
pub(crate) struct Standardized {
    pub cols: Vec<Vec<f64>>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub p: usize,
}

impl Standardized {
    pub fn new(features: &crate::data::RowMatrix, rows: &[usize]) -> Standardized {
        let p = features.ncols();
        let n = rows.len() as f64;
        let mut cols = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut means = vec![0.0; p];
        let mut sds = vec![0.0; p];
        for j in 0..p {
            let col: Vec<f64> = rows.iter().map(|&i| features.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means[j] = mean;
            sds[j] = var.sqrt();
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            if var.sqrt() <= 1e-12 * scale {
                dropped.push(j);
                continue;
            }
            let sd = var.sqrt();
            cols.push(col.iter().map(|v| (v - mean) / sd).collect());
            kept.push(j);
        }
        Standardized {
            cols,
            kept,
            dropped,
            means,
            sds,
            p,
        }
    }

    /// Map standardized slopes back to the original scale: `(intercept, coef)`.
    pub fn unstandardize(&self, beta: &[f64], intercept_std: f64) -> (f64, Vec<f64>) {
        let mut coef = vec![0.0; self.p];
        let mut intercept = intercept_std;
        for (k, &j) in self.kept.iter().enumerate() {
            coef[j] = beta[k] / self.sds[j];
            intercept -= coef[j] * self.means[j];
        }
        (intercept, coef)
    }
}

pub(crate) fn split_coef(
    kind: RegressionKind,
    link: Link,
    intercept: f64,
    coef: Vec<f64>,
    dx: usize,
) -> WorkingRegression {
    let z = coef[dx..].to_vec();
    let mut x = coef;
    x.truncate(dx);
    WorkingRegression::glm(kind, link, intercept, x, z)
}

pub(crate) fn log_grid(top: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![top];
    }
    (0..len)
        .map(|k| top * ratio.powf(k as f64 / (len - 1) as f64))
        .collect()
}
