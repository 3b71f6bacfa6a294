//! LASSO (cyclic coordinate descent) and ridge (closed form), both on
//! standardized features with the objective `(1/2n)|y - b0 - X b|^2 + pen(b)`.

use nalgebra::{DMatrix, DVector};

use super::cv::fold_rows;
use super::{
    fold_assignment, log_grid, split_coef, CvConfig, FitInfo, Link, RegressionKind, Standardized,
    WorkingRegression,
};
use crate::data::{Dataset, RowMatrix};
use crate::error::{FloodgateError, Result};

const DEFAULT_PATH_LEN: usize = 50;
const LASSO_PATH_RATIO: f64 = 1e-3;
const RIDGE_TOP: f64 = 1e3;
const RIDGE_RATIO: f64 = 1e-7;

struct Problem {
    std: Standardized,
    y_mean: f64,
    yc: Vec<f64>,
}

impl Problem {
    fn new(features: &RowMatrix, y: &[f64], rows: &[usize]) -> Problem {
        let std = Standardized::new(features, rows);
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        let yc = rows.iter().map(|&i| y[i] - y_mean).collect();
        Problem { std, y_mean, yc }
    }

    fn n(&self) -> f64 {
        self.yc.len() as f64
    }

    fn lambda_max(&self) -> f64 {
        let n = self.n();
        self.std
            .cols
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&self.yc)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs()
                    / n
            })
            .fold(0.0, f64::max)
    }

    fn coefficients(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        self.std.unstandardize(beta, self.y_mean)
    }
}

struct CdState {
    beta: Vec<f64>,
    resid: Vec<f64>,
    col_sq: Vec<f64>,
}

impl CdState {
    fn new(p: &Problem) -> CdState {
        let n = p.n();
        CdState {
            beta: vec![0.0; p.std.cols.len()],
            resid: p.yc.clone(),
            col_sq: p
                .std
                .cols
                .iter()
                .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
                .collect(),
        }
    }

    fn sweep(
        &mut self,
        cols: &[Vec<f64>],
        idx: impl Iterator<Item = usize>,
        lambda: f64,
        n: f64,
    ) -> f64 {
        let mut max_delta = 0.0f64;
        for j in idx {
            let col = &cols[j];
            let c = self.col_sq[j];
            let rho =
                col.iter().zip(&self.resid).map(|(a, b)| a * b).sum::<f64>() / n + c * self.beta[j];
            let new = soft_threshold(rho, lambda) / c;
            let delta = new - self.beta[j];
            if delta != 0.0 {
                for (r, x) in self.resid.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                self.beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    /// Returns `(sweeps, converged)`.
    fn solve(&mut self, p: &Problem, lambda: f64, tol: f64, max_iters: usize) -> (usize, bool) {
        let n = p.n();
        let cols = &p.std.cols;
        let mut iters = 0;
        loop {
            let d = self.sweep(cols, 0..cols.len(), lambda, n);
            iters += 1;
            if d < tol {
                return (iters, true);
            }
            if iters >= max_iters {
                return (iters, false);
            }
            let active: Vec<usize> = (0..cols.len()).filter(|&j| self.beta[j] != 0.0).collect();
            loop {
                let d = self.sweep(cols, active.iter().copied(), lambda, n);
                iters += 1;
                if d < tol {
                    break;
                }
                if iters >= max_iters {
                    return (iters, false);
                }
            }
        }
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn base_info(p: &Problem) -> FitInfo {
    let mut info = FitInfo {
        converged: true,
        dropped_columns: p.std.dropped.clone(),
        feature_means: p.std.means.clone(),
        feature_sds: p.std.sds.clone(),
        ..FitInfo::default()
    };
    for &j in &p.std.dropped {
        info.warnings
            .push(format!("constant covariate column {j} dropped"));
    }
    info
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Squared prediction error on `test` rows for coefficients fitted on a fold.
fn sse(features: &RowMatrix, y: &[f64], test: &[usize], intercept: f64, coef: &[f64]) -> f64 {
    test.iter()
        .map(|&i| {
            let pred = intercept
                + features
                    .row(i)
                    .iter()
                    .zip(coef)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            (y[i] - pred).powi(2)
        })
        .sum()
}

fn pick_lambda(errors: &[f64]) -> usize {
    let mut best = 0;
    for (k, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = k;
        }
    }
    best
}

fn lasso_path(
    p: &Problem,
    grid: &[f64],
    tol: f64,
    max_iters: usize,
) -> (Vec<Vec<f64>>, usize, bool) {
    let mut state = CdState::new(p);
    let mut out = Vec::with_capacity(grid.len());
    let mut iters = 0;
    let mut converged = true;
    for &lambda in grid {
        let (it, ok) = state.solve(p, lambda, tol, max_iters);
        iters += it;
        converged &= ok;
        out.push(state.beta.clone());
    }
    (out, iters, converged)
}

/// 10-fold (by default) cross-validated LASSO.
pub fn fit_lasso(data: &Dataset, cv: &CvConfig, seed: u64) -> Result<WorkingRegression> {
    cv.validate(data.n())?;
    let features = data.covariates();
    let y = data.y();
    let full = Problem::new(&features, y, &all_rows(data.n()));
    let grid = match &cv.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let top = full.lambda_max();
            if top == 0.0 {
                vec![0.0]
            } else {
                log_grid(top, LASSO_PATH_RATIO, DEFAULT_PATH_LEN)
            }
        }
    };
    let (chosen, cv_error) = if grid.len() == 1 {
        (0, None)
    } else {
        let folds = fold_assignment(data.n(), cv.folds, seed);
        let mut errors = vec![0.0; grid.len()];
        for k in 0..cv.folds {
            let (train, test) = fold_rows(&folds, k);
            let prob = Problem::new(&features, y, &train);
            let (path, _, _) = lasso_path(&prob, &grid, cv.tolerance, cv.max_iters);
            for (e, beta) in errors.iter_mut().zip(&path) {
                let (b0, coef) = prob.coefficients(beta);
                *e += sse(&features, y, &test, b0, &coef);
            }
        }
        let best = pick_lambda(&errors);
        (best, Some(errors[best] / data.n() as f64))
    };
    let (path, iters, converged) = lasso_path(&full, &grid[..=chosen], cv.tolerance, cv.max_iters);
    let (b0, coef) = full.coefficients(&path[chosen]);
    let mut info = base_info(&full);
    info.lambda = Some(grid[chosen]);
    info.cv_error = cv_error;
    info.iterations = iters;
    info.converged = converged;
    if !converged {
        info.warnings.push(format!(
            "coordinate descent hit max_iters = {}",
            cv.max_iters
        ));
    }
    let mut reg = split_coef(RegressionKind::Lasso, Link::Identity, b0, coef, data.dx());
    reg.info = info;
    Ok(reg)
}

/// LASSO at a single penalty (standardized scale).
pub fn fit_lasso_at(data: &Dataset, lambda: f64, cv: &CvConfig) -> Result<WorkingRegression> {
    if !(lambda >= 0.0) {
        return Err(FloodgateError::validation("lambda", "must be nonnegative"));
    }
    let full = Problem::new(&data.covariates(), data.y(), &all_rows(data.n()));
    let mut state = CdState::new(&full);
    let (iters, converged) = state.solve(&full, lambda, cv.tolerance, cv.max_iters);
    let (b0, coef) = full.coefficients(&state.beta);
    let mut info = base_info(&full);
    info.lambda = Some(lambda);
    info.iterations = iters;
    info.converged = converged;
    if !converged {
        info.warnings.push(format!(
            "coordinate descent hit max_iters = {}",
            cv.max_iters
        ));
    }
    let mut reg = split_coef(RegressionKind::Lasso, Link::Identity, b0, coef, data.dx());
    reg.info = info;
    Ok(reg)
}

/// Largest violation of the LASSO optimality conditions on the standardized
/// scale, for a fit produced from `data` at penalty `lambda`.
pub fn lasso_kkt_violation(data: &Dataset, reg: &WorkingRegression, lambda: f64) -> Result<f64> {
    let (_, _, x_coef, z_coef) = reg
        .glm_parts()
        .ok_or_else(|| FloodgateError::Unsupported("KKT check needs a linear regression".into()))?;
    let coef: Vec<f64> = x_coef.iter().chain(z_coef).copied().collect();
    let prob = Problem::new(&data.covariates(), data.y(), &all_rows(data.n()));
    let beta: Vec<f64> = prob
        .std
        .kept
        .iter()
        .map(|&j| coef[j] * prob.std.sds[j])
        .collect();
    let mut resid = prob.yc.clone();
    for (b, col) in beta.iter().zip(&prob.std.cols) {
        for (r, x) in resid.iter_mut().zip(col) {
            *r -= b * x;
        }
    }
    let n = prob.n();
    let mut worst = 0.0f64;
    for (b, col) in beta.iter().zip(&prob.std.cols) {
        let g = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n;
        let v = if *b == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

struct Gram {
    g: DMatrix<f64>,
    c: DVector<f64>,
}

impl Gram {
    fn new(p: &Problem) -> Gram {
        let k = p.std.cols.len();
        let n = p.n();
        let cols = &p.std.cols;
        let g = DMatrix::from_fn(k, k, |a, b| {
            cols[a]
                .iter()
                .zip(&cols[b])
                .map(|(u, v)| u * v)
                .sum::<f64>()
                / n
        });
        let c = DVector::from_fn(k, |a, _| {
            cols[a].iter().zip(&p.yc).map(|(u, v)| u * v).sum::<f64>() / n
        });
        Gram { g, c }
    }

    fn solve(&self, lambda: f64) -> Result<Vec<f64>> {
        let k = self.c.len();
        if k == 0 {
            return Ok(Vec::new());
        }
        let m = &self.g + DMatrix::identity(k, k) * lambda;
        let sol = match m.clone().cholesky() {
            Some(ch) => ch.solve(&self.c),
            None => m.lu().solve(&self.c).ok_or_else(|| {
                FloodgateError::SingularDesign(format!(
                    "ridge system singular at lambda = {lambda}"
                ))
            })?,
        };
        Ok(sol.iter().copied().collect())
    }
}

/// Cross-validated ridge regression.
pub fn fit_ridge(data: &Dataset, cv: &CvConfig, seed: u64) -> Result<WorkingRegression> {
    cv.validate(data.n())?;
    let features = data.covariates();
    let y = data.y();
    let grid = cv
        .lambda_grid
        .clone()
        .unwrap_or_else(|| log_grid(RIDGE_TOP, RIDGE_RATIO, DEFAULT_PATH_LEN));
    let (chosen, cv_error) = if grid.len() == 1 {
        (0, None)
    } else {
        let folds = fold_assignment(data.n(), cv.folds, seed);
        let mut errors = vec![0.0; grid.len()];
        for k in 0..cv.folds {
            let (train, test) = fold_rows(&folds, k);
            let prob = Problem::new(&features, y, &train);
            let gram = Gram::new(&prob);
            for (e, &lambda) in errors.iter_mut().zip(&grid) {
                let beta = match gram.solve(lambda) {
                    Ok(b) => b,
                    Err(_) => {
                        *e = f64::INFINITY;
                        continue;
                    }
                };
                let (b0, coef) = prob.coefficients(&beta);
                *e += sse(&features, y, &test, b0, &coef);
            }
        }
        let best = pick_lambda(&errors);
        (best, Some(errors[best] / data.n() as f64))
    };
    let mut reg = ridge_at(data, grid[chosen])?;
    reg.info.cv_error = cv_error;
    Ok(reg)
}

/// Ridge at a single penalty (standardized scale).
pub fn fit_ridge_at(data: &Dataset, lambda: f64) -> Result<WorkingRegression> {
    if !(lambda >= 0.0) {
        return Err(FloodgateError::validation("lambda", "must be nonnegative"));
    }
    ridge_at(data, lambda)
}

fn ridge_at(data: &Dataset, lambda: f64) -> Result<WorkingRegression> {
    let full = Problem::new(&data.covariates(), data.y(), &all_rows(data.n()));
    let beta = Gram::new(&full).solve(lambda)?;
    let (b0, coef) = full.coefficients(&beta);
    let mut info = base_info(&full);
    info.lambda = Some(lambda);
    let mut reg = split_coef(RegressionKind::Ridge, Link::Identity, b0, coef, data.dx());
    reg.info = info;
    Ok(reg)
}
