//! Penalized logistic regression for labels in {-1, +1}, fitted by proximal
//! gradient descent with backtracking on standardized features. The returned
//! regression is on the conditional-mean scale `2 expit(eta) - 1`.

use serde::{Deserialize, Serialize};

use super::cv::fold_rows;
use super::{
    fold_assignment, log_grid, split_coef, CvConfig, FitInfo, Link, RegressionKind, Standardized,
    WorkingRegression,
};
use crate::data::{Dataset, RowMatrix};
use crate::error::{FloodgateError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Penalty {
    L1,
    L2,
}

/// Penalized objective after each accepted proximal step.
#[derive(Clone, Debug, Default)]
pub struct LogisticTrace {
    pub objective: Vec<f64>,
}

const PATH_LEN: usize = 50;

struct Problem {
    std: Standardized,
    t: Vec<f64>,
}

struct State {
    b0: f64,
    beta: Vec<f64>,
    step: f64,
}

#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

#[inline]
fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl Problem {
    fn new(features: &RowMatrix, t: &[f64], rows: &[usize]) -> Problem {
        Problem {
            std: Standardized::new(features, rows),
            t: rows.iter().map(|&i| t[i]).collect(),
        }
    }

    fn n(&self) -> f64 {
        self.t.len() as f64
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.t.len()];
        for (b, col) in beta.iter().zip(&self.std.cols) {
            if *b != 0.0 {
                for (e, x) in eta.iter_mut().zip(col) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    fn smooth_loss(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .zip(&self.t)
            .map(|(e, t)| softplus(*e) - t * e)
            .sum::<f64>()
            / self.n()
    }

    fn gradient(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n();
        let resid: Vec<f64> = eta
            .iter()
            .zip(&self.t)
            .map(|(e, t)| expit(*e) - t)
            .collect();
        let g0 = resid.iter().sum::<f64>() / n;
        let g = self
            .std
            .cols
            .iter()
            .map(|c| c.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect();
        (g0, g)
    }

    fn lambda_max(&self) -> f64 {
        let n = self.n();
        let tbar = self.t.iter().sum::<f64>() / n;
        self.std
            .cols
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&self.t)
                    .map(|(a, t)| a * (t - tbar))
                    .sum::<f64>()
                    .abs()
                    / n
            })
            .fold(0.0, f64::max)
    }

    fn init(&self) -> State {
        let tbar = (self.t.iter().sum::<f64>() / self.n()).clamp(1e-12, 1.0 - 1e-12);
        State {
            b0: (tbar / (1.0 - tbar)).ln(),
            beta: vec![0.0; self.std.cols.len()],
            step: 1.0,
        }
    }

    /// Proximal gradient at one penalty, warm-started from `state`.
    fn solve(
        &self,
        state: &mut State,
        penalty: Penalty,
        lambda: f64,
        tol: f64,
        max_iters: usize,
        trace: Option<&mut Vec<f64>>,
    ) -> (usize, bool) {
        let pen = |beta: &[f64]| match penalty {
            Penalty::L1 => lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
            Penalty::L2 => 0.5 * lambda * beta.iter().map(|b| b * b).sum::<f64>(),
        };
        let mut trace = trace;
        let mut eta = self.eta(state.b0, &state.beta);
        let mut f = self.smooth_loss(&eta);
        for iter in 1..=max_iters {
            let (g0, g) = self.gradient(&eta);
            let mut s = (state.step * 1.25).min(1e6);
            let (b0_new, beta_new, eta_new, f_new) = loop {
                let b0_new = state.b0 - s * g0;
                let beta_new: Vec<f64> = state
                    .beta
                    .iter()
                    .zip(&g)
                    .map(|(b, gj)| {
                        let v = b - s * gj;
                        match penalty {
                            Penalty::L1 => {
                                let t = s * lambda;
                                if v > t {
                                    v - t
                                } else if v < -t {
                                    v + t
                                } else {
                                    0.0
                                }
                            }
                            Penalty::L2 => v / (1.0 + s * lambda),
                        }
                    })
                    .collect();
                let eta_new = self.eta(b0_new, &beta_new);
                let f_new = self.smooth_loss(&eta_new);
                let d0 = b0_new - state.b0;
                let mut lin = g0 * d0;
                let mut sq = d0 * d0;
                for ((bn, bo), gj) in beta_new.iter().zip(&state.beta).zip(&g) {
                    let d = bn - bo;
                    lin += gj * d;
                    sq += d * d;
                }
                if f_new <= f + lin + sq / (2.0 * s) + 1e-15 * f.abs() || s < 1e-12 {
                    break (b0_new, beta_new, eta_new, f_new);
                }
                s *= 0.5;
            };
            state.step = s;
            let mut max_delta = (b0_new - state.b0).abs();
            for (bn, bo) in beta_new.iter().zip(&state.beta) {
                max_delta = max_delta.max((bn - bo).abs());
            }
            state.b0 = b0_new;
            state.beta = beta_new;
            eta = eta_new;
            f = f_new;
            if let Some(t) = trace.as_deref_mut() {
                t.push(f + pen(&state.beta));
            }
            if max_delta < tol {
                return (iter, true);
            }
        }
        (max_iters, false)
    }

    fn coefficients(&self, state: &State) -> (f64, Vec<f64>) {
        self.std.unstandardize(&state.beta, state.b0)
    }
}

fn labels(data: &Dataset) -> Result<Vec<f64>> {
    let mut seen = [false; 2];
    let mut t = Vec::with_capacity(data.n());
    for (i, &y) in data.y().iter().enumerate() {
        if y == 1.0 {
            seen[1] = true;
            t.push(1.0);
        } else if y == -1.0 {
            seen[0] = true;
            t.push(0.0);
        } else {
            return Err(FloodgateError::Label(format!(
                "row {i}: response {y} is not -1 or +1"
            )));
        }
    }
    if !(seen[0] && seen[1]) {
        return Err(FloodgateError::DegenerateLabels(
            "logistic fit needs both classes in the fit split".into(),
        ));
    }
    Ok(t)
}

fn default_grid(prob: &Problem, penalty: Penalty) -> Vec<f64> {
    let top = prob.lambda_max().max(1e-3);
    match penalty {
        Penalty::L1 => log_grid(top, 1e-3, PATH_LEN),
        Penalty::L2 => log_grid(100.0 * top, 1e-5, PATH_LEN),
    }
}

fn heldout_deviance(features: &RowMatrix, t: &[f64], test: &[usize], b0: f64, coef: &[f64]) -> f64 {
    test.iter()
        .map(|&i| {
            let eta = b0
                + features
                    .row(i)
                    .iter()
                    .zip(coef)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            // -2 log-likelihood = 2 (softplus(eta) - t eta)
            2.0 * (softplus(eta) - t[i] * eta)
        })
        .sum()
}

fn kind_of(penalty: Penalty) -> RegressionKind {
    match penalty {
        Penalty::L1 => RegressionKind::LogitL1,
        Penalty::L2 => RegressionKind::LogitL2,
    }
}

fn finish(
    prob: &Problem,
    state: &State,
    penalty: Penalty,
    dx: usize,
    lambda: f64,
    iters: usize,
    converged: bool,
    max_iters: usize,
) -> WorkingRegression {
    let (b0, coef) = prob.coefficients(state);
    let mut info = FitInfo {
        lambda: Some(lambda),
        converged,
        iterations: iters,
        dropped_columns: prob.std.dropped.clone(),
        feature_means: prob.std.means.clone(),
        feature_sds: prob.std.sds.clone(),
        ..FitInfo::default()
    };
    for &j in &prob.std.dropped {
        info.warnings
            .push(format!("constant covariate column {j} dropped"));
    }
    if !converged {
        info.warnings
            .push(format!("proximal gradient hit max_iters = {max_iters}"));
    }
    let mut reg = split_coef(kind_of(penalty), Link::Logistic, b0, coef, dx);
    reg.info = info;
    reg
}

/// Cross-validated (held-out deviance) penalized logistic regression.
pub fn fit_logistic(
    data: &Dataset,
    penalty: Penalty,
    cv: &CvConfig,
    seed: u64,
) -> Result<WorkingRegression> {
    cv.validate(data.n())?;
    let t = labels(data)?;
    let features = data.covariates();
    let rows: Vec<usize> = (0..data.n()).collect();
    let full = Problem::new(&features, &t, &rows);
    let grid = cv
        .lambda_grid
        .clone()
        .unwrap_or_else(|| default_grid(&full, penalty));
    let (chosen, cv_error) = if grid.len() == 1 {
        (0, None)
    } else {
        let folds = fold_assignment(data.n(), cv.folds, seed);
        let mut errors = vec![0.0; grid.len()];
        for k in 0..cv.folds {
            let (train, test) = fold_rows(&folds, k);
            let prob = Problem::new(&features, &t, &train);
            let mut state = prob.init();
            for (e, &lambda) in errors.iter_mut().zip(&grid) {
                prob.solve(
                    &mut state,
                    penalty,
                    lambda,
                    cv.tolerance,
                    cv.max_iters,
                    None,
                );
                let (b0, coef) = prob.coefficients(&state);
                *e += heldout_deviance(&features, &t, &test, b0, &coef);
            }
        }
        let mut best = 0;
        for (k, &e) in errors.iter().enumerate() {
            if e < errors[best] {
                best = k;
            }
        }
        (best, Some(errors[best] / data.n() as f64))
    };
    let mut state = full.init();
    let mut iters = 0;
    let mut converged = true;
    for &lambda in &grid[..=chosen] {
        let (it, ok) = full.solve(
            &mut state,
            penalty,
            lambda,
            cv.tolerance,
            cv.max_iters,
            None,
        );
        iters += it;
        converged &= ok;
    }
    let mut reg = finish(
        &full,
        &state,
        penalty,
        data.dx(),
        grid[chosen],
        iters,
        converged,
        cv.max_iters,
    );
    reg.info.cv_error = cv_error;
    Ok(reg)
}

/// Logistic fit at a single penalty, with the objective after every step.
pub fn fit_logistic_at(
    data: &Dataset,
    penalty: Penalty,
    lambda: f64,
    cv: &CvConfig,
) -> Result<(WorkingRegression, LogisticTrace)> {
    if !(lambda >= 0.0) {
        return Err(FloodgateError::validation("lambda", "must be nonnegative"));
    }
    let t = labels(data)?;
    let rows: Vec<usize> = (0..data.n()).collect();
    let prob = Problem::new(&data.covariates(), &t, &rows);
    let mut state = prob.init();
    let mut trace = LogisticTrace::default();
    let (iters, converged) = prob.solve(
        &mut state,
        penalty,
        lambda,
        cv.tolerance,
        cv.max_iters,
        Some(&mut trace.objective),
    );
    Ok((
        finish(
            &prob,
            &state,
            penalty,
            data.dx(),
            lambda,
            iters,
            converged,
            cv.max_iters,
        ),
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_and_expit_are_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(expit(-800.0), 0.0);
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = RowMatrix::from_row_major(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let d = Dataset::new(vec![1.0; 3], x, RowMatrix::empty(3)).unwrap();
        assert!(matches!(
            fit_logistic_at(&d, Penalty::L2, 0.1, &CvConfig::default()),
            Err(FloodgateError::DegenerateLabels(_))
        ));
    }
}
