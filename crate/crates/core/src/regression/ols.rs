use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{split_coef, Link, RegressionKind, WorkingRegression};
use crate::confidence::ConfidenceLevel;
use crate::data::Dataset;
use crate::error::{FloodgateError, Result};

/// Ordinary least squares with classical standard errors.
#[derive(Clone, Debug)]
pub struct OlsFit {
    pub regression: WorkingRegression,
    /// Intercept first, then `X` columns, then `Z` columns.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sigma2: f64,
    pub df: usize,
    pub rss: f64,
}

impl OlsFit {
    /// Equal-tailed interval with `alpha` in each tail for the `j`-th focal
    /// coefficient.
    pub fn focal_interval(&self, j: usize, alpha: ConfidenceLevel) -> Result<(f64, f64)> {
        let dx = self.regression.dx();
        if j >= dx {
            return Err(FloodgateError::Index(format!(
                "focal coefficient {j} out of range (d_x = {dx})"
            )));
        }
        let t = student_t_quantile(alpha.alpha(), self.df)?;
        let b = self.coefficients[1 + j];
        let se = self.std_errors[1 + j];
        Ok((b - t * se, b + t * se))
    }
}

pub fn fit_ols(data: &Dataset) -> Result<OlsFit> {
    let n = data.n();
    let k = 1 + data.dx() + data.dz();
    if n <= k {
        return Err(FloodgateError::Size(format!(
            "OLS needs more rows than parameters ({n} rows, {k} parameters)"
        )));
    }
    let features = data.covariates();
    let a = DMatrix::from_fn(
        n,
        k,
        |i, j| if j == 0 { 1.0 } else { features.get(i, j - 1) },
    );
    let y = DVector::from_column_slice(data.y());
    let col_norms: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    let qr = a.clone().qr();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(FloodgateError::SingularDesign(format!(
                "design column {j} is linearly dependent on earlier columns"
            )));
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| FloodgateError::SingularDesign("triangular solve failed".into()))?;
    let resid = &y - &a * &beta;
    let rss = resid.norm_squared();
    let df = n - k;
    let sigma2 = rss / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| FloodgateError::SingularDesign("triangular inverse failed".into()))?;
    let std_errors: Vec<f64> = (0..k)
        .map(|j| (sigma2 * r_inv.row(j).norm_squared()).sqrt())
        .collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let regression = split_coef(
        RegressionKind::Ols,
        Link::Identity,
        coefficients[0],
        coefficients[1..].to_vec(),
        data.dx(),
    );
    Ok(OlsFit {
        regression,
        coefficients,
        std_errors,
        sigma2,
        df,
        rss,
    })
}

/// Upper-tail Student t quantile: `P(T_df > t) = p`.
pub fn student_t_quantile(p: f64, df: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FloodgateError::Domain(format!(
            "tail probability {p} outside (0, 1)"
        )));
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| {
        FloodgateError::Domain(format!("Student t with {df} degrees of freedom: {e}"))
    })?;
    Ok(dist.inverse_cdf(1.0 - p))
}

/// Oracle-assisted bound built from the OLS interval of the focal coefficient:
/// `lower * sqrt(ev)` when the true sign is positive, `-upper * sqrt(ev)`
/// otherwise. May be negative.
pub fn ols_oracle_lcb(
    fit: &OlsFit,
    alpha: ConfidenceLevel,
    sign_of_beta: f64,
    ev_cond_var: f64,
) -> Result<f64> {
    let (lo, hi) = fit.focal_interval(0, alpha)?;
    oracle_transform(lo, hi, sign_of_beta, ev_cond_var)
}

pub(crate) fn oracle_transform(lo: f64, hi: f64, sign: f64, ev: f64) -> Result<f64> {
    if !(ev >= 0.0) {
        return Err(FloodgateError::Domain(format!(
            "expected conditional variance {ev} must be >= 0"
        )));
    }
    Ok(if sign > 0.0 {
        lo * ev.sqrt()
    } else {
        -hi * ev.sqrt()
    })
}
