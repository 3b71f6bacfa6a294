//! Confidence arithmetic shared by every inference routine: per-row moment
//! pairs, their sample mean and covariance, the delta-method standard error
//! of the ratio `R / sqrt(V)`, and the clipped lower bound built from them.

use serde::{Deserialize, Serialize};

use crate::error::{FloodgateError, Result};
use crate::normal::normal_quantile;

/// Relative threshold below which the mean conditional variance counts as
/// zero (the `0/0 = 0` convention). Scaled by the mean square of the
/// working-regression values.
pub const DEGENERATE_REL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConfidenceLevel(f64);

impl ConfidenceLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(ConfidenceLevel(alpha))
        } else {
            Err(FloodgateError::validation(
                "alpha",
                format!("must lie in (0,1), got {alpha}"),
            ))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    /// Upper-tail normal quantile `z_alpha`.
    pub fn z(self) -> f64 {
        normal_quantile(self.0).expect("alpha validated on construction")
    }

    /// The level used by each half of a Bonferroni pair.
    pub fn halved(self) -> Self {
        ConfidenceLevel(self.0 / 2.0)
    }
}

impl Default for ConfidenceLevel {
    fn default() -> Self {
        ConfidenceLevel(0.05)
    }
}

impl TryFrom<f64> for ConfidenceLevel {
    type Error = FloodgateError;
    fn try_from(v: f64) -> Result<Self> {
        ConfidenceLevel::new(v)
    }
}

impl From<ConfidenceLevel> for f64 {
    fn from(c: ConfidenceLevel) -> f64 {
        c.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Estimand {
    MmseGap,
    MmseGapScaleFree,
    MacmGap,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::MmseGap => "MMSE_GAP",
            Estimand::MmseGapScaleFree => "MMSE_GAP_SCALE_FREE",
            Estimand::MacmGap => "MACM_GAP",
        }
    }
}

/// Batch bookkeeping attached to co-sufficient reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDiagnostics {
    pub n1: usize,
    pub n2: usize,
    pub dropped: usize,
}

/// A lower confidence bound together with the ingredients it was built from.
///
/// `lcb = max(point - z_alpha * se / sqrt(n_eff), 0)` for every estimator in
/// the crate, with `lcb = 0` and `degenerate = true` when the `0/0 = 0`
/// convention applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcbReport {
    pub lcb: f64,
    pub point: f64,
    pub se: f64,
    pub n_eff: usize,
    pub estimand: Estimand,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<BatchDiagnostics>,
}

impl LcbReport {
    pub fn degenerate(estimand: Estimand, n_eff: usize) -> Self {
        LcbReport {
            lcb: 0.0,
            point: 0.0,
            se: 0.0,
            n_eff,
            estimand,
            degenerate: true,
            batches: None,
        }
    }

    /// Build the clipped bound `max(point - z * se / sqrt(n_eff), 0)`.
    pub fn from_point(
        point: f64,
        se: f64,
        n_eff: usize,
        alpha: ConfidenceLevel,
        estimand: Estimand,
    ) -> Self {
        let lcb = (point - alpha.z() * se / (n_eff as f64).sqrt()).max(0.0);
        LcbReport {
            lcb,
            point,
            se,
            n_eff,
            estimand,
            degenerate: false,
            batches: None,
        }
    }
}

/// One row's contribution: an unbiased sample of the numerator (`r`) and of
/// the squared denominator (`v`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentPair {
    pub r: f64,
    pub v: f64,
}

/// Symmetric 2x2 covariance `[[s11, s12], [s12, s22]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Cov2 {
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

/// Sample means of `(r, v)` and their covariance with the `n - 1` denominator.
/// A single pair yields the zero covariance.
pub fn sample_mean_cov(pairs: &[MomentPair]) -> Result<(f64, f64, Cov2)> {
    let n = pairs.len();
    if n == 0 {
        return Err(FloodgateError::Size("no moment pairs".into()));
    }
    let nf = n as f64;
    let r_bar = pairs.iter().map(|p| p.r).sum::<f64>() / nf;
    let v_bar = pairs.iter().map(|p| p.v).sum::<f64>() / nf;
    if n == 1 {
        return Ok((r_bar, v_bar, Cov2::default()));
    }
    let mut cov = Cov2::default();
    for p in pairs {
        let dr = p.r - r_bar;
        let dv = p.v - v_bar;
        cov.s11 += dr * dr;
        cov.s12 += dr * dv;
        cov.s22 += dv * dv;
    }
    let d = nf - 1.0;
    cov.s11 /= d;
    cov.s12 /= d;
    cov.s22 /= d;
    Ok((r_bar, v_bar, cov))
}

/// Delta-method standard deviation of `R_bar / sqrt(V_bar)`:
///
/// `s^2 = (1/V)[(R/(2V))^2 S22 + S11 - (R/V) S12]`, clamped at zero.
pub fn delta_method_se(r_bar: f64, v_bar: f64, sigma: &Cov2) -> Result<f64> {
    if !(v_bar > 0.0) {
        return Err(FloodgateError::Domain(format!(
            "mean conditional variance must be positive, got {v_bar}"
        )));
    }
    let ratio = r_bar / v_bar;
    let s2 = ((0.5 * ratio).powi(2) * sigma.s22 + sigma.s11 - ratio * sigma.s12) / v_bar;
    Ok(s2.max(0.0).sqrt())
}

/// Aggregate moment pairs into the ratio lower bound. `mu_scale_sq` is the
/// mean square of the working-regression values used to scale the
/// degeneracy threshold.
pub fn ratio_lcb(
    pairs: &[MomentPair],
    mu_scale_sq: f64,
    alpha: ConfidenceLevel,
    estimand: Estimand,
) -> Result<LcbReport> {
    let n = pairs.len();
    let (r_bar, v_bar, sigma) = sample_mean_cov(pairs)?;
    if !(v_bar > DEGENERATE_REL_TOL * mu_scale_sq) || v_bar <= 0.0 {
        return Ok(LcbReport::degenerate(estimand, n));
    }
    let s = delta_method_se(r_bar, v_bar, &sigma)?;
    Ok(LcbReport::from_point(
        r_bar / v_bar.sqrt(),
        s,
        n,
        alpha,
        estimand,
    ))
}

/// Sample mean and standard deviation (`n - 1` denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
