//! Lower confidence bounds for the minimum-MSE gap.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{mean_sd, ratio_lcb, ConfidenceLevel, Estimand, LcbReport, MomentPair};
use crate::covariate::{Conditional, CovariateModel};
use crate::data::Dataset;
use crate::error::{FloodgateError, Result};
use crate::regression::WorkingRegression;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloodgateConfig {
    pub alpha: ConfidenceLevel,
    /// Null copies per row; 0 selects closed-form conditional moments.
    pub big_k: usize,
    /// Replace `Y` by `Y - E[mu | Z]` before forming the numerator.
    pub center_y: bool,
    pub seed: u64,
}

impl Default for FloodgateConfig {
    fn default() -> Self {
        FloodgateConfig {
            alpha: ConfidenceLevel::default(),
            big_k: 500,
            center_y: true,
            seed: 0,
        }
    }
}

pub(crate) fn check_dims(data: &Dataset, mu: &WorkingRegression, cond: &Conditional) -> Result<()> {
    if mu.dx() != data.dx() || mu.dz() != data.dz() {
        return Err(FloodgateError::Shape(format!(
            "working regression takes ({}, {}) inputs, data has ({}, {})",
            mu.dx(),
            mu.dz(),
            data.dx(),
            data.dz()
        )));
    }
    if cond.dx() != data.dx() || cond.dz() != data.dz() {
        return Err(FloodgateError::Shape(format!(
            "covariate model describes ({}, {}) columns, data has ({}, {})",
            cond.dx(),
            cond.dz(),
            data.dx(),
            data.dz()
        )));
    }
    Ok(())
}

/// `(mu(X_i, Z_i), E[mu | Z_i], Var(mu | Z_i))`, exact when `big_k == 0`,
/// otherwise from `big_k` null copies (sample variance, `K - 1` denominator).
pub(crate) fn row_moments(
    cond: &Conditional,
    mu: &WorkingRegression,
    x: &[f64],
    z: &[f64],
    big_k: usize,
    seed: u64,
    row: usize,
    buf: &mut Vec<f64>,
) -> Result<(f64, f64, f64)> {
    let at = mu.at_z(z);
    let mu_i = at.eval(x);
    if big_k == 0 {
        let (m, v) = cond.linear_moments(mu, z)?;
        return Ok((mu_i, m, v));
    }
    let mut sampler = cond.at(z)?;
    let mut rng = Conditional::row_stream(seed, row);
    let mut xt = vec![0.0; cond.dx()];
    buf.clear();
    for _ in 0..big_k {
        sampler.draw(&mut rng, &mut xt);
        buf.push(at.eval(&xt));
    }
    let k = big_k as f64;
    let mean = buf.iter().sum::<f64>() / k;
    let var = buf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((mu_i, mean, var))
}

/// Per-row `(R_i, V_i)` and the mean square of `mu` (degeneracy scale).
pub fn floodgate_pairs(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &FloodgateConfig,
) -> Result<(Vec<MomentPair>, f64)> {
    if data.n() < 2 {
        return Err(FloodgateError::Size(
            "floodgate needs at least 2 inference rows".into(),
        ));
    }
    if cfg.big_k == 1 {
        return Err(FloodgateError::Config(
            "big_k = 1 leaves the copy variance undefined; use 0 (closed form) or >= 2".into(),
        ));
    }
    let cond = model.conditional()?;
    check_dims(data, mu, &cond)?;
    let rows: Vec<(MomentPair, f64)> = (0..data.n())
        .into_par_iter()
        .with_min_len(32)
        .map_init(Vec::new, |buf, i| {
            let (mu_i, mean, var) = row_moments(
                &cond,
                mu,
                data.x_row(i),
                data.z_row(i),
                cfg.big_k,
                cfg.seed,
                i,
                buf,
            )?;
            let y = data.y()[i];
            let r = match (cfg.center_y, cfg.big_k) {
                (false, _) => y * (mu_i - mean),
                (true, 0) => (y - mean) * (mu_i - mean),
                // The copy mean centers both factors, which adds Var(mu | Z) / K
                // in expectation; the unbiased copy variance removes it.
                (true, k) => (y - mean) * (mu_i - mean) - var / k as f64,
            };
            Ok((MomentPair { r, v: var }, mu_i * mu_i))
        })
        .collect::<Result<_>>()?;
    let scale = rows.iter().map(|(_, s)| s).sum::<f64>() / rows.len() as f64;
    Ok((rows.into_iter().map(|(p, _)| p).collect(), scale))
}

/// Floodgate lower confidence bound for the mMSE gap of `X`.
pub fn floodgate_lcb(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &FloodgateConfig,
) -> Result<LcbReport> {
    let (pairs, scale) = floodgate_pairs(data, mu, model, cfg)?;
    ratio_lcb(&pairs, scale, cfg.alpha, Estimand::MmseGap)
}

/// Bound for the scale-free gap `I^2 / Var(Y)`: the squared level-`alpha/2`
/// gap bound over a level-`alpha/2` upper bound for `Var(Y)`, clipped to
/// [0, 1]. `point` is the plug-in ratio; `se` is that of the gap estimate.
pub fn floodgate_lcb_scale_free(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &FloodgateConfig,
) -> Result<LcbReport> {
    let half = cfg.alpha.halved();
    let inner = floodgate_lcb(
        data,
        mu,
        model,
        &FloodgateConfig {
            alpha: half,
            ..cfg.clone()
        },
    )?;
    let n = data.n();
    let (_, sd_y) = mean_sd(data.y());
    let var_y = sd_y * sd_y;
    if inner.degenerate || !(var_y > 0.0) {
        return Ok(LcbReport::degenerate(Estimand::MmseGapScaleFree, n));
    }
    let ybar = data.y().iter().sum::<f64>() / n as f64;
    let sq: Vec<f64> = data.y().iter().map(|y| (y - ybar).powi(2)).collect();
    let (_, sd_sq) = mean_sd(&sq);
    let upper = var_y + half.z() * sd_sq / (n as f64).sqrt();
    Ok(LcbReport {
        lcb: (inner.lcb * inner.lcb / upper).min(1.0),
        point: (inner.point.max(0.0).powi(2) / var_y).min(1.0),
        se: inner.se,
        n_eff: n,
        estimand: Estimand::MmseGapScaleFree,
        degenerate: false,
        batches: None,
    })
}

pub type WeightFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Transport weights: `w(x, z)` for observed rows and `w1(x, z)` for null
/// copies. Both are rescaled to unit sample mean before use.
#[derive(Clone)]
pub struct TransportWeights {
    pub w: WeightFn,
    pub w1: WeightFn,
}

impl TransportWeights {
    pub fn new(
        w: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        w1: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TransportWeights {
            w: Arc::new(w),
            w1: Arc::new(w1),
        }
    }

    pub fn constant(c: f64) -> Self {
        TransportWeights::new(move |_, _| c, move |_, _| c)
    }
}

fn check_weight(v: f64, row: usize) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(FloodgateError::validation(
            "weights",
            format!("row {row}: weight {v} must be finite and >= 0"),
        ))
    }
}

/// Floodgate for the weighted functional: numerator samples
/// `mean_k (Y - mu(X~_k, Z))^2 w w1(X~_k) - (Y - mu(X, Z))^2 w`, denominator
/// samples `mean_k 2 (mu(X, Z) - mu(X~_k, Z))^2 w w1(X~_k)`. Needs
/// `big_k >= 1`.
pub fn floodgate_lcb_weighted(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    weights: &TransportWeights,
    cfg: &FloodgateConfig,
) -> Result<LcbReport> {
    let n = data.n();
    if n < 2 {
        return Err(FloodgateError::Size(
            "floodgate needs at least 2 inference rows".into(),
        ));
    }
    if cfg.big_k == 0 {
        return Err(FloodgateError::Config(
            "the weighted estimator needs big_k >= 1 null copies".into(),
        ));
    }
    let cond = model.conditional()?;
    check_dims(data, mu, &cond)?;
    let k = cfg.big_k;
    struct Row {
        a: f64,
        b: f64,
        s: f64,
        w: f64,
        e: f64,
        mu_sq: f64,
    }
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .with_min_len(32)
        .map(|i| {
            let (x, z, y) = (data.x_row(i), data.z_row(i), data.y()[i]);
            let at = mu.at_z(z);
            let mu_i = at.eval(x);
            let mut sampler = cond.at(z)?;
            let mut rng = Conditional::row_stream(cfg.seed, i);
            let mut xt = vec![0.0; cond.dx()];
            let (mut a, mut b, mut s) = (0.0, 0.0, 0.0);
            for _ in 0..k {
                sampler.draw(&mut rng, &mut xt);
                let m = at.eval(&xt);
                let w1 = check_weight((weights.w1)(&xt, z), i)?;
                a += (y - m).powi(2) * w1;
                b += 2.0 * (mu_i - m).powi(2) * w1;
                s += w1;
            }
            Ok(Row {
                a: a / k as f64,
                b: b / k as f64,
                s,
                w: check_weight((weights.w)(x, z), i)?,
                e: (y - mu_i).powi(2),
                mu_sq: mu_i * mu_i,
            })
        })
        .collect::<Result<_>>()?;
    let w_bar = rows.iter().map(|r| r.w).sum::<f64>() / n as f64;
    let w1_bar = rows.iter().map(|r| r.s).sum::<f64>() / (n * k) as f64;
    if !(w_bar > 0.0 && w1_bar > 0.0) {
        return Ok(LcbReport::degenerate(Estimand::MmseGap, n));
    }
    let pairs: Vec<MomentPair> = rows
        .iter()
        .map(|r| {
            let w = r.w / w_bar;
            MomentPair {
                r: w * (r.a / w1_bar - r.e),
                v: w * r.b / w1_bar,
            }
        })
        .collect();
    let scale = rows.iter().map(|r| r.mu_sq).sum::<f64>() / n as f64;
    ratio_lcb(&pairs, scale, cfg.alpha, Estimand::MmseGap)
}

/// CLT upper bound for `E[(Y - nu(Z))^2]`; `nu` must ignore `x` (either
/// `d_x = 0` or provably zero focal coefficients).
pub fn trivial_ucb(data: &Dataset, nu: &WorkingRegression, alpha: ConfidenceLevel) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(FloodgateError::Size(
            "the upper bound needs at least 2 rows".into(),
        ));
    }
    if nu.dz() != data.dz() {
        return Err(FloodgateError::Shape(format!(
            "nu takes {} z columns, data has {}",
            nu.dz(),
            data.dz()
        )));
    }
    let with_x = match (nu.dx(), nu.depends_on_x()) {
        (0, _) => false,
        (dx, Some(false)) if dx == data.dx() => true,
        _ => {
            return Err(FloodgateError::validation(
                "nu",
                "must be a function of z only",
            ));
        }
    };
    let sq: Vec<f64> = (0..n)
        .map(|i| {
            let pred = if with_x {
                nu.eval(data.x_row(i), data.z_row(i))
            } else {
                nu.eval(&[], data.z_row(i))
            };
            (data.y()[i] - pred).powi(2)
        })
        .collect();
    let (mean, sd) = mean_sd(&sq);
    Ok(mean + alpha.z() * sd / (n as f64).sqrt())
}

/// Zero the bounds of unselected entries (flagged degenerate); selected
/// entries pass through unchanged.
pub fn zero_out_transform(reports: &[LcbReport], selected: &[usize]) -> Result<Vec<LcbReport>> {
    let mut keep = vec![false; reports.len()];
    for &s in selected {
        if s >= reports.len() {
            return Err(FloodgateError::Index(format!(
                "selected index {s} out of range for {} reports",
                reports.len()
            )));
        }
        keep[s] = true;
    }
    Ok(reports
        .iter()
        .zip(keep)
        .map(|(r, k)| {
            if k {
                r.clone()
            } else {
                LcbReport {
                    lcb: 0.0,
                    degenerate: true,
                    ..r.clone()
                }
            }
        })
        .collect())
}
