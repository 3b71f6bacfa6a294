//! Population gaps for simulated designs.
//!
//! The outer expectation over `Z` is a Monte Carlo average; the inner law of
//! the focal covariate given the rest is integrated exactly (composite
//! Gauss-Legendre against the normal density, or a finite sum for Markov chains).
//! The linear Gaussian mMSE gap has a closed form.

use std::sync::LazyLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::{from_latent, Conditional, CovariateModel, UnivariateLaw};
use crate::error::{FloodgateError, Result};
use crate::normal::{gauss_legendre, normal_pdf};
use crate::rng::{derive_seed, stream, TAG_ORACLE};

use super::mustar::MuStar;

const HALF_RANGE: f64 = 8.5;
const MAX_PIECE: f64 = 1.5;
const NODES: usize = 24;

static LEGENDRE: LazyLock<(Vec<f64>, Vec<f64>)> = LazyLock::new(|| gauss_legendre(NODES));
const SCAN_POINTS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OracleEstimand {
    /// `sqrt(E[Var(E[Y|W] | W_-j)])`.
    Mmse,
    /// `E|E[Y|W] - E[Y|W_-j]|`.
    Macm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Required standard error of every Monte Carlo oracle.
    pub target_se: f64,
    pub min_outer: usize,
    pub max_outer: usize,
    pub batch: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            target_se: 0.002,
            min_outer: 2000,
            max_outer: 1 << 20,
            batch: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub se: f64,
    /// Outer draws used; zero for closed forms.
    pub draws: usize,
}

impl OracleValue {
    pub fn exact(value: f64) -> OracleValue {
        OracleValue {
            value,
            se: 0.0,
            draws: 0,
        }
    }
}

/// The model with covariate `j0` (0-based) as the single focal variable.
pub fn focal_model(model: &CovariateModel, j0: usize) -> Result<CovariateModel> {
    match model {
        CovariateModel::GaussianLinear(_) if j0 == 0 => Ok(model.clone()),
        CovariateModel::GaussianLinear(g) => {
            Ok(CovariateModel::GaussianJoint(g.to_joint(vec![j0 + 1])?))
        }
        _ => model.with_focal(j0 + 1),
    }
}

/// Covariates (1-based) that can serve as focal variables under `model`.
pub fn default_variables(model: &CovariateModel) -> Vec<usize> {
    let p = model.dim();
    match model {
        CovariateModel::Dmc(_) => (2..p).collect(),
        _ => (1..=p).collect(),
    }
}

/// Composite Gauss-Legendre over [a, b] with pieces no wider than `MAX_PIECE`.
fn integrate(a: f64, b: f64, h: &impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (nodes, weights) = &*LEGENDRE;
    let pieces = ((b - a) / MAX_PIECE).ceil().max(1.0) as usize;
    let width = (b - a) / pieces as f64;
    let mut total = 0.0;
    for k in 0..pieces {
        let lo = a + k as f64 * width;
        let mid = lo + 0.5 * width;
        total += 0.5
            * width
            * nodes
                .iter()
                .zip(weights)
                .map(|(t, w)| w * h(mid + 0.5 * width * t))
                .sum::<f64>();
    }
    total
}

/// `E[h(T)]` for standard normal `T`, split at `breaks`.
fn std_normal_expect(breaks: &[f64], h: impl Fn(f64) -> f64) -> f64 {
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| b.abs() < HALF_RANGE)
        .collect();
    cuts.push(-HALF_RANGE);
    cuts.push(HALF_RANGE);
    cuts.sort_by(f64::total_cmp);
    let weighted = |t: f64| normal_pdf(t) * h(t);
    cuts.windows(2)
        .map(|w| integrate(w[0], w[1], &weighted))
        .sum()
}

fn bisect(lo: f64, hi: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Per-row inner quantity: `Var(f(X))` or `E|f(X) - E f(X)|` under `law`.
pub fn inner_value(law: &UnivariateLaw, est: OracleEstimand, f: impl Fn(f64) -> f64) -> f64 {
    match law {
        UnivariateLaw::Discrete(pmf) => {
            let vals: Vec<(f64, f64)> = pmf
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(k, p)| (*p, f(k as f64)))
                .collect();
            let mean: f64 = vals.iter().map(|(p, v)| p * v).sum();
            match est {
                OracleEstimand::Mmse => vals.iter().map(|(p, v)| p * (v - mean).powi(2)).sum(),
                OracleEstimand::Macm => vals.iter().map(|(p, v)| p * (v - mean).abs()).sum(),
            }
        }
        UnivariateLaw::Gaussian { mean, sd } | UnivariateLaw::Copula { mean, sd } => {
            if *sd == 0.0 {
                return 0.0;
            }
            let copula = matches!(law, UnivariateLaw::Copula { .. });
            let (m, s) = (*mean, *sd);
            let x_of = move |t: f64| {
                let l = m + s * t;
                if copula {
                    from_latent(l)
                } else {
                    l
                }
            };
            let h = |t: f64| f(x_of(t));
            // x = 0 is where the piecewise transforms have their kinks.
            let zero = [-m / s];
            let e = std_normal_expect(&zero, h);
            match est {
                OracleEstimand::Mmse => std_normal_expect(&zero, |t| (h(t) - e).powi(2)),
                OracleEstimand::Macm => {
                    let dev = |t: f64| h(t) - e;
                    let mut breaks = zero.to_vec();
                    let step = 2.0 * HALF_RANGE / SCAN_POINTS as f64;
                    let mut prev = -HALF_RANGE;
                    let mut dprev = dev(prev);
                    for k in 1..=SCAN_POINTS {
                        let t = -HALF_RANGE + k as f64 * step;
                        let d = dev(t);
                        if (d > 0.0) != (dprev > 0.0) {
                            breaks.push(bisect(prev, t, &dev));
                        }
                        prev = t;
                        dprev = d;
                    }
                    std_normal_expect(&breaks, |t| dev(t).abs())
                }
            }
        }
    }
}

fn closed_form(
    model: &CovariateModel,
    mustar: &MuStar,
    j0: usize,
    est: OracleEstimand,
) -> Result<Option<f64>> {
    let MuStar::Linear {
        beta,
        logistic: false,
    } = mustar
    else {
        return Ok(None);
    };
    if est != OracleEstimand::Mmse {
        return Ok(None);
    }
    match focal_model(model, j0)?.conditional()? {
        Conditional::Gaussian(g) => Ok(Some(beta[j0].abs() * g.cov[0].max(0.0).sqrt())),
        _ => Ok(None),
    }
}

fn drop_index(w: &[f64], j0: usize) -> Vec<f64> {
    w.iter()
        .enumerate()
        .filter(|(k, _)| *k != j0)
        .map(|(_, v)| *v)
        .collect()
}

fn summarize(sum: f64, sumsq: f64, n: usize, est: OracleEstimand) -> OracleValue {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let se_mean = (var / nf).sqrt();
    match est {
        OracleEstimand::Macm => OracleValue {
            value: mean,
            se: se_mean,
            draws: n,
        },
        OracleEstimand::Mmse => {
            let value = mean.max(0.0).sqrt();
            // Delta method for the square root; at zero report the raw scale.
            let se = if value > 0.0 {
                se_mean / (2.0 * value)
            } else {
                se_mean.sqrt()
            };
            OracleValue {
                value,
                se,
                draws: n,
            }
        }
    }
}

/// Oracle gap for covariate `j0` (0-based).
pub fn oracle_value(
    model: &CovariateModel,
    mustar: &MuStar,
    j0: usize,
    est: OracleEstimand,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleValue> {
    if j0 >= model.dim() {
        return Err(FloodgateError::Index(format!(
            "covariate {} out of range",
            j0 + 1
        )));
    }
    if est == OracleEstimand::Macm && !mustar.is_logistic() {
        return Err(FloodgateError::Unsupported(
            "the MACM oracle needs a logistic design".into(),
        ));
    }
    if !mustar.is_active(j0) {
        return Ok(OracleValue::exact(0.0));
    }
    if let Some(v) = closed_form(model, mustar, j0, est)? {
        return Ok(OracleValue::exact(v));
    }
    if cfg.batch < 2 || cfg.min_outer < 2 || cfg.max_outer < cfg.min_outer || !(cfg.target_se > 0.0)
    {
        return Err(FloodgateError::Config(
            "oracle draw counts and target SE must be positive".into(),
        ));
    }
    let cond = focal_model(model, j0)?.conditional()?;
    let (mut sum, mut sumsq, mut n) = (0.0, 0.0, 0usize);
    let mut b = 0u64;
    loop {
        let w = model.sample_full(cfg.batch, derive_seed(seed, &[TAG_ORACLE, j0 as u64, b]))?;
        let vals: Vec<f64> = (0..cfg.batch)
            .into_par_iter()
            .with_min_len(16)
            .map(|i| {
                let row = w.row(i);
                let law = cond.univariate(&drop_index(row, j0))?;
                let full = std::cell::RefCell::new(row.to_vec());
                Ok(inner_value(&law, est, |x| {
                    let mut w = full.borrow_mut();
                    w[j0] = x;
                    mustar.conditional_mean(&w)
                }))
            })
            .collect::<Result<_>>()?;
        for v in vals {
            sum += v;
            sumsq += v * v;
        }
        n += cfg.batch;
        b += 1;
        let out = summarize(sum, sumsq, n, est);
        if (n >= cfg.min_outer && out.se < cfg.target_se) || n >= cfg.max_outer {
            return Ok(out);
        }
    }
}

/// Brute-force nested Monte Carlo of the mMSE gap: `outer` draws of `W`,
/// each with `inner` draws of the focal covariate and the unbiased sample
/// variance of `E[Y|W]` across them.
pub fn oracle_nested_mc(
    model: &CovariateModel,
    mustar: &MuStar,
    j0: usize,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<OracleValue> {
    if outer < 2 || inner < 2 {
        return Err(FloodgateError::Config(
            "nested Monte Carlo needs at least 2 outer and 2 inner draws".into(),
        ));
    }
    let cond = focal_model(model, j0)?.conditional()?;
    let w = model.sample_full(outer, derive_seed(seed, &[TAG_ORACLE, j0 as u64, u64::MAX]))?;
    let vals: Vec<f64> = (0..outer)
        .into_par_iter()
        .with_min_len(16)
        .map(|i| {
            let row = w.row(i);
            let mut sampler = cond.at(&drop_index(row, j0))?;
            let mut rng = stream(seed, &[TAG_ORACLE, j0 as u64, i as u64]);
            let mut full = row.to_vec();
            let mut x = [0.0];
            let mut draws = Vec::with_capacity(inner);
            for _ in 0..inner {
                sampler.draw(&mut rng, &mut x);
                full[j0] = x[0];
                draws.push(mustar.conditional_mean(&full));
            }
            let m = draws.iter().sum::<f64>() / inner as f64;
            Ok(draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (inner - 1) as f64)
        })
        .collect::<Result<_>>()?;
    let sum: f64 = vals.iter().sum();
    let sumsq: f64 = vals.iter().map(|v| v * v).sum();
    Ok(summarize(sum, sumsq, outer, OracleEstimand::Mmse))
}

/// Oracles for the listed 1-based variables.
pub fn oracle_values(
    model: &CovariateModel,
    mustar: &MuStar,
    variables: &[usize],
    est: OracleEstimand,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<Vec<OracleValue>> {
    variables
        .iter()
        .map(|&j| oracle_value(model, mustar, j - 1, est, cfg, seed))
        .collect()
}
