//! Replicate harness: synthetic designs, oracle gaps, and coverage /
//! half-width summaries for each inference method.

pub mod mustar;
pub mod oracle;
pub mod toy;

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{mean_sd, ConfidenceLevel, Estimand, LcbReport};
use crate::cosufficient::{cosufficient_lcb, CosufficientConfig};
use crate::covariate::{Conditional, CovariateModel, GaussianJointModel};
use crate::data::{split, Dataset, RowMatrix};
use crate::error::{FloodgateError, Result};
use crate::macm::{macm_lcb, MacmConfig};
use crate::mmse::{floodgate_lcb, trivial_ucb, FloodgateConfig};
use crate::normal::NormalExpectation;
use crate::regression::{CvConfig, Fitter, Link, RegressionKind, WorkingRegression};
use crate::report::fmt_float;
use crate::rng::{derive_seed, stream, TAG_DESIGN, TAG_NOISE, TAG_REPLICATE};

pub use mustar::{MuStar, MuStarKind, MuStarSpec};
pub use oracle::{
    default_variables, focal_model, oracle_nested_mc, oracle_value, OracleConfig, OracleEstimand,
    OracleValue,
};
pub use toy::DiscreteToy;

/// Slack in the coverage comparison `lcb <= oracle`.
pub const COVER_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    MmseExact,
    MmseMc {
        k: usize,
    },
    Macm {
        #[serde(default)]
        m: Option<usize>,
        #[serde(default = "default_copies")]
        k: usize,
        #[serde(default)]
        exact: bool,
    },
    Cosufficient {
        n2: usize,
        #[serde(default = "default_copies")]
        mc_k: usize,
    },
}

fn default_copies() -> usize {
    100
}

impl Method {
    pub fn oracle_estimand(&self) -> OracleEstimand {
        match self {
            Method::Macm { .. } => OracleEstimand::Macm,
            _ => OracleEstimand::Mmse,
        }
    }

    pub fn estimand(&self) -> Estimand {
        match self {
            Method::Macm { .. } => Estimand::MacmGap,
            _ => Estimand::MmseGap,
        }
    }

    /// Run the method on one focal covariate.
    pub fn run(
        &self,
        data: &Dataset,
        mu: &WorkingRegression,
        model: &CovariateModel,
        alpha: ConfidenceLevel,
        center_y: bool,
        seed: u64,
    ) -> Result<LcbReport> {
        match *self {
            Method::MmseExact | Method::MmseMc { .. } => {
                let big_k = match *self {
                    Method::MmseMc { k } => k,
                    _ => 0,
                };
                floodgate_lcb(
                    data,
                    mu,
                    model,
                    &FloodgateConfig {
                        alpha,
                        big_k,
                        center_y,
                        seed,
                    },
                )
            }
            Method::Macm { m, k, exact } => macm_lcb(
                data,
                mu,
                model,
                &MacmConfig {
                    alpha,
                    m_copies: m,
                    k_copies: k,
                    exact_moments: exact,
                    seed,
                },
            ),
            Method::Cosufficient { n2, mc_k } => cosufficient_lcb(
                data,
                mu,
                model,
                &CosufficientConfig {
                    alpha,
                    n2,
                    mc_k,
                    seed,
                },
            ),
        }
    }
}

/// Where the working regression comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MuSource {
    /// Fit `fitter` on the first part of the split.
    #[default]
    Fitted,
    /// The true regression function.
    True,
    /// The truth plus `scale / sqrt(n) * c'w` for a fixed Gaussian `c`.
    Corrupted { scale: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Misspecification {
    #[default]
    None,
    /// Replace the covariate law by a Gaussian fitted to `m_rows` rows: the
    /// replicate's own rows first, then fresh draws. The empirical covariance
    /// is shrunk toward its diagonal by `shrinkage`.
    InsampleGaussianFit {
        m_rows: usize,
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
    },
}

fn default_shrinkage() -> f64 {
    0.01
}

fn default_split() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_fitter() -> Fitter {
    Fitter::Lasso
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: CovariateModel,
    pub mu_star: MuStarSpec,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_fitter")]
    pub fitter: Fitter,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub mu_source: MuSource,
    /// Fraction of rows used to fit `mu`.
    #[serde(default = "default_split")]
    pub split: f64,
    pub method: Method,
    #[serde(default)]
    pub alpha: ConfidenceLevel,
    #[serde(default = "default_true")]
    pub center_y: bool,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub misspecification: Misspecification,
    /// 1-based focal covariates; defaults to every usable covariate.
    #[serde(default)]
    pub variables: Option<Vec<usize>>,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Also report the upper bound `E[(Y - E[mu|Z])^2]` per variable.
    #[serde(default)]
    pub trivial_ucb: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn variables(&self) -> Vec<usize> {
        self.variables
            .clone()
            .unwrap_or_else(|| default_variables(&self.model))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.p != self.model.dim() {
            return Err(FloodgateError::validation(
                "p",
                format!(
                    "{} does not match the covariate model dimension {}",
                    self.p,
                    self.model.dim()
                ),
            ));
        }
        if self.replicates == 0 {
            return Err(FloodgateError::validation(
                "replicates",
                "need at least one replicate",
            ));
        }
        if self.n < 4 {
            return Err(FloodgateError::validation("n", "need at least 4 rows"));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(FloodgateError::validation(
                "split",
                format!("must lie in (0,1), got {}", self.split),
            ));
        }
        self.cv
            .validate((self.split * self.n as f64).floor() as usize)?;
        let usable = default_variables(&self.model);
        for &j in &self.variables() {
            if !usable.contains(&j) {
                return Err(FloodgateError::validation(
                    "variables",
                    format!("covariate {j} cannot be a focal variable"),
                ));
            }
        }
        let logistic = self.mu_star.kind == MuStarKind::LogisticLinear;
        if matches!(self.method, Method::Macm { .. }) && !logistic {
            return Err(FloodgateError::validation(
                "method",
                "MACM needs the LOGISTIC_LINEAR design",
            ));
        }
        if logistic
            && matches!(self.fitter, Fitter::Ols | Fitter::Ridge | Fitter::Lasso)
            && self.mu_source == MuSource::Fitted
        {
            return Err(FloodgateError::validation(
                "fitter",
                "labels in {-1, +1} need LOGIT_L1 or LOGIT_L2",
            ));
        }
        match self.method {
            Method::MmseMc { k } if k < 2 => {
                return Err(FloodgateError::validation(
                    "method.k",
                    "Monte Carlo moments need k >= 2",
                ));
            }
            Method::Macm { m, k, exact } if !exact && (k == 0 || m == Some(0)) => {
                return Err(FloodgateError::validation(
                    "method",
                    "MACM copy counts must be positive",
                ));
            }
            Method::Cosufficient { n2, .. } => {
                let p_design = self.p;
                if matches!(self.model, CovariateModel::Dmc(_)) {
                    if n2 < 2 {
                        return Err(FloodgateError::validation(
                            "method.n2",
                            "batches need at least 2 rows",
                        ));
                    }
                } else if n2 <= p_design + 2 {
                    return Err(FloodgateError::validation(
                        "method.n2",
                        format!("batch size {n2} must satisfy n2 > p + 2 = {} (p = d_z + 1 design columns)", p_design + 2),
                    ));
                }
            }
            _ => {}
        }
        if let Misspecification::InsampleGaussianFit { m_rows, shrinkage } = self.misspecification {
            if !matches!(
                self.model,
                CovariateModel::GaussianLinear(_)
                    | CovariateModel::Ar1(_)
                    | CovariateModel::GaussianJoint(_)
            ) {
                return Err(FloodgateError::validation(
                    "misspecification",
                    "in-sample Gaussian fitting needs a Gaussian model",
                ));
            }
            if m_rows < self.p + 1 {
                return Err(FloodgateError::Size(format!(
                    "m_rows = {m_rows} is below d_z + 2 = {} rows needed to fit the covariate law",
                    self.p + 1
                )));
            }
            if !(0.0..=1.0).contains(&shrinkage) {
                return Err(FloodgateError::validation(
                    "misspecification.shrinkage",
                    "must lie in [0,1]",
                ));
            }
        }
        if let MuSource::Corrupted { scale } = self.mu_source {
            if !scale.is_finite() {
                return Err(FloodgateError::validation(
                    "mu_source.scale",
                    "must be finite",
                ));
            }
        }
        Ok(())
    }
}

/// Everything about an experiment that does not change across replicates.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: ExperimentSpec,
    pub mustar: MuStar,
    pub variables: Vec<usize>,
    pub oracles: Vec<OracleValue>,
    corruption: Vec<f64>,
}

impl Prepared {
    pub fn new(spec: &ExperimentSpec) -> Result<Prepared> {
        spec.validate()?;
        let mustar = MuStar::generate(&spec.mu_star, spec.n, spec.p, spec.base_seed)?;
        let variables = spec.variables();
        let oracles = oracle::oracle_values(
            &spec.model,
            &mustar,
            &variables,
            spec.method.oracle_estimand(),
            &spec.oracle,
            spec.base_seed,
        )?;
        let corruption = match spec.mu_source {
            MuSource::Corrupted { scale } => {
                let mut rng = stream(
                    spec.mu_star.seed.unwrap_or(spec.base_seed),
                    &[TAG_DESIGN, 1],
                );
                let s = scale / (spec.n as f64).sqrt();
                (0..spec.p)
                    .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            _ => vec![0.0; spec.p],
        };
        Ok(Prepared {
            spec: spec.clone(),
            mustar,
            variables,
            oracles,
            corruption,
        })
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(self.spec.base_seed, &[TAG_REPLICATE, r as u64])
    }

    /// Replicate `r`: `x` is the first covariate, `z` the rest in order.
    /// Also returns `E[Y | W]` per row.
    pub fn generate_replicate(&self, r: usize) -> Result<(Dataset, Vec<f64>)> {
        let seed = self.replicate_seed(r);
        let n = self.spec.n;
        let w = self.spec.model.sample_full(n, seed)?;
        let mut rng = stream(seed, &[TAG_NOISE]);
        let means: Vec<f64> = (0..n)
            .map(|i| self.mustar.conditional_mean(w.row(i)))
            .collect();
        let y: Vec<f64> = means
            .iter()
            .map(|&m| {
                if self.mustar.is_logistic() {
                    // P(Y = 1) = (1 + m) / 2.
                    if rng.random::<f64>() < 0.5 * (1.0 + m) {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    m + rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        let x = w.select_columns(&[0]);
        let z = w.select_columns(&(1..self.spec.p).collect::<Vec<_>>());
        Ok((Dataset::new(y, x, z)?, means))
    }

    /// The true regression, or its corrupted version, over `(W_1, W_-1)`.
    pub fn oracle_regression(&self) -> WorkingRegression {
        let p = self.spec.p;
        match &self.mustar {
            MuStar::Linear { beta, logistic } => {
                let b: Vec<f64> = beta
                    .iter()
                    .zip(&self.corruption)
                    .map(|(b, c)| b + c)
                    .collect();
                let link = if *logistic {
                    Link::Logistic
                } else {
                    Link::Identity
                };
                WorkingRegression::glm(
                    RegressionKind::Custom,
                    link,
                    0.0,
                    vec![b[0]],
                    b[1..].to_vec(),
                )
            }
            MuStar::Nonlinear(_) => {
                let ms = self.mustar.clone();
                let c = self.corruption.clone();
                WorkingRegression::custom(1, p - 1, move |x, z| {
                    let mut w = Vec::with_capacity(p);
                    w.push(x[0]);
                    w.extend_from_slice(z);
                    ms.eval(&w) + c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub replicate: usize,
    pub variable: usize,
    pub estimand: Estimand,
    pub lcb: f64,
    pub point: f64,
    pub se: f64,
    pub n_eff: usize,
    pub oracle: f64,
    pub covered: bool,
    pub half_width: f64,
    pub degenerate: bool,
    pub ucb: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// A 1-based covariate, or `ALL`, `NULL`, `NONNULL`.
    pub label: String,
    pub count: usize,
    pub oracle: Option<f64>,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_half_width: f64,
    pub half_width_se: f64,
    pub mean_lcb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variables: Vec<usize>,
    pub oracles: Vec<OracleValue>,
    pub details: Vec<DetailRow>,
    pub summary: Vec<SummaryRow>,
    /// Mean over replicates of `Var(E[Y|W]) / Var(Y)` in the sample.
    pub explained_variance: f64,
}

/// Gaussian law of all covariates fitted to the rows of `w`, with the
/// covariance shrunk toward its diagonal.
pub fn fit_gaussian_law(w: &RowMatrix, shrinkage: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (m, p) = (w.nrows(), w.ncols());
    if m < p + 1 {
        return Err(FloodgateError::Size(format!(
            "{m} rows cannot fit a {p}-dimensional Gaussian"
        )));
    }
    let mean: Vec<f64> = (0..p)
        .map(|j| (0..m).map(|i| w.get(i, j)).sum::<f64>() / m as f64)
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..m {
        let row = w.row(i);
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            let v = cov[a][b] / (m - 1) as f64 * if a == b { 1.0 } else { 1.0 - shrinkage };
            cov[a][b] = v;
            cov[b][a] = v;
        }
    }
    Ok((mean, cov))
}

/// `nu(z) = E[mu | Z = z]` under `model`, with identically zero focal
/// coefficients.
fn conditional_mean_regression(
    mu: &WorkingRegression,
    model: &CovariateModel,
    probe: &[f64],
) -> Result<WorkingRegression> {
    let cond: Conditional = model.conditional()?;
    cond.eta_moments(mu, probe)?;
    let mu = mu.clone();
    let quad = NormalExpectation::new(64);
    let dx = cond.dx();
    Ok(WorkingRegression::custom_partially_linear(
        vec![0.0; dx],
        cond.dz(),
        move |z| {
            let (link, m, v) = cond.eta_moments(&mu, z).expect("checked on a probe row");
            match link {
                Link::Identity => m,
                Link::Logistic => quad.expect(m, v.sqrt(), |e| link.apply(e)),
            }
        },
    ))
}

fn with_context(replicate: usize, variable: usize) -> impl Fn(FloodgateError) -> FloodgateError {
    move |e| FloodgateError::InReplicate {
        replicate,
        variable,
        source: Box::new(e),
    }
}

fn run_replicate(prep: &Prepared, r: usize) -> Result<(Vec<DetailRow>, f64)> {
    let spec = &prep.spec;
    let ctx = |e| with_context(r, 0)(e);
    let seed = prep.replicate_seed(r);
    let (data, means) = prep.generate_replicate(r).map_err(ctx)?;
    let (_, sd_m) = mean_sd(&means);
    let (_, sd_y) = mean_sd(data.y());
    let explained = if sd_y > 0.0 {
        (sd_m / sd_y).powi(2)
    } else {
        0.0
    };
    let parts = split(&data, spec.split, seed).map_err(ctx)?;
    let mu_full = match spec.mu_source {
        MuSource::Fitted => spec
            .fitter
            .fit(&parts.fit_part, &spec.cv, seed)
            .map_err(ctx)?,
        _ => prep.oracle_regression(),
    };
    let fitted_law = match spec.misspecification {
        Misspecification::None => None,
        Misspecification::InsampleGaussianFit { m_rows, shrinkage } => {
            let mut order = parts.fit_rows.clone();
            order.extend_from_slice(&parts.infer_rows);
            let own = data.covariates();
            let w = if m_rows <= spec.n {
                own.select_rows(&order[..m_rows])
            } else {
                let fresh = spec
                    .model
                    .sample_full(m_rows - spec.n, derive_seed(seed, &[TAG_DESIGN]))
                    .map_err(ctx)?;
                let mut rows: Vec<Vec<f64>> = order.iter().map(|&i| own.row(i).to_vec()).collect();
                rows.extend((0..fresh.nrows()).map(|i| fresh.row(i).to_vec()));
                RowMatrix::from_rows(&rows).map_err(ctx)?
            };
            Some(fit_gaussian_law(&w, shrinkage).map_err(ctx)?)
        }
    };
    let estimand = spec.method.estimand();
    let mut rows = Vec::with_capacity(prep.variables.len());
    for (&j, oracle) in prep.variables.iter().zip(&prep.oracles) {
        let ctx = with_context(r, j);
        let j0 = j - 1;
        let data_j = parts.infer_part.refocus(&[j0]).map_err(&ctx)?;
        let mu_j = mu_full.refocus(&[j0]).map_err(&ctx)?;
        let model_j = match &fitted_law {
            None => focal_model(&spec.model, j0).map_err(&ctx)?,
            Some((mean, cov)) => CovariateModel::GaussianJoint(GaussianJointModel {
                mean: mean.clone(),
                cov: cov.clone(),
                focal: vec![j],
            }),
        };
        let report = if mu_j.depends_on_x() == Some(false) {
            LcbReport::degenerate(estimand, data_j.n())
        } else {
            let s = derive_seed(seed, &[j as u64]);
            spec.method
                .run(&data_j, &mu_j, &model_j, spec.alpha, spec.center_y, s)
                .map_err(&ctx)?
        };
        let ucb = if spec.trivial_ucb {
            let nu = conditional_mean_regression(&mu_j, &model_j, data_j.z_row(0)).map_err(&ctx)?;
            Some(trivial_ucb(&data_j, &nu, spec.alpha).map_err(&ctx)?)
        } else {
            None
        };
        rows.push(DetailRow {
            replicate: r,
            variable: j,
            estimand,
            lcb: report.lcb,
            point: report.point,
            se: report.se,
            n_eff: report.n_eff,
            oracle: oracle.value,
            covered: report.lcb <= oracle.value + COVER_TOL,
            half_width: oracle.value - report.lcb,
            degenerate: report.degenerate,
            ucb,
        });
    }
    Ok((rows, explained))
}

fn summary_row(label: String, rows: &[&DetailRow], oracle: Option<f64>) -> SummaryRow {
    let count = rows.len();
    let cov: Vec<f64> = rows
        .iter()
        .map(|d| f64::from(u8::from(d.covered)))
        .collect();
    let hw: Vec<f64> = rows.iter().map(|d| d.half_width).collect();
    let lcb: Vec<f64> = rows.iter().map(|d| d.lcb).collect();
    let (coverage, _) = mean_sd(&cov);
    let (mean_half_width, hw_sd) = mean_sd(&hw);
    let (mean_lcb, _) = mean_sd(&lcb);
    let nf = count.max(1) as f64;
    SummaryRow {
        label,
        count,
        oracle,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / nf).sqrt(),
        mean_half_width,
        half_width_se: if count > 1 { hw_sd / nf.sqrt() } else { 0.0 },
        mean_lcb,
    }
}

pub fn summarize(
    variables: &[usize],
    oracles: &[OracleValue],
    details: &[DetailRow],
) -> Vec<SummaryRow> {
    let mut out = Vec::with_capacity(variables.len() + 3);
    for (&j, o) in variables.iter().zip(oracles) {
        let rows: Vec<&DetailRow> = details.iter().filter(|d| d.variable == j).collect();
        out.push(summary_row(j.to_string(), &rows, Some(o.value)));
    }
    let all: Vec<&DetailRow> = details.iter().collect();
    let null: Vec<&DetailRow> = details.iter().filter(|d| d.oracle == 0.0).collect();
    let nonnull: Vec<&DetailRow> = details.iter().filter(|d| d.oracle != 0.0).collect();
    out.push(summary_row("ALL".into(), &all, None));
    out.push(summary_row("NULL".into(), &null, None));
    out.push(summary_row("NONNULL".into(), &nonnull, None));
    out
}

/// Run every replicate (in parallel) and summarize. Deterministic given
/// `base_seed`, whatever the thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let prep = Prepared::new(spec)?;
    run_prepared(&prep)
}

pub fn run_prepared(prep: &Prepared) -> Result<ExperimentResult> {
    let per_rep: Vec<(Vec<DetailRow>, f64)> = (0..prep.spec.replicates)
        .into_par_iter()
        .map(|r| run_replicate(prep, r))
        .collect::<Result<_>>()?;
    let explained_variance = per_rep.iter().map(|(_, e)| e).sum::<f64>() / per_rep.len() as f64;
    let details: Vec<DetailRow> = per_rep.into_iter().flat_map(|(d, _)| d).collect();
    let summary = summarize(&prep.variables, &prep.oracles, &details);
    Ok(ExperimentResult {
        variables: prep.variables.clone(),
        oracles: prep.oracles.clone(),
        details,
        summary,
        explained_variance,
    })
}

/// Robustness run: the covariate law used for inference is a Gaussian
/// fitted to `m_rows` rows.
pub fn robustness_mode(
    spec: &ExperimentSpec,
    m_rows: usize,
    shrinkage: f64,
) -> Result<ExperimentResult> {
    let mut s = spec.clone();
    s.misspecification = Misspecification::InsampleGaussianFit { m_rows, shrinkage };
    run_experiment(&s)
}

/// `(dataset, oracle per variable)` for one replicate.
pub fn generate_replicate(spec: &ExperimentSpec, r: usize) -> Result<(Dataset, Vec<OracleValue>)> {
    let prep = Prepared::new(spec)?;
    let (data, _) = prep.generate_replicate(r)?;
    Ok((data, prep.oracles))
}

pub const DETAIL_HEADER: [&str; 12] = [
    "replicate",
    "variable",
    "estimand",
    "lcb",
    "point",
    "se",
    "n_eff",
    "oracle",
    "covered",
    "half_width",
    "degenerate",
    "ucb",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "variable",
    "count",
    "oracle",
    "coverage",
    "coverage_se",
    "mean_half_width",
    "half_width_se",
    "mean_lcb",
];

impl ExperimentResult {
    pub fn write_detail_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(DETAIL_HEADER)?;
        for d in &self.details {
            w.write_record([
                d.replicate.to_string(),
                d.variable.to_string(),
                d.estimand.as_str().to_string(),
                fmt_float(d.lcb),
                fmt_float(d.point),
                fmt_float(d.se),
                d.n_eff.to_string(),
                fmt_float(d.oracle),
                d.covered.to_string(),
                fmt_float(d.half_width),
                d.degenerate.to_string(),
                d.ucb.map(fmt_float).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SUMMARY_HEADER)?;
        for s in &self.summary {
            w.write_record([
                s.label.clone(),
                s.count.to_string(),
                s.oracle.map(fmt_float).unwrap_or_default(),
                fmt_float(s.coverage),
                fmt_float(s.coverage_se),
                fmt_float(s.mean_half_width),
                fmt_float(s.half_width_se),
                fmt_float(s.mean_lcb),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_for(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.label == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::Ar1Model;

    pub(crate) fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            model: CovariateModel::Ar1(Ar1Model {
                dim: 5,
                rho: 0.3,
                focal_index: 1,
            }),
            mu_star: MuStarSpec {
                kind: MuStarKind::LinearSparse,
                sparsity: 2,
                amplitude: 8.0,
                seed: None,
            },
            n: 100,
            p: 5,
            fitter: Fitter::Ols,
            cv: CvConfig::default(),
            mu_source: MuSource::Fitted,
            split: 0.5,
            method: Method::MmseExact,
            alpha: ConfidenceLevel::default(),
            center_y: true,
            replicates: 4,
            base_seed: 9,
            misspecification: Misspecification::None,
            variables: None,
            oracle: OracleConfig::default(),
            trivial_ucb: true,
        }
    }

    #[test]
    fn tiny_run_has_expected_shape() {
        let res = run_experiment(&tiny_spec()).unwrap();
        assert_eq!(res.details.len(), 20);
        assert_eq!(res.summary.len(), 8);
        for d in &res.details {
            assert_eq!(d.covered, d.lcb <= d.oracle + COVER_TOL);
            assert!(d.ucb.unwrap() >= d.lcb * d.lcb);
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let s = tiny_spec();
        assert_eq!(ExperimentSpec::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn small_m_rows_is_a_size_error() {
        let mut s = tiny_spec();
        s.misspecification = Misspecification::InsampleGaussianFit {
            m_rows: 5,
            shrinkage: 0.0,
        };
        assert!(matches!(s.validate(), Err(FloodgateError::Size(_))));
    }
}
