//! Conditional laws of `X` given `Z`: Gaussian (linear or joint), AR(1),
//! Gaussian copula over AR(1), and discrete Markov chains.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_columns, RowMatrix};
use crate::error::{FloodgateError, Result};
use crate::normal::{inverse_normal_cdf, normal_cdf};
use crate::regression::{dot, Link, WorkingRegression};
use crate::rng::{stream, Rng, TAG_JOINT, TAG_NULL_COPY};

const STOCHASTIC_TOL: f64 = 1e-12;

/// `X | Z ~ N((1, Z) gamma, sigma2)` with `Z ~ N(z_mean, z_cov)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearModel {
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub z_mean: Vec<f64>,
    pub z_cov: Vec<Vec<f64>>,
}

/// Stationary Gaussian AR(1) with unit marginal variances. `focal_index` is
/// 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1Model {
    pub dim: usize,
    pub rho: f64,
    pub focal_index: usize,
}

/// `W_j = 2 Phi(L_j) - 1` with `L` a latent AR(1); marginals are uniform on
/// [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub latent: Ar1Model,
}

/// Markov chain on states `0..num_states`; `transitions[j]` maps `W_{j+1}`
/// to `W_{j+2}` (1-based positions). The focal position must be interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMarkovChain {
    pub num_states: usize,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub focal_index: usize,
}

/// Multivariate normal over all `p` covariates with a (possibly grouped)
/// focal set given by 1-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianJointModel {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub focal: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateModel {
    GaussianLinear(GaussianLinearModel),
    Ar1(Ar1Model),
    Copula(CopulaModel),
    Dmc(DiscreteMarkovChain),
    GaussianJoint(GaussianJointModel),
}

/// `K x n x d_x` null copies; copy `k` of row `i` is `get(k, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NullCopies {
    pub big_k: usize,
    pub n: usize,
    pub dx: usize,
    pub data: Vec<f64>,
}

impl NullCopies {
    pub fn get(&self, k: usize, i: usize) -> &[f64] {
        let start = (k * self.n + i) * self.dx;
        &self.data[start..start + self.dx]
    }
}

fn matrix_from_nested(rows: &[Vec<f64>], d: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(FloodgateError::validation(
            field,
            format!("expected a {d}x{d} matrix"),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FloodgateError::validation(field, "entries must be finite"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * (1.0 + m[(i, j)].abs()) {
                return Err(FloodgateError::validation(
                    field,
                    "matrix must be symmetric",
                ));
            }
        }
    }
    Ok(m)
}

/// Cholesky factor of a positive semi-definite matrix (row-major, lower).
/// Zero pivots yield zero columns.
fn psd_cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    let scale = (0..d)
        .map(|i| a[i * d + i].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag < -1e-10 * scale {
            return Err(FloodgateError::validation(
                "covariance",
                "conditional covariance is not positive semi-definite",
            ));
        }
        if diag <= 1e-14 * scale {
            continue;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Ok(l)
}

/// `X | Z = z ~ N(intercept + coef z, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianConditional {
    pub dx: usize,
    pub dz: usize,
    pub intercept: Vec<f64>,
    /// `dx x dz`, row-major.
    pub coef: Vec<f64>,
    /// `dx x dx`, row-major.
    pub cov: Vec<f64>,
    chol: Vec<f64>,
}

impl GaussianConditional {
    pub fn new(intercept: Vec<f64>, coef: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let dx = intercept.len();
        if dx == 0 || cov.len() != dx * dx || !coef.len().is_multiple_of(dx) {
            return Err(FloodgateError::Shape(
                "inconsistent conditional Gaussian dimensions".into(),
            ));
        }
        let dz = coef.len() / dx;
        let chol = psd_cholesky(&cov, dx)?;
        Ok(GaussianConditional {
            dx,
            dz,
            intercept,
            coef,
            cov,
            chol,
        })
    }

    pub fn mean_into(&self, z: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.intercept[a] + dot(&self.coef[a * self.dz..(a + 1) * self.dz], z);
        }
    }

    pub fn mean(&self, z: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.dx];
        self.mean_into(z, &mut m);
        m
    }

    /// `a' cov a`.
    pub fn quad_form(&self, a: &[f64]) -> f64 {
        let d = self.dx;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += a[i] * self.cov[i * d + j] * a[j];
            }
        }
        s
    }

    #[inline]
    fn draw(&self, mean: &[f64], rng: &mut Rng, eps: &mut [f64], out: &mut [f64]) {
        let d = self.dx;
        if d == 1 {
            let e: f64 = rng.sample(StandardNormal);
            out[0] = mean[0] + self.chol[0] * e;
            return;
        }
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..d {
            out[i] = mean[i] + dot(&self.chol[i * d..i * d + i + 1], &eps[..=i]);
        }
    }

    /// Conditional of `W[focal] | W[rest]` for `W ~ N(mean, cov)`.
    fn from_joint(
        mean: &[f64],
        cov: &DMatrix<f64>,
        focal: &[usize],
        rest: &[usize],
    ) -> Result<Self> {
        let dx = focal.len();
        let dz = rest.len();
        let s_ff = DMatrix::from_fn(dx, dx, |i, j| cov[(focal[i], focal[j])]);
        if dz == 0 {
            let cov_c: Vec<f64> = (0..dx * dx).map(|k| s_ff[(k / dx, k % dx)]).collect();
            return GaussianConditional::new(
                focal.iter().map(|&f| mean[f]).collect(),
                Vec::new(),
                cov_c,
            );
        }
        let s_rr = DMatrix::from_fn(dz, dz, |i, j| cov[(rest[i], rest[j])]);
        let s_fr = DMatrix::from_fn(dx, dz, |i, j| cov[(focal[i], rest[j])]);
        let chol = s_rr.cholesky().ok_or_else(|| {
            FloodgateError::validation(
                "cov",
                "covariance of the conditioning block is not positive definite",
            )
        })?;
        // B = S_fr S_rr^{-1}, computed as (S_rr^{-1} S_rf)'.
        let b = chol.solve(&s_fr.transpose()).transpose();
        let cond = &s_ff - &b * s_fr.transpose();
        let intercept: Vec<f64> = (0..dx)
            .map(|i| mean[focal[i]] - (0..dz).map(|j| b[(i, j)] * mean[rest[j]]).sum::<f64>())
            .collect();
        let coef: Vec<f64> = (0..dx * dz).map(|k| b[(k / dz, k % dz)]).collect();
        let cov_c: Vec<f64> = (0..dx * dx)
            .map(|k| {
                let (i, j) = (k / dx, k % dx);
                0.5 * (cond[(i, j)] + cond[(j, i)])
            })
            .collect();
        GaussianConditional::new(intercept, coef, cov_c)
    }
}

/// Conditional probabilities `q(k | k1, k2)` of a Markov chain state given
/// its two neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct DmcConditional {
    pub num_states: usize,
    /// `Z` columns holding the left and right neighbours.
    pub left: usize,
    pub right: usize,
    pub dz: usize,
    /// Indexed `(k1 * K + k2) * K + k`; rows with zero mass are all `NaN`.
    pub q: Vec<f64>,
}

impl DmcConditional {
    pub fn pmf(&self, k1: usize, k2: usize) -> &[f64] {
        let k = self.num_states;
        &self.q[(k1 * k + k2) * k..(k1 * k + k2 + 1) * k]
    }

    pub fn state(&self, v: f64, what: &str) -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < self.num_states {
            Ok(v as usize)
        } else {
            Err(FloodgateError::validation(
                what,
                format!("value {v} is not a state in 0..{}", self.num_states),
            ))
        }
    }

    pub fn neighbours(&self, z: &[f64]) -> Result<(usize, usize)> {
        let k1 = self.state(z[self.left], "z (left neighbour)")?;
        let k2 = self.state(z[self.right], "z (right neighbour)")?;
        if self.pmf(k1, k2)[0].is_nan() {
            return Err(FloodgateError::validation(
                "z",
                format!("neighbour pair ({k1}, {k2}) has probability zero under the chain"),
            ));
        }
        Ok((k1, k2))
    }
}

/// A conditional law of `X | Z` ready for sampling.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditional {
    Gaussian(GaussianConditional),
    /// Gaussian conditional on the latent scale; `x = 2 Phi(l) - 1`.
    Copula(GaussianConditional),
    Dmc(DmcConditional),
}

fn to_latent(w: f64) -> f64 {
    let p = (0.5 * (w + 1.0)).clamp(1e-300, 1.0 - 1e-16);
    inverse_normal_cdf(p).unwrap_or(0.0)
}

pub fn from_latent(l: f64) -> f64 {
    2.0 * normal_cdf(l) - 1.0
}

impl Conditional {
    pub fn dx(&self) -> usize {
        match self {
            Conditional::Gaussian(g) | Conditional::Copula(g) => g.dx,
            Conditional::Dmc(_) => 1,
        }
    }

    pub fn dz(&self) -> usize {
        match self {
            Conditional::Gaussian(g) | Conditional::Copula(g) => g.dz,
            Conditional::Dmc(d) => d.dz,
        }
    }

    pub fn gaussian(&self) -> Option<&GaussianConditional> {
        match self {
            Conditional::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    /// The RNG stream for null copies of row `row`.
    pub fn row_stream(seed: u64, row: usize) -> Rng {
        stream(seed, &[TAG_NULL_COPY, row as u64])
    }

    /// Per-row sampler; validates `z`.
    pub fn at(&self, z: &[f64]) -> Result<RowSampler<'_>> {
        if z.len() != self.dz() {
            return Err(FloodgateError::Shape(format!(
                "z row has {} columns, model expects {}",
                z.len(),
                self.dz()
            )));
        }
        Ok(match self {
            Conditional::Gaussian(g) => RowSampler::Gaussian {
                g,
                mean: g.mean(z),
                eps: vec![0.0; g.dx],
            },
            Conditional::Copula(g) => {
                let latent: Vec<f64> = z.iter().map(|&w| to_latent(w)).collect();
                RowSampler::Copula {
                    g,
                    mean: g.mean(&latent),
                    eps: vec![0.0; g.dx],
                }
            }
            Conditional::Dmc(d) => {
                let (k1, k2) = d.neighbours(z)?;
                RowSampler::Categorical { pmf: d.pmf(k1, k2) }
            }
        })
    }

    /// Draw `big_k` copies for one row into `out` (length `big_k * dx`).
    pub fn draw_copies(
        &self,
        z: &[f64],
        rng: &mut Rng,
        big_k: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let mut s = self.at(z)?;
        let dx = self.dx();
        for k in 0..big_k {
            s.draw(rng, &mut out[k * dx..(k + 1) * dx]);
        }
        Ok(())
    }

    /// `(link, E[eta | z], Var(eta | z))` for a generalized linear (or
    /// declared partially-linear) `mu` under a Gaussian conditional.
    pub fn eta_moments(&self, mu: &WorkingRegression, z: &[f64]) -> Result<(Link, f64, f64)> {
        let g = self.gaussian().ok_or_else(|| {
            FloodgateError::UnsupportedClosedForm(
                "closed-form moments need a Gaussian conditional law".into(),
            )
        })?;
        if z.len() != g.dz || mu.dx() != g.dx || mu.dz() != g.dz {
            return Err(FloodgateError::Shape(
                "working regression and model dimensions differ".into(),
            ));
        }
        let m = g.mean(z);
        if let Some((link, intercept, a, b)) = mu.glm_parts() {
            return Ok((link, intercept + dot(a, &m) + dot(b, z), g.quad_form(a)));
        }
        if let Some(a) = mu.linear_focal_coef() {
            return Ok((Link::Identity, mu.eval(&m, z), g.quad_form(a)));
        }
        Err(FloodgateError::UnsupportedClosedForm(
            "working regression is not partially linear in x".into(),
        ))
    }

    /// Closed-form `(E[mu | z], Var(mu | z))` for partially-linear `mu`.
    pub fn linear_moments(&self, mu: &WorkingRegression, z: &[f64]) -> Result<(f64, f64)> {
        match self.eta_moments(mu, z)? {
            (Link::Identity, m, v) => Ok((m, v)),
            _ => Err(FloodgateError::UnsupportedClosedForm(
                "working regression is not partially linear in x".into(),
            )),
        }
    }
}

/// The law of a single focal covariate at one `z`.
#[derive(Clone, Debug, PartialEq)]
pub enum UnivariateLaw {
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// `x = 2 Phi(l) - 1` with `l ~ N(mean, sd^2)`.
    Copula {
        mean: f64,
        sd: f64,
    },
    Discrete(Vec<f64>),
}

impl Conditional {
    pub fn univariate(&self, z: &[f64]) -> Result<UnivariateLaw> {
        if self.dx() != 1 {
            return Err(FloodgateError::Unsupported(
                "univariate law of a grouped focal set".into(),
            ));
        }
        match self.at(z)? {
            RowSampler::Gaussian { g, mean, .. } => Ok(UnivariateLaw::Gaussian {
                mean: mean[0],
                sd: g.cov[0].max(0.0).sqrt(),
            }),
            RowSampler::Copula { g, mean, .. } => Ok(UnivariateLaw::Copula {
                mean: mean[0],
                sd: g.cov[0].max(0.0).sqrt(),
            }),
            RowSampler::Categorical { pmf } => Ok(UnivariateLaw::Discrete(pmf.to_vec())),
        }
    }
}

pub enum RowSampler<'a> {
    Gaussian {
        g: &'a GaussianConditional,
        mean: Vec<f64>,
        eps: Vec<f64>,
    },
    Copula {
        g: &'a GaussianConditional,
        mean: Vec<f64>,
        eps: Vec<f64>,
    },
    Categorical {
        pmf: &'a [f64],
    },
}

impl RowSampler<'_> {
    #[inline]
    pub fn draw(&mut self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            RowSampler::Gaussian { g, mean, eps } => g.draw(mean, rng, eps, out),
            RowSampler::Copula { g, mean, eps } => {
                g.draw(mean, rng, eps, out);
                for v in out.iter_mut() {
                    *v = from_latent(*v);
                }
            }
            RowSampler::Categorical { pmf } => out[0] = sample_categorical(pmf, rng) as f64,
        }
    }
}

fn sample_categorical(pmf: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding: fall back to the last state with positive mass.
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl Ar1Model {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FloodgateError::validation("dim", "must be at least 1"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(FloodgateError::validation("rho", "must lie in (-1, 1)"));
        }
        if self.focal_index == 0 || self.focal_index > self.dim {
            return Err(FloodgateError::validation(
                "focal_index",
                format!("must lie in [1, {}]", self.dim),
            ));
        }
        Ok(())
    }

    /// `Var(W_j | W_{-j})` from the AR(1) precision structure.
    pub fn conditional_variance(&self) -> f64 {
        let r2 = self.rho * self.rho;
        if self.dim == 1 {
            1.0
        } else if self.focal_index == 1 || self.focal_index == self.dim {
            1.0 - r2
        } else {
            (1.0 - r2) / (1.0 + r2)
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.rho.powi((i as i32 - j as i32).abs())
        })
    }

    fn conditional(&self) -> Result<GaussianConditional> {
        self.validate()?;
        let (p, j) = (self.dim, self.focal_index);
        let mut coef = vec![0.0; p - 1];
        let r = self.rho;
        // Z column of W_{j-1} is j-2, of W_{j+1} is j-1 (0-based).
        if p > 1 {
            if j == 1 {
                coef[0] = r;
            } else if j == p {
                coef[p - 2] = r;
            } else {
                let c = r / (1.0 + r * r);
                coef[j - 2] = c;
                coef[j - 1] = c;
            }
        }
        GaussianConditional::new(vec![0.0], coef, vec![self.conditional_variance()])
    }

    fn sample_full(&self, n: usize, rng: &mut Rng) -> RowMatrix {
        let p = self.dim;
        let mut w = RowMatrix::zeros(n, p);
        let innov = (1.0 - self.rho * self.rho).sqrt();
        for i in 0..n {
            let row = w.row_mut(i);
            row[0] = rng.sample(StandardNormal);
            for j in 1..p {
                let e: f64 = rng.sample(StandardNormal);
                row[j] = self.rho * row[j - 1] + innov * e;
            }
        }
        w
    }
}

impl DiscreteMarkovChain {
    pub fn dim(&self) -> usize {
        self.transitions.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_states;
        if k < 2 {
            return Err(FloodgateError::validation(
                "num_states",
                "need at least 2 states",
            ));
        }
        let check_prob = |v: &[f64], field: &str| -> Result<()> {
            if v.len() != k {
                return Err(FloodgateError::validation(
                    field,
                    format!("expected {k} probabilities"),
                ));
            }
            if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(FloodgateError::validation(
                    field,
                    "probabilities must be finite and nonnegative",
                ));
            }
            if (v.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(FloodgateError::validation(
                    field,
                    "probabilities must sum to 1",
                ));
            }
            Ok(())
        };
        check_prob(&self.initial, "initial")?;
        for (t, m) in self.transitions.iter().enumerate() {
            if m.len() != k {
                return Err(FloodgateError::validation(
                    "transitions",
                    format!("matrix {t} must be {k}x{k}"),
                ));
            }
            for row in m {
                check_prob(row, "transitions")?;
            }
        }
        let p = self.dim();
        if self.focal_index <= 1 || self.focal_index >= p {
            return Err(FloodgateError::Unsupported(format!(
                "focal index {} is not interior (need 1 < j < {p})",
                self.focal_index
            )));
        }
        Ok(())
    }

    fn conditional(&self) -> Result<DmcConditional> {
        self.validate()?;
        let k = self.num_states;
        let j = self.focal_index;
        let into = &self.transitions[j - 2];
        let out = &self.transitions[j - 1];
        let mut q = vec![0.0; k * k * k];
        for k1 in 0..k {
            for k2 in 0..k {
                let w: Vec<f64> = (0..k).map(|s| into[k1][s] * out[s][k2]).collect();
                let total: f64 = w.iter().sum();
                for s in 0..k {
                    q[(k1 * k + k2) * k + s] = if total > 0.0 { w[s] / total } else { f64::NAN };
                }
            }
        }
        Ok(DmcConditional {
            num_states: k,
            left: j - 2,
            right: j - 1,
            dz: self.dim() - 1,
            q,
        })
    }

    fn sample_full(&self, n: usize, rng: &mut Rng) -> RowMatrix {
        let p = self.dim();
        let mut w = RowMatrix::zeros(n, p);
        for i in 0..n {
            let row = w.row_mut(i);
            let mut s = sample_categorical(&self.initial, rng);
            row[0] = s as f64;
            for (t, m) in self.transitions.iter().enumerate() {
                s = sample_categorical(&m[s], rng);
                row[t + 1] = s as f64;
            }
        }
        w
    }
}

impl GaussianLinearModel {
    /// The joint law of `[X | Z]` with the given 1-based focal set.
    pub fn to_joint(&self, focal: Vec<usize>) -> Result<GaussianJointModel> {
        self.validate()?;
        let dz = self.dz();
        let g = &self.gamma[1..];
        let szz = &self.z_cov;
        let sxz: Vec<f64> = (0..dz)
            .map(|b| (0..dz).map(|a| g[a] * szz[a][b]).sum())
            .collect();
        let vx = self.sigma2 + dot(&sxz, g);
        let mut mean = vec![self.gamma[0] + dot(g, &self.z_mean)];
        mean.extend_from_slice(&self.z_mean);
        let mut cov = vec![vec![0.0; dz + 1]; dz + 1];
        cov[0][0] = vx;
        for a in 0..dz {
            cov[0][a + 1] = sxz[a];
            cov[a + 1][0] = sxz[a];
            cov[a + 1][1..].copy_from_slice(&szz[a]);
        }
        Ok(GaussianJointModel { mean, cov, focal })
    }

    pub fn dz(&self) -> usize {
        self.z_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dz = self.dz();
        if self.gamma.len() != dz + 1 {
            return Err(FloodgateError::validation(
                "gamma",
                format!("expected {} entries (intercept + slopes)", dz + 1),
            ));
        }
        if self
            .gamma
            .iter()
            .chain(&self.z_mean)
            .any(|v| !v.is_finite())
        {
            return Err(FloodgateError::validation(
                "gamma",
                "entries must be finite",
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(FloodgateError::validation("sigma2", "must be positive"));
        }
        let cov = matrix_from_nested(&self.z_cov, dz, "z_cov")?;
        if dz > 0 && cov.cholesky().is_none() {
            return Err(FloodgateError::validation(
                "z_cov",
                "must be positive definite",
            ));
        }
        Ok(())
    }

    fn conditional(&self) -> Result<GaussianConditional> {
        self.validate()?;
        GaussianConditional::new(
            vec![self.gamma[0]],
            self.gamma[1..].to_vec(),
            vec![self.sigma2],
        )
    }
}

impl GaussianJointModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn focal0(&self) -> Result<Vec<usize>> {
        let p = self.dim();
        if self.focal.is_empty() {
            return Err(FloodgateError::validation(
                "focal",
                "at least one focal index is required",
            ));
        }
        let mut out = Vec::new();
        for &f in &self.focal {
            if f == 0 || f > p {
                return Err(FloodgateError::validation(
                    "focal",
                    format!("index {f} outside [1, {p}]"),
                ));
            }
            out.push(f - 1);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if p == 0 {
            return Err(FloodgateError::validation("mean", "empty mean vector"));
        }
        let cov = matrix_from_nested(&self.cov, p, "cov")?;
        if cov.clone().cholesky().is_none() {
            return Err(FloodgateError::validation(
                "cov",
                "must be positive definite",
            ));
        }
        self.focal0()?;
        Ok(cov)
    }
}

impl CovariateModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovariateModel::GaussianLinear(m) => m.validate(),
            CovariateModel::Ar1(m) => m.validate(),
            CovariateModel::Copula(m) => m.latent.validate(),
            CovariateModel::Dmc(m) => m.validate(),
            CovariateModel::GaussianJoint(m) => m.validate().map(|_| ()),
        }
    }

    /// Total number of covariates.
    pub fn dim(&self) -> usize {
        match self {
            CovariateModel::GaussianLinear(m) => m.dz() + 1,
            CovariateModel::Ar1(m) => m.dim,
            CovariateModel::Copula(m) => m.latent.dim,
            CovariateModel::Dmc(m) => m.dim(),
            CovariateModel::GaussianJoint(m) => m.dim(),
        }
    }

    /// 1-based focal indices into the full covariate vector.
    pub fn focal(&self) -> Vec<usize> {
        match self {
            CovariateModel::GaussianLinear(_) => vec![1],
            CovariateModel::Ar1(m) => vec![m.focal_index],
            CovariateModel::Copula(m) => vec![m.latent.focal_index],
            CovariateModel::Dmc(m) => vec![m.focal_index],
            CovariateModel::GaussianJoint(m) => m.focal.clone(),
        }
    }

    pub fn dx(&self) -> usize {
        self.focal().len()
    }

    pub fn dz(&self) -> usize {
        self.dim() - self.dx()
    }

    /// The same joint law with a different single focal covariate (1-based).
    pub fn with_focal(&self, j: usize) -> Result<CovariateModel> {
        let mut m = self.clone();
        match &mut m {
            CovariateModel::GaussianLinear(_) if j == 1 => {}
            CovariateModel::GaussianLinear(_) => {
                return Err(FloodgateError::Unsupported(
                    "a Gaussian linear model fixes its focal covariate".into(),
                ))
            }
            CovariateModel::Ar1(a) => a.focal_index = j,
            CovariateModel::Copula(c) => c.latent.focal_index = j,
            CovariateModel::Dmc(d) => d.focal_index = j,
            CovariateModel::GaussianJoint(g) => g.focal = vec![j],
        }
        m.validate()?;
        Ok(m)
    }

    pub fn conditional(&self) -> Result<Conditional> {
        Ok(match self {
            CovariateModel::GaussianLinear(m) => Conditional::Gaussian(m.conditional()?),
            CovariateModel::Ar1(m) => Conditional::Gaussian(m.conditional()?),
            CovariateModel::Copula(m) => Conditional::Copula(m.latent.conditional()?),
            CovariateModel::Dmc(m) => Conditional::Dmc(m.conditional()?),
            CovariateModel::GaussianJoint(m) => {
                let cov = m.validate()?;
                let focal = m.focal0()?;
                let (_, rest) = partition_columns(m.dim(), &focal)?;
                Conditional::Gaussian(GaussianConditional::from_joint(
                    &m.mean, &cov, &focal, &rest,
                )?)
            }
        })
    }

    /// `n` i.i.d. draws of the full covariate vector, in natural column order
    /// (for the Gaussian linear model: `[X | Z]`).
    pub fn sample_full(&self, n: usize, seed: u64) -> Result<RowMatrix> {
        if n == 0 {
            return Err(FloodgateError::Size(
                "sample size must be at least 1".into(),
            ));
        }
        self.validate()?;
        let mut rng = stream(seed, &[TAG_JOINT, n as u64]);
        Ok(match self {
            CovariateModel::Ar1(m) => m.sample_full(n, &mut rng),
            CovariateModel::Copula(m) => {
                let mut w = m.latent.sample_full(n, &mut rng);
                for i in 0..n {
                    for v in w.row_mut(i) {
                        *v = from_latent(*v);
                    }
                }
                w
            }
            CovariateModel::Dmc(m) => m.sample_full(n, &mut rng),
            CovariateModel::GaussianLinear(m) => {
                let dz = m.dz();
                let chol = if dz > 0 {
                    let cov = matrix_from_nested(&m.z_cov, dz, "z_cov")?;
                    let l = cov.cholesky().expect("validated").l();
                    (0..dz * dz).map(|k| l[(k / dz, k % dz)]).collect()
                } else {
                    Vec::new()
                };
                let sd = m.sigma2.sqrt();
                let mut w = RowMatrix::zeros(n, dz + 1);
                let mut eps = vec![0.0; dz];
                for i in 0..n {
                    for e in eps.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                    let row = w.row_mut(i);
                    for a in 0..dz {
                        row[1 + a] = m.z_mean[a] + dot(&chol[a * dz..a * dz + a + 1], &eps[..=a]);
                    }
                    let e: f64 = rng.sample(StandardNormal);
                    row[0] = m.gamma[0] + dot(&m.gamma[1..], &row[1..]) + sd * e;
                }
                w
            }
            CovariateModel::GaussianJoint(m) => {
                let p = m.dim();
                let cov = m.validate()?;
                let l = cov.cholesky().expect("validated").l();
                let mut w = RowMatrix::zeros(n, p);
                let mut eps = vec![0.0; p];
                for i in 0..n {
                    for e in eps.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                    let row = w.row_mut(i);
                    for a in 0..p {
                        row[a] = m.mean[a] + (0..=a).map(|b| l[(a, b)] * eps[b]).sum::<f64>();
                    }
                }
                w
            }
        })
    }

    /// `n` i.i.d. draws split into `(x, z)` by the model's focal set.
    pub fn sample_joint(&self, n: usize, seed: u64) -> Result<(RowMatrix, RowMatrix)> {
        let w = self.sample_full(n, seed)?;
        let focal: Vec<usize> = self.focal().iter().map(|f| f - 1).collect();
        let (xc, zc) = partition_columns(w.ncols(), &focal)?;
        Ok((w.select_columns(&xc), w.select_columns(&zc)))
    }
}

/// `big_k` null copies of `X` for every row of `z`. Copies for row `i` come
/// from the stream keyed by `(seed, i)`, so any subset of rows reproduces
/// the same draws.
pub fn sample_null_copies(
    model: &CovariateModel,
    z: &RowMatrix,
    big_k: usize,
    seed: u64,
) -> Result<NullCopies> {
    if big_k == 0 {
        return Err(FloodgateError::Config("need at least one null copy".into()));
    }
    let cond = model.conditional()?;
    if z.ncols() != cond.dz() {
        return Err(FloodgateError::Shape(format!(
            "z has {} columns, model expects {}",
            z.ncols(),
            cond.dz()
        )));
    }
    let n = z.nrows();
    let dx = cond.dx();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; big_k * dx];
            let mut rng = Conditional::row_stream(seed, i);
            cond.draw_copies(z.row(i), &mut rng, big_k, &mut buf)?;
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; big_k * n * dx];
    for (i, buf) in rows.iter().enumerate() {
        for k in 0..big_k {
            let dst = (k * n + i) * dx;
            data[dst..dst + dx].copy_from_slice(&buf[k * dx..(k + 1) * dx]);
        }
    }
    Ok(NullCopies { big_k, n, dx, data })
}

/// Closed-form `(E[mu | Z = z], Var(mu | Z = z))` under a Gaussian linear
/// model for `mu(x, z) = a x + g(z)`.
pub fn cond_moments_linear(
    model: &GaussianLinearModel,
    mu: &WorkingRegression,
    z: &[f64],
) -> Result<(f64, f64)> {
    Conditional::Gaussian(model.conditional()?).linear_moments(mu, z)
}
