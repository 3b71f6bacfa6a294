//! Co-sufficient floodgate: rows are split into batches, and conditional
//! moments are taken given `Z` and a per-batch sufficient statistic `T`, so
//! only the form of the covariate model (not its parameters) is needed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    ratio_lcb, BatchDiagnostics, ConfidenceLevel, Estimand, LcbReport, MomentPair,
};
use crate::covariate::{Conditional, CovariateModel, DmcConditional};
use crate::data::{Dataset, RowMatrix};
use crate::error::{FloodgateError, Result};
use crate::regression::WorkingRegression;
use crate::rng::{stream, Rng, TAG_BATCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub n2: usize,
    pub n1: usize,
    pub dropped: usize,
}

impl BatchPlan {
    pub fn new(n: usize, n2: usize) -> Result<BatchPlan> {
        if n2 == 0 {
            return Err(FloodgateError::validation(
                "n2",
                "batch size must be positive",
            ));
        }
        let n1 = n / n2;
        if n1 < 2 {
            return Err(FloodgateError::Size(format!(
                "batch size n2 = {n2} leaves {n1} batch(es) from {n} rows; need at least 2"
            )));
        }
        Ok(BatchPlan {
            n2,
            n1,
            dropped: n - n1 * n2,
        })
    }

    /// Row indices of each batch: contiguous blocks of a seeded shuffle.
    pub fn batches(&self, seed: u64) -> Vec<Vec<usize>> {
        let n = self.n1 * self.n2 + self.dropped;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, &[TAG_BATCH, 0, n as u64]));
        order
            .chunks(self.n2)
            .take(self.n1)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn diagnostics(&self) -> BatchDiagnostics {
        BatchDiagnostics {
            n1: self.n1,
            n2: self.n2,
            dropped: self.dropped,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosufficientConfig {
    pub alpha: ConfidenceLevel,
    pub n2: usize,
    /// Conditional copies per batch; 0 uses closed-form moments (partially
    /// linear `mu` under the Gaussian model, any `mu` under the chain).
    pub mc_k: usize,
    pub seed: u64,
}

impl Default for CosufficientConfig {
    fn default() -> Self {
        CosufficientConfig {
            alpha: ConfidenceLevel::default(),
            n2: 100,
            mc_k: 100,
            seed: 0,
        }
    }
}

/// Gaussian statistic for one batch: `T = (sum X, sum X Z)`, the hat-matrix
/// diagonal of `U = (1, Z)` and the fitted values `H X`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSufficientStat {
    pub t: Vec<f64>,
    pub hat_diag: Vec<f64>,
    pub hat_mean: Vec<f64>,
}

/// Thin orthonormal basis of the column space of `(1, Z)`.
struct HatBasis {
    q: DMatrix<f64>,
}

impl HatBasis {
    fn new(z: &RowMatrix) -> Result<HatBasis> {
        let n = z.nrows();
        let p = z.ncols() + 1;
        if n < p {
            return Err(FloodgateError::SingularDesign(format!(
                "batch of {n} rows cannot support {p} design columns"
            )));
        }
        let u = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z.get(i, j - 1) });
        let norms: Vec<f64> = (0..p).map(|j| u.column(j).norm()).collect();
        let qr = u.qr();
        let r = qr.r();
        for j in 0..p {
            if r[(j, j)].abs() <= 1e-10 * norms[j].max(f64::MIN_POSITIVE) {
                return Err(FloodgateError::SingularDesign(format!(
                    "batch design (1, Z) is rank deficient at column {j}"
                )));
            }
        }
        Ok(HatBasis { q: qr.q() })
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * (self.q.transpose() * v)
    }

    fn leverage(&self) -> Vec<f64> {
        (0..self.q.nrows())
            .map(|i| self.q.row(i).norm_squared())
            .collect()
    }
}

impl GaussianSufficientStat {
    pub fn compute(x: &[f64], z: &RowMatrix) -> Result<GaussianSufficientStat> {
        if x.len() != z.nrows() {
            return Err(FloodgateError::Shape("x and z batch lengths differ".into()));
        }
        let basis = HatBasis::new(z)?;
        let mut t = vec![x.iter().sum::<f64>()];
        for j in 0..z.ncols() {
            t.push(x.iter().enumerate().map(|(i, v)| v * z.get(i, j)).sum());
        }
        let hx = basis.project(&DVector::from_column_slice(x));
        Ok(GaussianSufficientStat {
            t,
            hat_diag: basis.leverage(),
            hat_mean: hx.iter().copied().collect(),
        })
    }
}

fn resample_gaussian_with(
    basis: &HatBasis,
    hx: &DVector<f64>,
    sd: f64,
    rng: &mut Rng,
) -> DVector<f64> {
    let n = hx.len();
    if sd == 0.0 {
        return hx.clone();
    }
    let eps = DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let proj = basis.project(&eps);
    hx + eps - proj
}

/// Copies of `X` drawn from its law given `(Z, T)` under
/// `X | Z ~ N((1, Z) gamma, sigma2)`: `X~ = H X + (I - H) eps`.
pub fn gaussian_conditional_resample(
    x: &[f64],
    z: &RowMatrix,
    sigma2: f64,
    seed: u64,
    copies: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(sigma2 >= 0.0) {
        return Err(FloodgateError::validation("sigma2", "must be nonnegative"));
    }
    if x.len() != z.nrows() {
        return Err(FloodgateError::Shape("x and z batch lengths differ".into()));
    }
    let basis = HatBasis::new(z)?;
    let hx = basis.project(&DVector::from_column_slice(x));
    let mut rng = stream(seed, &[TAG_BATCH, 2]);
    Ok((0..copies)
        .map(|_| {
            resample_gaussian_with(&basis, &hx, sigma2.sqrt(), &mut rng)
                .iter()
                .copied()
                .collect()
        })
        .collect())
}

/// Chain statistic for one batch: counts `N(k, k1, k2)` (indexed
/// `(k * K + k1) * K + k2`) and rows grouped by neighbour pair.
#[derive(Clone, Debug, PartialEq)]
pub struct DmcSufficientStat {
    pub num_states: usize,
    pub counts: Vec<usize>,
    pub strata: BTreeMap<(usize, usize), Vec<usize>>,
}

fn state_of(v: f64, k: usize, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < k {
        Ok(v as usize)
    } else {
        Err(FloodgateError::validation(
            what,
            format!("value {v} is not a state in 0..{k}"),
        ))
    }
}

impl DmcSufficientStat {
    pub fn compute(
        x: &[f64],
        left: &[f64],
        right: &[f64],
        num_states: usize,
    ) -> Result<DmcSufficientStat> {
        if x.len() != left.len() || x.len() != right.len() {
            return Err(FloodgateError::Shape(
                "x and neighbour columns differ in length".into(),
            ));
        }
        let k = num_states;
        let mut counts = vec![0; k * k * k];
        let mut strata: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for i in 0..x.len() {
            let s = state_of(x[i], k, "x")?;
            let k1 = state_of(left[i], k, "z (left neighbour)")?;
            let k2 = state_of(right[i], k, "z (right neighbour)")?;
            counts[(s * k + k1) * k + k2] += 1;
            strata.entry((k1, k2)).or_default().push(i);
        }
        Ok(DmcSufficientStat {
            num_states: k,
            counts,
            strata,
        })
    }

    fn permute(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]) {
        out.copy_from_slice(x);
        for rows in self.strata.values() {
            if rows.len() < 2 {
                continue;
            }
            let mut vals: Vec<f64> = rows.iter().map(|&i| x[i]).collect();
            vals.shuffle(rng);
            for (&i, v) in rows.iter().zip(vals) {
                out[i] = v;
            }
        }
    }
}

/// Copies of the focal chain state given the neighbours and the counts:
/// uniform permutations of `x` within each neighbour stratum.
pub fn dmc_conditional_resample(
    x: &[f64],
    left: &[f64],
    right: &[f64],
    num_states: usize,
    seed: u64,
    copies: usize,
) -> Result<Vec<Vec<f64>>> {
    let stat = DmcSufficientStat::compute(x, left, right, num_states)?;
    let mut rng = stream(seed, &[TAG_BATCH, 3]);
    Ok((0..copies)
        .map(|_| {
            let mut out = vec![0.0; x.len()];
            stat.permute(x, &mut rng, &mut out);
            out
        })
        .collect())
}

enum Law {
    Gaussian { sigma2: f64 },
    Dmc(DmcConditional),
}

fn law_of(model: &CovariateModel) -> Result<Law> {
    match (model, model.conditional()?) {
        (CovariateModel::Dmc(_), Conditional::Dmc(d)) => Ok(Law::Dmc(d)),
        (CovariateModel::Copula(_), _) => Err(FloodgateError::Unsupported(
            "co-sufficient floodgate supports Gaussian linear and Markov chain models".into(),
        )),
        (_, Conditional::Gaussian(g)) if g.dx == 1 => Ok(Law::Gaussian { sigma2: g.cov[0] }),
        _ => Err(FloodgateError::Unsupported(
            "co-sufficient floodgate needs a scalar focal covariate".into(),
        )),
    }
}

/// Per-row `(mu_i, E[mu | Z, T], Var(mu | Z, T))` for one batch.
fn batch_moments(
    law: &Law,
    data: &Dataset,
    mu: &WorkingRegression,
    rows: &[usize],
    mc_k: usize,
    rng: &mut Rng,
) -> Result<Vec<(f64, f64, f64)>> {
    let m = rows.len();
    let x: Vec<f64> = rows.iter().map(|&i| data.x_row(i)[0]).collect();
    let zb = data.z().select_rows(rows);
    let mu_obs: Vec<f64> = (0..m).map(|i| mu.eval(&[x[i]], zb.row(i))).collect();
    let finish = |vals: &[f64], i: usize, k: usize| {
        let row: Vec<f64> = (0..k).map(|c| vals[c * m + i]).collect();
        let mean = row.iter().sum::<f64>() / k as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        (mu_obs[i], mean, var)
    };
    match law {
        Law::Gaussian { sigma2 } => {
            let basis = HatBasis::new(&zb)?;
            let hx = basis.project(&DVector::from_column_slice(&x));
            if mc_k == 0 {
                let a = mu.linear_focal_coef().ok_or_else(|| {
                    FloodgateError::UnsupportedClosedForm(
                        "closed-form batch moments need a partially linear mu".into(),
                    )
                })?[0];
                let lev = basis.leverage();
                return Ok((0..m)
                    .map(|i| {
                        let mean = mu.eval(&[hx[i]], zb.row(i));
                        (mu_obs[i], mean, a * a * sigma2 * (1.0 - lev[i]).max(0.0))
                    })
                    .collect());
            }
            let sd = sigma2.sqrt();
            let mut vals = Vec::with_capacity(mc_k * m);
            for _ in 0..mc_k {
                let xt = resample_gaussian_with(&basis, &hx, sd, rng);
                vals.extend((0..m).map(|i| mu.eval(&[xt[i]], zb.row(i))));
            }
            Ok((0..m).map(|i| finish(&vals, i, mc_k)).collect())
        }
        Law::Dmc(d) => {
            let left = zb.column(d.left);
            let right = zb.column(d.right);
            let stat = DmcSufficientStat::compute(&x, &left, &right, d.num_states)?;
            if mc_k == 0 {
                // Under a uniform within-stratum permutation, X~_i is uniform
                // over the stratum's observed values.
                let mut out = vec![(0.0, 0.0, 0.0); m];
                for rows_s in stat.strata.values() {
                    for &i in rows_s {
                        let v: Vec<f64> = rows_s
                            .iter()
                            .map(|&l| mu.eval(&[x[l]], zb.row(i)))
                            .collect();
                        let mean = v.iter().sum::<f64>() / v.len() as f64;
                        let var =
                            v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
                        out[i] = (mu_obs[i], mean, var);
                    }
                }
                return Ok(out);
            }
            let mut vals = Vec::with_capacity(mc_k * m);
            let mut xt = vec![0.0; m];
            for _ in 0..mc_k {
                stat.permute(&x, rng, &mut xt);
                vals.extend((0..m).map(|i| mu.eval(&[xt[i]], zb.row(i))));
            }
            Ok((0..m).map(|i| finish(&vals, i, mc_k)).collect())
        }
    }
}

/// Per-batch `(R_m, V_m)` and the mean square of `mu`.
pub fn cosufficient_pairs(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &CosufficientConfig,
) -> Result<(Vec<MomentPair>, f64, BatchPlan)> {
    let law = law_of(model)?;
    if data.dx() != 1 || mu.dx() != 1 || mu.dz() != data.dz() || model.dz() != data.dz() {
        return Err(FloodgateError::Shape(
            "co-sufficient floodgate needs one focal column and matching z dimensions".into(),
        ));
    }
    if let Law::Gaussian { .. } = law {
        // (1, Z) has d_z + 1 columns; the statistic needs n2 > (d_z + 1) + 2.
        let p = data.dz() + 1;
        if cfg.n2 <= p + 2 {
            return Err(FloodgateError::validation(
                "n2",
                format!(
                    "batch size {} must exceed p + 2 = {} (p = d_z + 1 design columns)",
                    cfg.n2,
                    p + 2
                ),
            ));
        }
    }
    if cfg.mc_k == 1 {
        return Err(FloodgateError::Config(
            "mc_k = 1 leaves the copy variance undefined".into(),
        ));
    }
    let plan = BatchPlan::new(data.n(), cfg.n2)?;
    let batches = plan.batches(cfg.seed);
    let out: Vec<(MomentPair, f64)> = batches
        .par_iter()
        .enumerate()
        .map(|(b, rows)| {
            let mut rng = stream(cfg.seed, &[TAG_BATCH, 1, b as u64]);
            let mom = batch_moments(&law, data, mu, rows, cfg.mc_k, &mut rng)?;
            let n2 = rows.len() as f64;
            let mut r = 0.0;
            let mut v = 0.0;
            let mut sq = 0.0;
            for (&i, &(mu_i, mean, var)) in rows.iter().zip(&mom) {
                r += data.y()[i] * (mu_i - mean);
                v += var;
                sq += mu_i * mu_i;
            }
            Ok((
                MomentPair {
                    r: r / n2,
                    v: v / n2,
                },
                sq / n2,
            ))
        })
        .collect::<Result<_>>()?;
    let scale = out.iter().map(|(_, s)| s).sum::<f64>() / out.len() as f64;
    Ok((out.into_iter().map(|(p, _)| p).collect(), scale, plan))
}

/// Co-sufficient floodgate lower confidence bound (`n_eff` = number of batches).
pub fn cosufficient_lcb(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &CosufficientConfig,
) -> Result<LcbReport> {
    let (pairs, scale, plan) = cosufficient_pairs(data, mu, model, cfg)?;
    let mut rep = ratio_lcb(&pairs, scale, cfg.alpha, Estimand::MmseGap)?;
    rep.batches = Some(plan.diagnostics());
    Ok(rep)
}
