//! Generating regression functions for synthetic experiments.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{FloodgateError, Result};
use crate::rng::{stream, Rng, TAG_DESIGN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MuStarKind {
    LinearSparse,
    NonlinearF1,
    /// Linear log-odds for labels in {-1, +1}.
    LogisticLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuStarSpec {
    pub kind: MuStarKind,
    #[serde(default = "default_sparsity")]
    pub sparsity: usize,
    /// Effect size before division by `sqrt(n)`.
    pub amplitude: f64,
    /// Design seed; defaults to the experiment's base seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_sparsity() -> usize {
    30
}

/// The ten elementwise transforms of the nonlinear design, by tag.
pub fn g_fn(tag: u8, x: f64) -> f64 {
    use std::f64::consts::PI;
    match tag {
        0 => (PI * x).sin(),
        1 => (PI * x).cos(),
        2 => (PI * x / 2.0).sin(),
        3 => {
            if x > 0.0 {
                (PI * x).cos()
            } else {
                0.0
            }
        }
        4 => x * (PI * x).sin(),
        5 => x,
        6 => x.abs(),
        7 => x * x,
        8 => x * x * x,
        _ => x.exp() - 1.0,
    }
}

pub const G_MENU_LEN: u8 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearDesign {
    pub support: Vec<usize>,
    pub s1: Vec<usize>,
    pub s2: Vec<(usize, usize)>,
    pub s3: Vec<(usize, usize, usize)>,
    /// Transform tag for each covariate (only entries in `support` matter).
    pub tags: Vec<u8>,
    pub scale: f64,
}

/// A drawn regression function over the full covariate vector `w` (0-based
/// column indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MuStar {
    Linear { beta: Vec<f64>, logistic: bool },
    Nonlinear(NonlinearDesign),
}

impl MuStar {
    pub fn generate(spec: &MuStarSpec, n: usize, p: usize, base_seed: u64) -> Result<MuStar> {
        if !spec.amplitude.is_finite() {
            return Err(FloodgateError::validation("amplitude", "must be finite"));
        }
        if spec.sparsity > p {
            return Err(FloodgateError::validation(
                "sparsity",
                format!("exceeds the covariate dimension {p}"),
            ));
        }
        let mut rng = stream(spec.seed.unwrap_or(base_seed), &[TAG_DESIGN]);
        let scale = spec.amplitude / (n as f64).sqrt();
        match spec.kind {
            MuStarKind::LinearSparse | MuStarKind::LogisticLinear => {
                let mut beta = vec![0.0; p];
                for j in sample(&mut rng, p, spec.sparsity) {
                    beta[j] = if rng.random::<bool>() { scale } else { -scale };
                }
                Ok(MuStar::Linear {
                    beta,
                    logistic: spec.kind == MuStarKind::LogisticLinear,
                })
            }
            MuStarKind::NonlinearF1 => Ok(MuStar::Nonlinear(nonlinear_design(
                &mut rng,
                p,
                spec.sparsity,
                scale,
            )?)),
        }
    }

    /// Regression function value (log-odds for the logistic design).
    pub fn eval(&self, w: &[f64]) -> f64 {
        match self {
            MuStar::Linear { beta, .. } => beta.iter().zip(w).map(|(b, x)| b * x).sum(),
            MuStar::Nonlinear(d) => {
                let g = |j: usize| g_fn(d.tags[j], w[j]);
                let mut s: f64 = d.s1.iter().map(|&j| g(j)).sum();
                s += d.s2.iter().map(|&(a, b)| g(a) * g(b)).sum::<f64>();
                s +=
                    d.s3.iter()
                        .map(|&(a, b, c)| g(a) * g(b) * g(c))
                        .sum::<f64>();
                d.scale * s
            }
        }
    }

    /// `E[Y | W = w]`.
    pub fn conditional_mean(&self, w: &[f64]) -> f64 {
        let v = self.eval(w);
        if self.is_logistic() {
            (0.5 * v).tanh()
        } else {
            v
        }
    }

    pub fn is_logistic(&self) -> bool {
        matches!(self, MuStar::Linear { logistic: true, .. })
    }

    /// Whether covariate `j` (0-based) enters the function.
    pub fn is_active(&self, j: usize) -> bool {
        match self {
            MuStar::Linear { beta, .. } => beta[j] != 0.0,
            MuStar::Nonlinear(d) => d.scale != 0.0 && d.support.contains(&j),
        }
    }
}

/// Weighted draw of `k` distinct elements.
fn weighted_distinct(rng: &mut Rng, items: &[usize], weights: &[f64], k: usize) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = w.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (i, &v) in w.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            if u < v {
                pick = i;
                break;
            }
            u -= v;
        }
        out.push(items[pick]);
        w[pick] = 0.0;
    }
    out
}

fn nonlinear_design(
    rng: &mut Rng,
    p: usize,
    sparsity: usize,
    scale: f64,
) -> Result<NonlinearDesign> {
    if sparsity < 6 {
        return Err(FloodgateError::validation(
            "sparsity",
            "the nonlinear design needs at least 6 active covariates",
        ));
    }
    let support: Vec<usize> = sample(rng, p, sparsity).into_vec();
    let n_main = sparsity / 2;
    let n_forced = (n_main / 3).min(5);
    let mut s1 = support.clone();
    s1.shuffle(rng);
    s1.truncate(n_main);
    let mut wl: Vec<usize> = support
        .iter()
        .copied()
        .filter(|j| !s1.contains(j))
        .collect();
    let mut paired = s1.clone();
    paired.shuffle(rng);
    let mut s2: Vec<(usize, usize)> = paired[..2 * n_forced]
        .chunks(2)
        .map(|c| (c[0], c[1]))
        .collect();
    let total = support.len() as f64;
    let weights = |wl: &[usize], factor: f64| -> Vec<f64> {
        let in_wl = factor * wl.len() as f64 / total;
        let outside = (total - wl.len() as f64) / total;
        support
            .iter()
            .map(|j| if wl.contains(j) { in_wl } else { outside })
            .collect()
    };
    while wl.len() > 5 {
        let pick = weighted_distinct(rng, &support, &weights(&wl, 2.0), 2);
        wl.retain(|j| !pick.contains(j));
        s2.push((pick[0], pick[1]));
    }
    let mut s3 = Vec::new();
    while !wl.is_empty() {
        let pick = weighted_distinct(rng, &support, &weights(&wl, 1.5), 3);
        wl.retain(|j| !pick.contains(j));
        s3.push((pick[0], pick[1], pick[2]));
    }
    let tags = (0..p).map(|_| rng.random_range(0..G_MENU_LEN)).collect();
    Ok(NonlinearDesign {
        support,
        s1,
        s2,
        s3,
        tags,
        scale,
    })
}
