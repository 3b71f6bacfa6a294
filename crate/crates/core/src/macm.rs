//! Lower confidence bounds for the MACM gap `E|E[Y|X,Z] - E[Y|Z]|` with
//! labels in {-1, +1}.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{mean_sd, ConfidenceLevel, Estimand, LcbReport};
use crate::covariate::{Conditional, CovariateModel};
use crate::data::Dataset;
use crate::error::{FloodgateError, Result};
use crate::mmse::check_dims;
use crate::normal::{normal_cdf, NormalExpectation};
use crate::regression::WorkingRegression;

const HERMITE_ORDER: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacmConfig {
    pub alpha: ConfidenceLevel,
    /// Copies for the conditional mean `g^M`; `None` uses `4 n`.
    pub m_copies: Option<usize>,
    /// Copies for the conditional sign probabilities.
    pub k_copies: usize,
    /// Closed-form conditional probabilities (Gaussian model, generalized
    /// linear `mu`).
    pub exact_moments: bool,
    pub seed: u64,
}

impl Default for MacmConfig {
    fn default() -> Self {
        MacmConfig {
            alpha: ConfidenceLevel::default(),
            m_copies: None,
            k_copies: 100,
            exact_moments: false,
            seed: 0,
        }
    }
}

pub(crate) fn check_labels(y: &[f64]) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        if v != 1.0 && v != -1.0 {
            return Err(FloodgateError::Label(format!(
                "row {i}: response {v} is not -1 or +1"
            )));
        }
    }
    Ok(())
}

/// Per-row `R_i` and whether the row's conditional law of `mu` was a point mass.
pub fn macm_terms(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &MacmConfig,
) -> Result<Vec<(f64, bool)>> {
    let n = data.n();
    if n < 2 {
        return Err(FloodgateError::Size(
            "MACM floodgate needs at least 2 inference rows".into(),
        ));
    }
    check_labels(data.y())?;
    let cond = model.conditional()?;
    check_dims(data, mu, &cond)?;
    if cfg.exact_moments {
        let quad = NormalExpectation::new(HERMITE_ORDER);
        return (0..n)
            .into_par_iter()
            .with_min_len(32)
            .map(|i| {
                let (x, z, y) = (data.x_row(i), data.z_row(i), data.y()[i]);
                let (link, m, v) = cond.eta_moments(mu, z)?;
                if !(v > 0.0) {
                    return Ok((0.0, true));
                }
                let sd = v.sqrt();
                let g = quad.expect(m, sd, |eta| link.apply(eta));
                let p_below = normal_cdf((link.invert(g) - m) / sd);
                let u = mu.eval(x, z) - g;
                let r = if y > 0.0 {
                    p_below - f64::from(u < 0.0)
                } else {
                    (1.0 - p_below) - f64::from(u > 0.0)
                };
                Ok((r, false))
            })
            .collect();
    }
    let m_copies = cfg.m_copies.unwrap_or(4 * n);
    if m_copies == 0 || cfg.k_copies == 0 {
        return Err(FloodgateError::Config(
            "Monte Carlo MACM needs M >= 1 and K >= 1 copies".into(),
        ));
    }
    let k_copies = cfg.k_copies;
    (0..n)
        .into_par_iter()
        .with_min_len(8)
        .map_init(Vec::new, |buf: &mut Vec<f64>, i| {
            let (x, z, y) = (data.x_row(i), data.z_row(i), data.y()[i]);
            let at = mu.at_z(z);
            let mu_i = at.eval(x);
            let mut sampler = cond.at(z)?;
            let mut rng = Conditional::row_stream(cfg.seed, i);
            let mut xt = vec![0.0; cond.dx()];
            buf.clear();
            for _ in 0..m_copies + k_copies {
                sampler.draw(&mut rng, &mut xt);
                buf.push(at.eval(&xt));
            }
            let g = buf[..m_copies].iter().sum::<f64>() / m_copies as f64;
            let hits = buf[m_copies..]
                .iter()
                .filter(|&&m| y * (m - g) < 0.0)
                .count();
            let r = hits as f64 / k_copies as f64 - f64::from(y * (mu_i - g) < 0.0);
            let point_mass = buf.iter().all(|&m| m == mu_i);
            Ok((r, point_mass))
        })
        .collect()
}

/// Floodgate bound for the MACM gap: `2 max(R_bar - z s / sqrt(n), 0)`,
/// reported with `point = 2 R_bar` and `se = 2 s`.
pub fn macm_lcb(
    data: &Dataset,
    mu: &WorkingRegression,
    model: &CovariateModel,
    cfg: &MacmConfig,
) -> Result<LcbReport> {
    let terms = macm_terms(data, mu, model, cfg)?;
    let n = terms.len();
    if terms.iter().all(|(_, degenerate)| *degenerate) {
        return Ok(LcbReport::degenerate(Estimand::MacmGap, n));
    }
    let r: Vec<f64> = terms.iter().map(|(r, _)| *r).collect();
    let (r_bar, s) = mean_sd(&r);
    Ok(LcbReport::from_point(
        2.0 * r_bar,
        2.0 * s,
        n,
        cfg.alpha,
        Estimand::MacmGap,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::GaussianLinearModel;
    use crate::regression::{Link, RegressionKind};

    fn setup(n: usize) -> (Dataset, CovariateModel) {
        let model = CovariateModel::GaussianLinear(GaussianLinearModel {
            gamma: vec![0.0, 0.3],
            sigma2: 1.0,
            z_mean: vec![0.0],
            z_cov: vec![vec![1.0]],
        });
        let (x, z) = model.sample_joint(n, 3).unwrap();
        let y = (0..n)
            .map(|i| {
                if x.get(i, 0) + 0.3 * z.get(i, 0) > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        (Dataset::new(y, x, z).unwrap(), model)
    }

    #[test]
    fn labels_must_be_signs() {
        let (d, m) = setup(20);
        let bad = d.map_response(|y| (y + 1.0) / 2.0).unwrap();
        let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![1.0], vec![0.0]);
        assert!(matches!(
            macm_lcb(&bad, &mu, &m, &MacmConfig::default()),
            Err(FloodgateError::Label(_))
        ));
    }

    #[test]
    fn z_only_mu_is_degenerate() {
        let (d, m) = setup(30);
        let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.0], vec![1.0]);
        for exact in [true, false] {
            let rep = macm_lcb(
                &d,
                &mu,
                &m,
                &MacmConfig {
                    exact_moments: exact,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(rep.degenerate && rep.lcb == 0.0);
        }
    }

    #[test]
    fn terms_are_bounded() {
        let (d, m) = setup(200);
        let mu = WorkingRegression::glm(
            RegressionKind::Custom,
            Link::Logistic,
            0.1,
            vec![2.0],
            vec![0.5],
        );
        for exact in [true, false] {
            let cfg = MacmConfig {
                exact_moments: exact,
                m_copies: Some(50),
                k_copies: 20,
                ..Default::default()
            };
            for (r, _) in macm_terms(&d, &mu, &m, &cfg).unwrap() {
                assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
