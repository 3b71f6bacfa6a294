//! Finite joint laws of `(X, Z, Y)` where every expectation is an exact sum.

use rand::Rng as _;

use crate::error::{FloodgateError, Result};
use crate::rng::Rng;

/// `p_xz[x][z]` is the joint mass of `(X, Z)`; `p_y[x][z][k]` is
/// `P(Y = y_values[k] | x, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteToy {
    pub p_xz: Vec<Vec<f64>>,
    pub y_values: Vec<f64>,
    pub p_y: Vec<Vec<Vec<f64>>>,
}

/// A working regression over the grid: `mu[x][z]`.
pub type Table = Vec<Vec<f64>>;

fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

impl DiscreteToy {
    /// A random law on `nx x nz` covariate cells with the given response values.
    pub fn random(rng: &mut Rng, nx: usize, nz: usize, y_values: Vec<f64>) -> DiscreteToy {
        let flat = random_simplex(rng, nx * nz);
        let p_xz = (0..nx)
            .map(|x| flat[x * nz..(x + 1) * nz].to_vec())
            .collect();
        let ny = y_values.len();
        let p_y = (0..nx)
            .map(|_| (0..nz).map(|_| random_simplex(rng, ny)).collect())
            .collect();
        DiscreteToy {
            p_xz,
            y_values,
            p_y,
        }
    }

    pub fn nx(&self) -> usize {
        self.p_xz.len()
    }

    pub fn nz(&self) -> usize {
        self.p_xz[0].len()
    }

    fn p_z(&self, z: usize) -> f64 {
        (0..self.nx()).map(|x| self.p_xz[x][z]).sum()
    }

    /// `E[Y | X = x, Z = z]` as a table.
    pub fn mu_star(&self) -> Table {
        (0..self.nx())
            .map(|x| {
                (0..self.nz())
                    .map(|z| {
                        self.p_y[x][z]
                            .iter()
                            .zip(&self.y_values)
                            .map(|(p, y)| p * y)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// `(E[mu | z], Var(mu | z))`.
    fn cond_moments(&self, mu: &Table, z: usize) -> (f64, f64) {
        let pz = self.p_z(z);
        let mean: f64 = (0..self.nx())
            .map(|x| self.p_xz[x][z] * mu[x][z])
            .sum::<f64>()
            / pz;
        let var = (0..self.nx())
            .map(|x| self.p_xz[x][z] * (mu[x][z] - mean).powi(2))
            .sum::<f64>()
            / pz;
        (mean, var)
    }

    /// The mMSE gap `sqrt(E[Var(E[Y|X,Z] | Z)])`.
    pub fn mmse_gap(&self) -> f64 {
        let ms = self.mu_star();
        (0..self.nz())
            .map(|z| self.p_z(z) * self.cond_moments(&ms, z).1)
            .sum::<f64>()
            .sqrt()
    }

    /// `E[Cov(mu*, mu | Z)] / sqrt(E[Var(mu | Z)])`, zero when the
    /// denominator vanishes.
    pub fn floodgate_functional(&self, mu: &Table) -> f64 {
        let ms = self.mu_star();
        let mut num = 0.0;
        let mut den = 0.0;
        for z in 0..self.nz() {
            let (mean, var) = self.cond_moments(mu, z);
            den += self.p_z(z) * var;
            for x in 0..self.nx() {
                num += self.p_xz[x][z] * ms[x][z] * (mu[x][z] - mean);
            }
        }
        if den <= 0.0 {
            0.0
        } else {
            num / den.sqrt()
        }
    }

    fn check_signs(&self) -> Result<()> {
        let ok = self.y_values.len() == 2
            && self.y_values.contains(&1.0)
            && self.y_values.contains(&-1.0);
        if ok {
            Ok(())
        } else {
            Err(FloodgateError::Label(
                "the MACM gap needs responses in {-1, +1}".into(),
            ))
        }
    }

    /// `E|E[Y | X, Z] - E[Y | Z]|`.
    pub fn macm_gap(&self) -> Result<f64> {
        self.check_signs()?;
        let ms = self.mu_star();
        let mut total = 0.0;
        for z in 0..self.nz() {
            let (mean, _) = self.cond_moments(&ms, z);
            for x in 0..self.nx() {
                total += self.p_xz[x][z] * (ms[x][z] - mean).abs();
            }
        }
        Ok(total)
    }

    /// `2 P(Y (mu(X~, Z) - g(Z)) < 0) - 2 P(Y (mu(X, Z) - g(Z)) < 0)` with
    /// `g(Z) = E[mu | Z]` and `X~` an independent draw from `X | Z`.
    pub fn macm_functional(&self, mu: &Table) -> Result<f64> {
        self.check_signs()?;
        let mut total = 0.0;
        for z in 0..self.nz() {
            let pz = self.p_z(z);
            let (g, _) = self.cond_moments(mu, z);
            for x in 0..self.nx() {
                for (k, &y) in self.y_values.iter().enumerate() {
                    let p = self.p_xz[x][z] * self.p_y[x][z][k];
                    let tilde: f64 = (0..self.nx())
                        .filter(|&xt| y * (mu[xt][z] - g) < 0.0)
                        .map(|xt| self.p_xz[xt][z] / pz)
                        .sum();
                    let own = f64::from(y * (mu[x][z] - g) < 0.0);
                    total += p * (tilde - own);
                }
            }
        }
        Ok(2.0 * total)
    }
}
