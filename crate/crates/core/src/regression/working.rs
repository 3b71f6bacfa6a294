use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::partition_columns;
use crate::error::{FloodgateError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegressionKind {
    Ols,
    Ridge,
    Lasso,
    LogitL1,
    LogitL2,
    Custom,
}

impl RegressionKind {
    /// Sparse fitters zero out coefficients, so unselected variables get a
    /// zero bound without running inference.
    pub fn is_sparse(self) -> bool {
        matches!(self, RegressionKind::Lasso | RegressionKind::LogitL1)
    }
}

/// Output scale of a generalized linear working regression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `mu = eta`.
    Identity,
    /// `mu = 2 expit(eta) - 1 = tanh(eta / 2)`, the conditional mean of a
    /// label in {-1, +1}.
    Logistic,
}

impl Link {
    #[inline]
    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logistic => (0.5 * eta).tanh(),
        }
    }

    /// Inverse of `apply` (clamped to the open range for `Logistic`).
    pub fn invert(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Logistic => 2.0 * mu.clamp(-1.0 + 1e-16, 1.0 - 1e-16).atanh(),
        }
    }
}

/// Fitting diagnostics and the preprocessing constants needed to replay a fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub cv_error: Option<f64>,
    #[serde(default = "default_true")]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
    /// Covariate columns (indices into `[X | Z]`) dropped as constant.
    #[serde(default)]
    pub dropped_columns: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Fit-split column means and standard deviations used for standardization.
    #[serde(default)]
    pub feature_means: Vec<f64>,
    #[serde(default)]
    pub feature_sds: Vec<f64>,
}

fn default_true() -> bool {
    true
}

type CustomFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Form {
    Glm {
        link: Link,
        intercept: f64,
        x_coef: Vec<f64>,
        z_coef: Vec<f64>,
    },
    Custom {
        f: CustomFn,
        dx: usize,
        dz: usize,
        linear_x: Option<Vec<f64>>,
    },
}

/// A fixed function `mu(x, z)` fitted on data independent of the inference
/// split (or supplied by the user).
#[derive(Clone)]
pub struct WorkingRegression {
    kind: RegressionKind,
    form: Form,
    pub info: FitInfo,
}

impl fmt::Debug for WorkingRegression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            } => f
                .debug_struct("WorkingRegression")
                .field("kind", &self.kind)
                .field("link", link)
                .field("intercept", intercept)
                .field("x_coef", x_coef)
                .field("z_coef", z_coef)
                .finish(),
            Form::Custom { dx, dz, .. } => f
                .debug_struct("WorkingRegression")
                .field("kind", &self.kind)
                .field("dx", dx)
                .field("dz", dz)
                .finish_non_exhaustive(),
        }
    }
}

impl WorkingRegression {
    pub fn linear(
        kind: RegressionKind,
        intercept: f64,
        x_coef: Vec<f64>,
        z_coef: Vec<f64>,
    ) -> Self {
        WorkingRegression {
            kind,
            form: Form::Glm {
                link: Link::Identity,
                intercept,
                x_coef,
                z_coef,
            },
            info: FitInfo::default(),
        }
    }

    pub fn glm(
        kind: RegressionKind,
        link: Link,
        intercept: f64,
        x_coef: Vec<f64>,
        z_coef: Vec<f64>,
    ) -> Self {
        WorkingRegression {
            kind,
            form: Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            },
            info: FitInfo::default(),
        }
    }

    /// Wrap an arbitrary function of `(x, z)`.
    pub fn custom(
        dx: usize,
        dz: usize,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        WorkingRegression {
            kind: RegressionKind::Custom,
            form: Form::Custom {
                f: Arc::new(f),
                dx,
                dz,
                linear_x: None,
            },
            info: FitInfo::default(),
        }
    }

    /// A custom function declared partially linear: `f(x, z) = a.x + g(z)`.
    /// The caller vouches for the declaration; closed-form conditional
    /// moments rely on it.
    pub fn custom_partially_linear(
        x_coef: Vec<f64>,
        dz: usize,
        g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let a = x_coef.clone();
        WorkingRegression {
            kind: RegressionKind::Custom,
            form: Form::Custom {
                f: Arc::new(move |x: &[f64], z: &[f64]| dot(&a, x) + g(z)),
                dx: x_coef.len(),
                dz,
                linear_x: Some(x_coef),
            },
            info: FitInfo::default(),
        }
    }

    pub fn kind(&self) -> RegressionKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: RegressionKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn dx(&self) -> usize {
        match &self.form {
            Form::Glm { x_coef, .. } => x_coef.len(),
            Form::Custom { dx, .. } => *dx,
        }
    }

    pub fn dz(&self) -> usize {
        match &self.form {
            Form::Glm { z_coef, .. } => z_coef.len(),
            Form::Custom { dz, .. } => *dz,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match &self.form {
            Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            } => link.apply(intercept + dot(x_coef, x) + dot(z_coef, z)),
            Form::Custom { f, .. } => f(x, z),
        }
    }

    /// Coefficients `a` when `mu(x, z) = a.x + g(z)`.
    pub fn linear_focal_coef(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Glm {
                link: Link::Identity,
                x_coef,
                ..
            } => Some(x_coef),
            Form::Custom { linear_x, .. } => linear_x.as_deref(),
            _ => None,
        }
    }

    /// `(link, intercept, x_coef, z_coef)` for generalized linear forms.
    pub fn glm_parts(&self) -> Option<(Link, f64, &[f64], &[f64])> {
        match &self.form {
            Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            } => Some((*link, *intercept, x_coef, z_coef)),
            Form::Custom { .. } => None,
        }
    }

    /// `Some(false)` when the function provably ignores `x`.
    pub fn depends_on_x(&self) -> Option<bool> {
        match &self.form {
            Form::Glm { x_coef, .. } => Some(x_coef.iter().any(|&a| a != 0.0)),
            Form::Custom {
                linear_x: Some(a), ..
            } => Some(a.iter().any(|&a| a != 0.0)),
            Form::Custom { .. } => None,
        }
    }

    /// Partial evaluation at a fixed `z`, for repeated evaluation over
    /// resampled `x` values.
    #[inline]
    pub fn at_z<'a>(&'a self, z: &'a [f64]) -> AtZ<'a> {
        match &self.form {
            Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            } => AtZ::Glm {
                link: *link,
                base: intercept + dot(z_coef, z),
                x_coef,
            },
            Form::Custom { f, .. } => AtZ::Custom { f: f.as_ref(), z },
        }
    }

    /// Re-partition the inputs: `focal` lists indices into `[X | Z]` that form
    /// the new `X`; the remaining columns, in order, form the new `Z`.
    pub fn refocus(&self, focal: &[usize]) -> Result<WorkingRegression> {
        let p = self.dx() + self.dz();
        let (xcols, zcols) = partition_columns(p, focal)?;
        let form = match &self.form {
            Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            } => {
                let full: Vec<f64> = x_coef.iter().chain(z_coef).copied().collect();
                Form::Glm {
                    link: *link,
                    intercept: *intercept,
                    x_coef: xcols.iter().map(|&c| full[c]).collect(),
                    z_coef: zcols.iter().map(|&c| full[c]).collect(),
                }
            }
            Form::Custom { f, dx, .. } => {
                let f = f.clone();
                let old_dx = *dx;
                let (xc, zc) = (xcols.clone(), zcols.clone());
                let mut linear_x = None;
                // A declared partially-linear function stays partially linear
                // only if the new focal columns are all old focal columns.
                if let Some(a) = self.linear_focal_coef() {
                    if xcols.iter().all(|&c| c < old_dx)
                        && (0..old_dx).all(|c| xcols.contains(&c) || a[c] == 0.0)
                    {
                        linear_x = Some(xcols.iter().map(|&c| a[c]).collect());
                    }
                }
                Form::Custom {
                    f: Arc::new(move |x: &[f64], z: &[f64]| {
                        let mut full = vec![0.0; p];
                        for (v, &c) in x.iter().zip(&xc) {
                            full[c] = *v;
                        }
                        for (v, &c) in z.iter().zip(&zc) {
                            full[c] = *v;
                        }
                        let (ox, oz) = full.split_at(old_dx);
                        f(ox, oz)
                    }),
                    dx: xcols.len(),
                    dz: zcols.len(),
                    linear_x,
                }
            }
        };
        Ok(WorkingRegression {
            kind: self.kind,
            form,
            info: self.info.clone(),
        })
    }

    pub fn to_spec(&self) -> Result<RegressionSpec> {
        match &self.form {
            Form::Glm {
                link,
                intercept,
                x_coef,
                z_coef,
            } => Ok(RegressionSpec {
                kind: self.kind,
                link: *link,
                intercept: *intercept,
                x_coef: x_coef.clone(),
                z_coef: z_coef.clone(),
                info: self.info.clone(),
            }),
            Form::Custom { .. } => Err(FloodgateError::Unsupported(
                "closure-backed regressions cannot be serialized".into(),
            )),
        }
    }

    pub fn from_spec(spec: RegressionSpec) -> Result<WorkingRegression> {
        if !spec.intercept.is_finite()
            || spec
                .x_coef
                .iter()
                .chain(&spec.z_coef)
                .any(|v| !v.is_finite())
        {
            return Err(FloodgateError::validation(
                "coefficients",
                "all coefficients must be finite",
            ));
        }
        if spec.x_coef.is_empty() {
            return Err(FloodgateError::validation(
                "x_coef",
                "at least one focal coefficient is required",
            ));
        }
        let mut reg = WorkingRegression::glm(
            spec.kind,
            spec.link,
            spec.intercept,
            spec.x_coef,
            spec.z_coef,
        );
        reg.info = spec.info;
        Ok(reg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_spec()?)?)
    }

    pub fn from_json(text: &str) -> Result<WorkingRegression> {
        WorkingRegression::from_spec(serde_json::from_str(text)?)
    }
}

/// Serialized form of a generalized linear working regression. A `CUSTOM`
/// kind carries user-supplied coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub kind: RegressionKind,
    #[serde(default = "default_link")]
    pub link: Link,
    pub intercept: f64,
    pub x_coef: Vec<f64>,
    #[serde(default)]
    pub z_coef: Vec<f64>,
    #[serde(default)]
    pub info: FitInfo,
}

fn default_link() -> Link {
    Link::Identity
}

pub enum AtZ<'a> {
    Glm {
        link: Link,
        base: f64,
        x_coef: &'a [f64],
    },
    Custom {
        f: &'a (dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync),
        z: &'a [f64],
    },
}

impl AtZ<'_> {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            AtZ::Glm { link, base, x_coef } => link.apply(base + dot(x_coef, x)),
            AtZ::Custom { f, z } => f(x, z),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn refocus_glm_moves_coefficients() {
        let mu = WorkingRegression::linear(RegressionKind::Ols, 1.0, vec![2.0], vec![3.0, 4.0]);
        let r = mu.refocus(&[2]).unwrap();
        assert_eq!(r.linear_focal_coef(), Some(&[4.0][..]));
        assert_eq!(r.eval(&[1.0], &[1.0, 1.0]), mu.eval(&[1.0], &[1.0, 1.0]));
        assert_eq!(r.eval(&[5.0], &[7.0, 11.0]), mu.eval(&[7.0], &[11.0, 5.0]));
    }

    #[test]
    fn refocus_custom_reassembles_inputs() {
        let mu = WorkingRegression::custom(1, 2, |x, z| x[0] * 100.0 + z[0] * 10.0 + z[1]);
        let r = mu.refocus(&[1]).unwrap();
        // new x = old z[0]; new z = (old x, old z[1])
        assert_eq!(r.eval(&[2.0], &[3.0, 4.0]), 300.0 + 20.0 + 4.0);
    }

    #[test]
    fn json_round_trip_preserves_function() {
        let mut mu = WorkingRegression::glm(
            RegressionKind::LogitL2,
            Link::Logistic,
            0.2,
            vec![1.5],
            vec![-0.5],
        );
        mu.info.lambda = Some(0.01);
        let back = WorkingRegression::from_json(&mu.to_json().unwrap()).unwrap();
        assert_eq!(back.eval(&[0.3], &[1.2]), mu.eval(&[0.3], &[1.2]));
        assert_eq!(back.info, mu.info);
        assert!(WorkingRegression::custom(1, 0, |x, _| x[0])
            .to_json()
            .is_err());
    }

    #[test]
    fn logistic_link_is_conditional_mean_of_pm1_label() {
        let eta: f64 = 0.7;
        let expit = 1.0 / (1.0 + (-eta).exp());
        assert!((Link::Logistic.apply(eta) - (2.0 * expit - 1.0)).abs() < 1e-15);
        assert!((Link::Logistic.invert(Link::Logistic.apply(eta)) - eta).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn linear_focal_coefficient_is_exact(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            x in -10.0f64..10.0, h in -10.0f64..10.0, z in -10.0f64..10.0,
        ) {
            let mu = WorkingRegression::linear(RegressionKind::Custom, 0.3, vec![a], vec![b]);
            let coef = mu.linear_focal_coef().unwrap()[0];
            let diff = mu.eval(&[x + h], &[z]) - mu.eval(&[x], &[z]);
            prop_assert!((diff - coef * h).abs() <= 1e-12 * (1.0 + (a * x).abs() + (a * h).abs() + (b * z).abs()));
        }
    }
}
