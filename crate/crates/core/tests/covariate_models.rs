mod common;

use common::{ks_one_sample, ks_two_sample, mean_se};
use floodgate::covariate::{
    cond_moments_linear, sample_null_copies, Ar1Model, CopulaModel, CovariateModel,
    DiscreteMarkovChain, GaussianLinearModel,
};
use floodgate::mmse::{floodgate_lcb, FloodgateConfig};
use floodgate::normal::normal_cdf;
use floodgate::regression::{RegressionKind, WorkingRegression};
use floodgate::rng::stream;
use floodgate::{Dataset, RowMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    sab / (saa * sbb).sqrt()
}

fn ar1(dim: usize, rho: f64) -> CovariateModel {
    CovariateModel::Ar1(Ar1Model {
        dim,
        rho,
        focal_index: 1,
    })
}

fn gaussian_linear(gamma: Vec<f64>, sigma2: f64, dz: usize) -> GaussianLinearModel {
    GaussianLinearModel {
        gamma,
        sigma2,
        z_mean: vec![0.0; dz],
        z_cov: (0..dz)
            .map(|i| (0..dz).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect(),
    }
}

fn chain(k: usize, p: usize, rows: Vec<Vec<f64>>, focal: usize) -> DiscreteMarkovChain {
    DiscreteMarkovChain {
        num_states: k,
        initial: vec![1.0 / k as f64; k],
        transitions: vec![rows; p - 1],
        focal_index: focal,
    }
}

#[test]
fn ar1_correlations() {
    let w = ar1(2, 0.0).sample_full(10_000, 1).unwrap();
    assert!(corr(&w.column(0), &w.column(1)).abs() < 0.05);
    let n = 50_000;
    let w = ar1(2, 0.3).sample_full(n, 2).unwrap();
    let r = corr(&w.column(0), &w.column(1));
    assert!((r - 0.3).abs() < 0.02, "corr {r}");
    let var = w.column(1).iter().map(|v| v * v).sum::<f64>() / n as f64;
    assert!(
        (var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(),
        "stationary variance {var}"
    );
}

#[test]
fn symmetric_chain_visits_states_equally() {
    let n = 20_000;
    let m = CovariateModel::Dmc(chain(2, 4, vec![vec![0.5, 0.5], vec![0.5, 0.5]], 2));
    let w = m.sample_full(n, 3).unwrap();
    for c in 0..4 {
        let f = w.column(c).iter().filter(|&&v| v == 1.0).count() as f64 / n as f64;
        assert!(
            (f - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(),
            "column {c}: {f}"
        );
    }
}

#[test]
fn chain_transition_frequencies_match_rows() {
    let rows = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.6, 0.3],
        vec![0.3, 0.3, 0.4],
    ];
    let m = CovariateModel::Dmc(chain(3, 5, rows.clone(), 3));
    let w = m.sample_full(30_000, 4).unwrap();
    let mut counts = [[0usize; 3]; 3];
    for i in 0..w.nrows() {
        for c in 0..4 {
            counts[w.get(i, c) as usize][w.get(i, c + 1) as usize] += 1;
        }
    }
    for a in 0..3 {
        let total: usize = counts[a].iter().sum();
        for b in 0..3 {
            let f = counts[a][b] as f64 / total as f64;
            assert!(
                (f - rows[a][b]).abs() < 3.0 / (total as f64).sqrt(),
                "{a}->{b}: {f} vs {}",
                rows[a][b]
            );
        }
    }
}

#[test]
fn copula_marginals_are_uniform() {
    let m = CovariateModel::Copula(CopulaModel {
        latent: Ar1Model {
            dim: 3,
            rho: 0.5,
            focal_index: 2,
        },
    });
    let w = m.sample_full(10_000, 5).unwrap();
    for c in 0..3 {
        let col = w.column(c);
        assert!(col.iter().all(|v| (-1.0..=1.0).contains(v)));
        let (d, p) = ks_one_sample(&col, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
        assert!(p > 0.01, "column {c}: D {d} p {p}");
    }
}

#[test]
fn slope_free_copies_are_standard_normal() {
    let m = CovariateModel::GaussianLinear(gaussian_linear(vec![0.0, 0.0, 0.0], 1.0, 2));
    let mut rng = stream(6, &[]);
    let z = RowMatrix::from_row_major(
        10_000,
        2,
        (0..20_000)
            .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .unwrap();
    let copies = sample_null_copies(&m, &z, 1, 7).unwrap();
    let (d, _) = ks_one_sample(&copies.data, normal_cdf);
    assert!(d < 0.02, "KS distance {d}");
}

#[test]
fn degenerate_chain_forces_the_copy() {
    let id = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let m = CovariateModel::Dmc(chain(3, 4, id, 2));
    let (_, z) = m.sample_joint(50, 8).unwrap();
    let copies = sample_null_copies(&m, &z, 5, 9).unwrap();
    for i in 0..50 {
        for k in 0..5 {
            assert_eq!(copies.get(k, i)[0], z.get(i, 0));
        }
    }
}

#[test]
fn closed_form_moments_examples() {
    let model = gaussian_linear(vec![0.0, 0.5], 1.7, 1);
    let mu = |a: f64| WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![a], vec![0.0]);
    assert_eq!(
        cond_moments_linear(&model, &mu(0.0), &[2.0]).unwrap().1,
        0.0
    );
    let unit = gaussian_linear(vec![0.0, 0.5], 1.0, 1);
    assert!((cond_moments_linear(&unit, &mu(2.0), &[2.0]).unwrap().1 - 4.0).abs() < 1e-12);
    let (mean, var) = cond_moments_linear(&model, &mu(1.0), &[2.0]).unwrap();
    assert!((mean - 1.0).abs() < 1e-12 && (var - 1.7).abs() < 1e-12);

    let z = RowMatrix::from_row_major(1, 1, vec![2.0]).unwrap();
    let copies =
        sample_null_copies(&CovariateModel::GaussianLinear(model), &z, 1_000_000, 10).unwrap();
    let (mc_mean, _) = mean_se(&copies.data);
    assert!((mc_mean - 1.0).abs() < 0.01, "MC mean {mc_mean}");

    // A non-linear mu has no closed form.
    let curved = WorkingRegression::custom(1, 1, |x, _| x[0] * x[0]);
    assert!(cond_moments_linear(&unit, &curved, &[2.0]).is_err());
}

#[test]
fn monte_carlo_moments_match_closed_form() {
    let mut rng = stream(11, &[]);
    for trial in 0..10u64 {
        let dz = 3;
        let gamma: Vec<f64> = (0..=dz).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma2 = rng.random_range(0.2..3.0);
        let a = rng.random_range(-2.0..2.0);
        let zc: Vec<f64> = (0..dz).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..dz).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = gaussian_linear(gamma, sigma2, dz);
        let mu = WorkingRegression::linear(RegressionKind::Custom, 0.3, vec![a], g);
        let (mean, var) = cond_moments_linear(&model, &mu, &zc).unwrap();

        let k = 100_000;
        let z = RowMatrix::from_row_major(1, dz, zc.clone()).unwrap();
        let copies =
            sample_null_copies(&CovariateModel::GaussianLinear(model), &z, k, 100 + trial).unwrap();
        let vals: Vec<f64> = (0..k).map(|c| mu.eval(copies.get(c, 0), &zc)).collect();
        let (m, se) = mean_se(&vals);
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
        // Var of the sample variance of a normal is 2 sigma^4 / (k - 1).
        let v_se = var * (2.0 / (k - 1) as f64).sqrt();
        assert!(
            (m - mean).abs() < 4.0 * se,
            "trial {trial}: mean {m} vs {mean}"
        );
        assert!(
            (v - var).abs() < 4.0 * v_se,
            "trial {trial}: var {v} vs {var}"
        );
    }
}

#[test]
fn null_copies_are_exchangeable_with_x_under_the_null() {
    // Y depends on Z only. Swapping X for one of its null copies should not
    // change the distribution of the floodgate output.
    let model = CovariateModel::GaussianLinear(gaussian_linear(vec![0.0, 0.6, -0.4], 1.0, 2));
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.8], vec![0.5, 0.5]);
    let cfg = FloodgateConfig {
        big_k: 0,
        ..FloodgateConfig::default()
    };
    let n = 200;
    let mut real = (Vec::new(), Vec::new());
    let mut swapped = (Vec::new(), Vec::new());
    for r in 0..1000u64 {
        let (x, z) = model.sample_joint(n, 1000 + r).unwrap();
        let mut rng = stream(r, &[1]);
        let y: Vec<f64> = (0..n)
            .map(|i| z.get(i, 0) - z.get(i, 1) + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (x, out) = if r % 2 == 0 {
            (x, &mut real)
        } else {
            let c = sample_null_copies(&model, &z, 1, 5000 + r).unwrap();
            (
                RowMatrix::from_row_major(n, 1, c.data).unwrap(),
                &mut swapped,
            )
        };
        let rep = floodgate_lcb(&Dataset::new(y, x, z).unwrap(), &mu, &model, &cfg).unwrap();
        out.0.push(rep.lcb);
        out.1.push(rep.point);
    }
    let (d_lcb, p_lcb) = ks_two_sample(&real.0, &swapped.0);
    let (d_pt, p_pt) = ks_two_sample(&real.1, &swapped.1);
    assert!(p_lcb > 0.01, "LCB KS D {d_lcb} p {p_lcb}");
    assert!(p_pt > 0.01, "point KS D {d_pt} p {p_pt}");
}
