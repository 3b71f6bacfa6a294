mod common;

use common::mean_se;
use floodgate::covariate::{Ar1Model, CovariateModel, GaussianJointModel, GaussianLinearModel};
use floodgate::mmse::{
    floodgate_lcb, floodgate_lcb_scale_free, floodgate_lcb_weighted, trivial_ucb,
    zero_out_transform, FloodgateConfig, TransportWeights,
};
use floodgate::regression::{RegressionKind, WorkingRegression};
use floodgate::rng::stream;
use floodgate::sim::{ExperimentSpec, MuStar, Prepared};
use floodgate::{ConfidenceLevel, Dataset, RowMatrix};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn independent_x(dz: usize) -> CovariateModel {
    CovariateModel::GaussianLinear(GaussianLinearModel {
        gamma: vec![0.0; dz + 1],
        sigma2: 1.0,
        z_mean: vec![0.0; dz],
        z_cov: (0..dz)
            .map(|i| (0..dz).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect(),
    })
}

/// `Y = beta X + 0.5 z_1 + eps` with the given covariate model.
fn linear_data(model: &CovariateModel, n: usize, beta: f64, noise: f64, seed: u64) -> Dataset {
    let (x, z) = model.sample_joint(n, seed).unwrap();
    let mut rng = stream(seed, &[9]);
    let y = (0..n)
        .map(|i| {
            beta * x.get(i, 0) + 0.5 * z.get(i, 0) + noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Dataset::new(y, x, z).unwrap()
}

fn exact() -> FloodgateConfig {
    FloodgateConfig {
        big_k: 0,
        ..FloodgateConfig::default()
    }
}

#[test]
fn lcb_tracks_the_linear_gap() {
    // X independent of Z with unit variance: the gap is |beta|.
    let (beta, n) = (0.5, 10_000);
    let model = independent_x(2);
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![beta], vec![0.5, 0.0]);
    let reps = 400;
    let inside = (0..reps)
        .filter(|&r| {
            let d = linear_data(&model, n, beta, 1.0, r);
            let lcb = floodgate_lcb(&d, &mu, &model, &exact()).unwrap().lcb;
            lcb > beta - 5.0 / (n as f64).sqrt() && lcb < beta
        })
        .count();
    assert!(inside as f64 >= 0.9 * reps as f64, "{inside}/{reps}");
}

#[test]
fn monte_carlo_and_exact_points_agree() {
    let model = CovariateModel::Ar1(Ar1Model {
        dim: 5,
        rho: 0.3,
        focal_index: 3,
    });
    let mu = WorkingRegression::linear(
        RegressionKind::Custom,
        0.1,
        vec![0.4],
        vec![0.3, -0.2, 0.1, 0.0],
    );
    let d = linear_data(&model, 2000, 0.4, 1.0, 1);
    let e = floodgate_lcb(&d, &mu, &model, &exact()).unwrap();
    let m = floodgate_lcb(&d, &mu, &model, &FloodgateConfig::default()).unwrap();
    let tol = 3.0 * e.se / (d.n() as f64).sqrt();
    assert!(
        (e.point - m.point).abs() < tol,
        "exact {} mc {} tol {tol}",
        e.point,
        m.point
    );
}

#[test]
fn group_importance_uses_the_whole_block() {
    let cov: Vec<Vec<f64>> = (0..4i32)
        .map(|i| (0..4).map(|j| 0.4f64.powi((i - j).abs())).collect())
        .collect();
    let model = CovariateModel::GaussianJoint(GaussianJointModel {
        mean: vec![0.0; 4],
        cov,
        focal: vec![1, 2],
    });
    let n = 3000;
    let (x, z) = model.sample_joint(n, 2).unwrap();
    assert_eq!((x.ncols(), z.ncols()), (2, 2));
    let mut rng = stream(2, &[1]);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            0.3 * x.get(i, 0) - 0.3 * x.get(i, 1)
                + z.get(i, 1)
                + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let d = Dataset::new(y, x, z).unwrap();
    let mu =
        WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.3, -0.3], vec![0.0, 1.0]);
    let e = floodgate_lcb(&d, &mu, &model, &exact()).unwrap();
    let m = floodgate_lcb(&d, &mu, &model, &FloodgateConfig::default()).unwrap();
    assert!(e.lcb > 0.0);
    assert!((e.point - m.point).abs() < 3.0 * e.se / (n as f64).sqrt());
}

#[test]
fn scale_free_examples() {
    let model = independent_x(1);
    let d = linear_data(&model, 500, 1.0, 1.0, 3)
        .with_response(vec![2.0; 500])
        .unwrap();
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![1.0], vec![0.0]);
    assert!(
        floodgate_lcb_scale_free(&d, &mu, &model, &exact())
            .unwrap()
            .degenerate
    );

    // Pure signal, mu independent of z: the bound climbs towards 1 with a
    // shortfall shrinking like 1/sqrt(n).
    let mut prev = 0.0;
    let mut first = 0.0;
    for n in [200, 2000, 20_000] {
        let (x, z) = model.sample_joint(n, 4).unwrap();
        let d = Dataset::new(x.column(0), x, z).unwrap();
        let r = floodgate_lcb_scale_free(&d, &mu, &model, &exact()).unwrap();
        assert!(r.lcb <= 1.0 && r.lcb >= prev, "n={n}: {}", r.lcb);
        if n == 200 {
            first = r.lcb;
        }
        prev = r.lcb;
    }
    assert!(1.0 - prev < (1.0 - first) / 5.0, "{first} -> {prev}");
}

#[test]
fn scale_free_bound_covers_in_the_linear_design() {
    let spec: ExperimentSpec = ExperimentSpec::from_json(
        r#"{"model": {"kind": "ar1", "dim": 20, "rho": 0.3, "focal_index": 1},
            "mu_star": {"kind": "LINEAR_SPARSE", "sparsity": 5, "amplitude": 5.0},
            "n": 600, "p": 20, "method": {"kind": "MMSE_EXACT"}, "replicates": 200, "mu_source": {"kind": "TRUE"}}"#,
    )
    .unwrap();
    let prep = Prepared::new(&spec).unwrap();
    let beta = match &prep.mustar {
        MuStar::Linear { beta, .. } => beta.clone(),
        _ => unreachable!(),
    };
    let cov = match &spec.model {
        CovariateModel::Ar1(a) => a.covariance(),
        _ => unreachable!(),
    };
    let b = nalgebra::DVector::from_vec(beta.clone());
    let var_y = (b.transpose() * &cov * &b)[(0, 0)] + 1.0;
    let mu = prep.oracle_regression();
    let j0 = (0..20).find(|&j| beta[j] != 0.0).unwrap();
    let gap = prep.oracles[prep.variables.iter().position(|&v| v == j0 + 1).unwrap()].value;
    let model = floodgate::sim::focal_model(&spec.model, j0).unwrap();
    let covered = (0..spec.replicates)
        .filter(|&r| {
            let d = prep
                .generate_replicate(r)
                .unwrap()
                .0
                .refocus(&[j0])
                .unwrap();
            let rep = floodgate_lcb_scale_free(&d, &mu.refocus(&[j0]).unwrap(), &model, &exact())
                .unwrap();
            rep.lcb <= gap * gap / var_y
        })
        .count();
    assert!(
        covered as f64 >= 0.95 * spec.replicates as f64,
        "{covered}/{}",
        spec.replicates
    );
}

#[test]
fn weighted_degenerate_paths() {
    let model = independent_x(2);
    let d = linear_data(&model, 300, 0.5, 1.0, 5);
    let cfg = FloodgateConfig {
        big_k: 20,
        ..FloodgateConfig::default()
    };
    let z_only = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.0], vec![1.0, 0.0]);
    // Weights that reweight Z only, on a mu that ignores X.
    let shift = TransportWeights::new(|_, z| (0.5 * z[0]).exp(), |_, z| (0.5 * z[0]).exp());
    assert!(
        floodgate_lcb_weighted(&d, &z_only, &model, &shift, &cfg)
            .unwrap()
            .degenerate
    );
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.5], vec![0.5, 0.0]);
    assert!(
        floodgate_lcb_weighted(&d, &mu, &model, &TransportWeights::constant(0.0), &cfg)
            .unwrap()
            .degenerate
    );
    let bad = TransportWeights::constant(-1.0);
    assert!(floodgate_lcb_weighted(&d, &mu, &model, &bad, &cfg).is_err());
}

#[test]
fn trivial_ucb_examples() {
    let n = 10_000;
    let nu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![], vec![0.0]);
    let alpha = ConfidenceLevel::default();
    let near = (0..100u64)
        .filter(|&s| {
            let mut rng = stream(s, &[]);
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mean_sq = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let d = Dataset::new(
                y,
                RowMatrix::from_row_major(n, 1, vec![0.0; n]).unwrap(),
                RowMatrix::from_row_major(n, 1, vec![1.0; n]).unwrap(),
            )
            .unwrap();
            let u = trivial_ucb(&d, &nu, alpha).unwrap();
            assert!(u >= mean_sq);
            (u - 1.0).abs() < 0.05
        })
        .count();
    assert!(near >= 95, "{near}/100");
}

#[test]
fn zero_out_is_monotone() {
    let model = independent_x(1);
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.5], vec![0.5]);
    let reports: Vec<_> = (0..5)
        .map(|s| {
            floodgate_lcb(
                &linear_data(&model, 400, 0.5, 1.0, s),
                &mu,
                &model,
                &exact(),
            )
            .unwrap()
        })
        .collect();
    let out = zero_out_transform(&reports, &[1, 3]).unwrap();
    assert_eq!(out.len(), reports.len());
    for (i, (a, b)) in reports.iter().zip(&out).enumerate() {
        assert!(b.lcb <= a.lcb);
        if i == 1 || i == 3 {
            assert_eq!(a, b);
        } else {
            assert!(b.degenerate && b.lcb == 0.0);
        }
    }
    assert!(zero_out_transform(&reports, &[7]).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = CovariateModel::Ar1(Ar1Model {
        dim: 6,
        rho: 0.3,
        focal_index: 2,
    });
    let mu = WorkingRegression::custom(1, 5, |x, z| (x[0] * z[0]).tanh() + 0.3 * x[0]);
    let d = linear_data(&model, 700, 0.4, 1.0, 6);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                floodgate_lcb(
                    &d,
                    &mu,
                    &model,
                    &FloodgateConfig {
                        big_k: 50,
                        ..FloodgateConfig::default()
                    },
                )
                .unwrap()
            })
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.lcb.to_bits(), b.lcb.to_bits());
    assert_eq!(a.se.to_bits(), b.se.to_bits());
}

#[test]
fn centering_removes_copy_mean_bias_at_small_k() {
    // With K = 2 the centred numerator should still average to the exact one.
    let model = CovariateModel::Ar1(Ar1Model {
        dim: 4,
        rho: 0.3,
        focal_index: 2,
    });
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![0.6], vec![0.2, 0.0, 0.0]);
    let mut diffs = Vec::new();
    for r in 0..200u64 {
        let d = linear_data(&model, 500, 0.6, 1.0, 100 + r);
        let e = floodgate_lcb(&d, &mu, &model, &exact()).unwrap().point;
        let k2 = floodgate_lcb(
            &d,
            &mu,
            &model,
            &FloodgateConfig {
                big_k: 2,
                seed: r,
                ..FloodgateConfig::default()
            },
        )
        .unwrap()
        .point;
        diffs.push(k2 - e);
    }
    let (m, se) = mean_se(&diffs);
    assert!(m.abs() < 4.0 * se + 0.005, "mean shift {m} (se {se})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn reports_are_clipped_and_below_the_point(seed in 0u64..1000, beta in -1.0f64..1.0, k in prop_oneof![Just(0usize), 2usize..30]) {
        let model = CovariateModel::Ar1(Ar1Model { dim: 3, rho: 0.3, focal_index: 2 });
        let d = linear_data(&model, 60, beta, 1.0, seed);
        let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![beta], vec![0.5, 0.0]);
        let rep = floodgate_lcb(&d, &mu, &model, &FloodgateConfig { big_k: k, seed, ..FloodgateConfig::default() }).unwrap();
        prop_assert!(rep.lcb >= 0.0);
        prop_assert!(rep.lcb <= rep.point.max(0.0));
        prop_assert!(!rep.degenerate || rep.lcb == 0.0);
    }
}
