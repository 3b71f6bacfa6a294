use floodgate::covariate::{Ar1Model, CovariateModel, GaussianLinearModel};
use floodgate::macm::{macm_lcb, macm_terms, MacmConfig};
use floodgate::regression::{Link, RegressionKind, WorkingRegression};
use floodgate::rng::stream;
use floodgate::sim::{oracle_value, DiscreteToy, MuStar, OracleConfig, OracleEstimand};
use floodgate::{Dataset, FloodgateError};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_model() -> CovariateModel {
    CovariateModel::GaussianLinear(GaussianLinearModel {
        gamma: vec![0.1, 0.4, -0.3],
        sigma2: 1.0,
        z_mean: vec![0.0, 0.0],
        z_cov: vec![vec![1.0, 0.2], vec![0.2, 1.0]],
    })
}

/// Labels with `P(Y = 1 | x, z) = expit(eta)`.
fn logistic_data(
    model: &CovariateModel,
    n: usize,
    eta: impl Fn(&[f64], &[f64]) -> f64,
    seed: u64,
) -> Dataset {
    let (x, z) = model.sample_joint(n, seed).unwrap();
    let mut rng = stream(seed, &[7]);
    let y = (0..n)
        .map(|i| {
            let p = 1.0 / (1.0 + (-eta(x.row(i), z.row(i))).exp());
            if rng.random::<f64>() < p {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Dataset::new(y, x, z).unwrap()
}

fn eta(x: &[f64], z: &[f64]) -> f64 {
    1.5 * x[0] - 0.5 * z[0] + 0.3 * z[1]
}

#[test]
fn toy_gap_is_the_maximum_over_fits() {
    let mut rng = stream(1, &[]);
    for _ in 0..50 {
        let toy = DiscreteToy::random(&mut rng, 2, 2, vec![-1.0, 1.0]);
        let gap = toy.macm_gap().unwrap();
        assert!((toy.macm_functional(&toy.mu_star()).unwrap() - gap).abs() < 1e-12);
        for _ in 0..20 {
            let mu: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    (0..2)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            assert!(toy.macm_functional(&mu).unwrap() <= gap + 1e-12);
        }
    }
    let bad = DiscreteToy::random(&mut rng, 2, 2, vec![0.0, 1.0]);
    assert!(matches!(bad.macm_gap(), Err(FloodgateError::Label(_))));
}

#[test]
fn toy_oracle_examples() {
    let mut rng = stream(2, &[]);
    // X independent of Y given Z.
    let mut toy = DiscreteToy::random(&mut rng, 2, 2, vec![-1.0, 1.0]);
    for z in 0..2 {
        toy.p_y[1][z] = toy.p_y[0][z].clone();
    }
    assert!(toy.macm_gap().unwrap().abs() < 1e-15);
    // Y = +1 exactly when X = 1, X a fair coin independent of Z.
    let sign = DiscreteToy {
        p_xz: vec![vec![0.3, 0.2], vec![0.3, 0.2]],
        y_values: vec![-1.0, 1.0],
        p_y: vec![vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2]],
    };
    assert!((sign.macm_gap().unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn affine_changes_leave_the_bound_unchanged() {
    let model = gaussian_model();
    let d = logistic_data(&model, 400, eta, 3);
    let base = WorkingRegression::linear(RegressionKind::Custom, 0.2, vec![1.2], vec![-0.4, 0.3]);
    let exact = MacmConfig {
        exact_moments: true,
        ..MacmConfig::default()
    };
    let mc = MacmConfig {
        m_copies: Some(200),
        k_copies: 50,
        seed: 4,
        ..MacmConfig::default()
    };
    let ref_exact = macm_lcb(&d, &base, &model, &exact).unwrap();
    let ref_mc = macm_lcb(&d, &base, &model, &mc).unwrap();
    assert!(ref_exact.lcb > 0.0 && ref_mc.lcb > 0.0);
    let mut rng = stream(5, &[]);
    for _ in 0..50 {
        let c = rng.random_range(0.1..10.0);
        let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let shifted = WorkingRegression::linear(
            RegressionKind::Custom,
            c * 0.2 + 1.0,
            vec![c * 1.2],
            vec![c * -0.4 + v[0], c * 0.3 + v[1]],
        );
        assert!(
            (macm_lcb(&d, &shifted, &model, &exact).unwrap().lcb - ref_exact.lcb).abs() < 1e-10
        );
        let inner = base.clone();
        let bent = WorkingRegression::custom(1, 2, move |x, z| {
            c * inner.eval(x, z) + (v[0] * z[0]).sin() + v[1] * z[1] * z[1]
        });
        assert!((macm_lcb(&d, &bent, &model, &mc).unwrap().lcb - ref_mc.lcb).abs() < 1e-10);
    }
}

#[test]
fn odd_cubic_transform_of_the_centred_fit() {
    // mu' = c (mu - E[mu | Z]) + (mu - E[mu | Z])^3 + h(Z) keeps the sign of
    // the centred fit. The Monte Carlo estimate of E[mu' | Z] differs from the
    // transformed estimate of E[mu | Z], so the bound agrees up to copy noise.
    let model = gaussian_model();
    let d = logistic_data(&model, 400, eta, 6);
    let base = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![1.2], vec![-0.4, 0.3]);
    let gm = match &model {
        CovariateModel::GaussianLinear(g) => g.clone(),
        _ => unreachable!(),
    };
    let inner = base.clone();
    let cubic = WorkingRegression::custom(1, 2, move |x, z| {
        let m = floodgate::covariate::cond_moments_linear(&gm, &inner, z)
            .unwrap()
            .0;
        let u = inner.eval(x, z) - m;
        2.0 * u + u.powi(3) + z[0].cos()
    });
    let cfg = MacmConfig {
        m_copies: Some(4000),
        k_copies: 200,
        seed: 7,
        ..MacmConfig::default()
    };
    let a = macm_lcb(&d, &base, &model, &cfg).unwrap();
    let b = macm_lcb(&d, &cubic, &model, &cfg).unwrap();
    let exact = macm_lcb(
        &d,
        &base,
        &model,
        &MacmConfig {
            exact_moments: true,
            ..MacmConfig::default()
        },
    )
    .unwrap();
    let se = exact.se / (d.n() as f64).sqrt();
    assert!(
        (a.point - b.point).abs() < se,
        "{} vs {} (se {se})",
        a.point,
        b.point
    );
}

#[test]
fn terms_are_bounded_and_se_is_small() {
    let model = gaussian_model();
    let d = logistic_data(&model, 300, eta, 8);
    let mu = WorkingRegression::glm(
        RegressionKind::Custom,
        Link::Logistic,
        0.0,
        vec![1.5],
        vec![-0.5, 0.3],
    );
    for exact in [true, false] {
        let cfg = MacmConfig {
            exact_moments: exact,
            m_copies: Some(100),
            k_copies: 30,
            ..MacmConfig::default()
        };
        assert!(macm_terms(&d, &mu, &model, &cfg)
            .unwrap()
            .iter()
            .all(|(r, _)| (-1.0..=1.0).contains(r)));
        // se is reported on the gap scale, 2 s.
        assert!(macm_lcb(&d, &mu, &model, &cfg).unwrap().se <= 2.0);
    }
}

#[test]
fn monte_carlo_agrees_with_exact() {
    let model = gaussian_model();
    let n = 100;
    let d = logistic_data(&model, n, eta, 9);
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![1.5], vec![-0.5, 0.3]);
    let e = macm_lcb(
        &d,
        &mu,
        &model,
        &MacmConfig {
            exact_moments: true,
            ..MacmConfig::default()
        },
    )
    .unwrap();
    let m = macm_lcb(
        &d,
        &mu,
        &model,
        &MacmConfig {
            m_copies: Some(n * n),
            k_copies: 1000,
            seed: 10,
            ..MacmConfig::default()
        },
    )
    .unwrap();
    let combined = (e.se.powi(2) + m.se.powi(2)).sqrt() / (n as f64).sqrt();
    assert!(
        (e.point - m.point).abs() < 3.0 * combined,
        "{} vs {} ({combined})",
        e.point,
        m.point
    );
}

#[test]
fn config_and_label_errors() {
    let model = gaussian_model();
    let d = logistic_data(&model, 50, eta, 11);
    let mu = WorkingRegression::linear(RegressionKind::Custom, 0.0, vec![1.0], vec![0.0, 0.0]);
    let zero_k = MacmConfig {
        k_copies: 0,
        ..MacmConfig::default()
    };
    assert!(matches!(
        macm_lcb(&d, &mu, &model, &zero_k),
        Err(FloodgateError::Config(_))
    ));
    let zero_m = MacmConfig {
        m_copies: Some(0),
        ..MacmConfig::default()
    };
    assert!(matches!(
        macm_lcb(&d, &mu, &model, &zero_m),
        Err(FloodgateError::Config(_))
    ));
    let shifted = d.map_response(|y| y + 2.0).unwrap();
    assert!(matches!(
        macm_lcb(&shifted, &mu, &model, &MacmConfig::default()),
        Err(FloodgateError::Label(_))
    ));
}

#[test]
fn coverage_with_a_heavy_tailed_fit() {
    // Working regression with a cubic blow-up; the bounded terms keep the
    // bound valid.
    let model = CovariateModel::Ar1(Ar1Model {
        dim: 3,
        rho: 0.3,
        focal_index: 1,
    });
    let beta = vec![1.0, -0.8, 0.5];
    let mustar = MuStar::Linear {
        beta: beta.clone(),
        logistic: true,
    };
    let oracle = oracle_value(
        &model,
        &mustar,
        0,
        OracleEstimand::Macm,
        &OracleConfig::default(),
        12,
    )
    .unwrap();
    assert!(oracle.se < 0.002);
    let mu = WorkingRegression::custom(1, 2, |x, z| {
        let e = 0.9 * x[0] - 0.8 * z[0] + 0.5 * z[1];
        e + 4.0 * e.powi(3)
    });
    let reps = 200;
    let cfg = MacmConfig {
        m_copies: Some(400),
        k_copies: 100,
        ..MacmConfig::default()
    };
    let b = beta.clone();
    let covered = (0..reps as u64)
        .filter(|&r| {
            let b = b.clone();
            let d = logistic_data(
                &model,
                300,
                move |x, z| b[0] * x[0] + b[1] * z[0] + b[2] * z[1],
                100 + r,
            );
            let rep = macm_lcb(
                &d,
                &mu,
                &model,
                &MacmConfig {
                    seed: r,
                    ..cfg.clone()
                },
            )
            .unwrap();
            rep.lcb <= oracle.value + 1e-12
        })
        .count();
    let floor = 0.95 - 2.0 * (0.05 * 0.95 / reps as f64).sqrt();
    assert!(
        covered as f64 / reps as f64 >= floor,
        "{covered}/{reps} (oracle {})",
        oracle.value
    );
}
