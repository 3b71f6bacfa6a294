mod common;

use floodgate::covariate::{Ar1Model, CovariateModel};
use floodgate::regression::Fitter;
use floodgate::sim::{
    generate_replicate, oracle_nested_mc, oracle_value, robustness_mode, run_experiment,
    ExperimentSpec, Method, MuSource, MuStar, MuStarKind, OracleConfig, OracleEstimand, Prepared,
};

fn spec(json_extra: &str) -> ExperimentSpec {
    let base = r#"{"model": {"kind": "ar1", "dim": 10, "rho": 0.3, "focal_index": 1},
        "mu_star": {"kind": "LINEAR_SPARSE", "sparsity": 4, "amplitude": 5.0},
        "n": 400, "p": 10, "method": {"kind": "MMSE_EXACT"}, "replicates": 32, "base_seed": 5"#;
    ExperimentSpec::from_json(&format!("{base}{json_extra}}}")).unwrap()
}

#[test]
fn zero_amplitude_gives_null_oracles_and_safe_bounds() {
    let mut s = spec("");
    s.mu_star.amplitude = 0.0;
    s.replicates = 64;
    let res = run_experiment(&s).unwrap();
    assert!(res.oracles.iter().all(|o| o.value == 0.0));
    let all = res.summary_for("ALL").unwrap();
    assert!(all.coverage >= 0.95, "null coverage {}", all.coverage);
    assert!(res.details.iter().all(|d| d.covered == (d.lcb == 0.0)));
    assert!(res.summary_for("NONNULL").is_none() || res.summary_for("NONNULL").unwrap().count == 0);
}

#[test]
fn generated_responses_follow_the_design() {
    let s = spec("");
    let (d, oracles) = generate_replicate(&s, 0).unwrap();
    assert_eq!((d.n(), d.dx() + d.dz()), (400, 10));
    assert_eq!(oracles.len(), 10);
    let mut logistic = spec(r#", "fitter": "LOGIT_L1""#);
    logistic.mu_star.kind = MuStarKind::LogisticLinear;
    let (d, _) = generate_replicate(&logistic, 3).unwrap();
    assert!(d.y().iter().all(|&y| y == 1.0 || y == -1.0));
    assert!(d.y().contains(&1.0) && d.y().iter().any(|&y| y == -1.0));
}

#[test]
fn linear_oracles_match_nested_monte_carlo() {
    let s = spec("");
    let prep = Prepared::new(&s).unwrap();
    for (idx, &v) in prep.variables.iter().enumerate() {
        let closed = prep.oracles[idx];
        let mc =
            oracle_nested_mc(&s.model, &prep.mustar, v - 1, 10_000, 200, 40 + v as u64).unwrap();
        let tol = 4.0 * (mc.se.powi(2) + closed.se.powi(2)).sqrt();
        assert!(
            (closed.value - mc.value).abs() <= tol.max(1e-12),
            "variable {v}: {} vs {} (tol {tol})",
            closed.value,
            mc.value
        );
    }
}

#[test]
fn nonlinear_oracle_matches_nested_monte_carlo() {
    let model = CovariateModel::Ar1(Ar1Model {
        dim: 12,
        rho: 0.3,
        focal_index: 1,
    });
    let mut s = spec("");
    s.model = model.clone();
    s.p = 12;
    s.mu_star.kind = MuStarKind::NonlinearF1;
    s.mu_star.sparsity = 8;
    s.mu_star.amplitude = 50.0;
    let mustar = MuStar::generate(&s.mu_star, s.n, s.p, s.base_seed).unwrap();
    let active: Vec<usize> = (0..12).filter(|&j| mustar.is_active(j)).take(2).collect();
    assert!(!active.is_empty());
    for j0 in active {
        let cfg = OracleConfig {
            max_outer: 1 << 16,
            ..OracleConfig::default()
        };
        let a = oracle_value(&model, &mustar, j0, OracleEstimand::Mmse, &cfg, 1).unwrap();
        let b = oracle_nested_mc(&model, &mustar, j0, 10_000, 1000, 2).unwrap();
        let tol = 4.0 * (a.se.powi(2) + b.se.powi(2)).sqrt();
        assert!(a.se < 0.02 * a.value, "oracle {a:?}");
        assert!(
            (a.value - b.value).abs() < tol,
            "variable {}: {} vs {} (tol {tol})",
            j0 + 1,
            a.value,
            b.value
        );
    }
}

#[test]
fn nonlinear_generator_builds_the_interaction_sets() {
    let mut s = spec("");
    s.mu_star.kind = MuStarKind::NonlinearF1;
    s.mu_star.sparsity = 30;
    let m = MuStar::generate(&s.mu_star, 600, 40, 3).unwrap();
    let d = match m {
        MuStar::Nonlinear(d) => d,
        _ => unreachable!(),
    };
    assert_eq!(d.s1.len(), 15);
    assert_eq!(d.support.len(), 30);
    for &(a, b) in d.s2.iter().take(5) {
        assert!(d.s1.contains(&a) && d.s1.contains(&b));
    }
    for &j in &d.support {
        let seen = d.s1.contains(&j)
            || d.s2.iter().any(|&(a, b)| a == j || b == j)
            || d.s3.iter().any(|&(a, b, c)| a == j || b == j || c == j);
        assert!(seen, "covariate {j} never used");
    }
}

#[test]
fn ridge_bounds_are_tighter_than_lasso() {
    let mut s = spec("");
    s.model = CovariateModel::Ar1(Ar1Model {
        dim: 40,
        rho: 0.3,
        focal_index: 1,
    });
    s.p = 40;
    s.n = 600;
    s.mu_star.sparsity = 10;
    s.replicates = 64;
    let lasso = run_experiment(&s).unwrap();
    s.fitter = Fitter::Ridge;
    let ridge = run_experiment(&s).unwrap();
    let (l, r) = (
        lasso.summary_for("ALL").unwrap(),
        ridge.summary_for("ALL").unwrap(),
    );
    assert!(
        r.mean_half_width <= l.mean_half_width,
        "ridge {} lasso {}",
        r.mean_half_width,
        l.mean_half_width
    );
}

#[test]
fn runs_are_deterministic() {
    let mut s = spec("");
    s.method = Method::MmseMc { k: 20 };
    s.replicates = 6;
    let csv = |s: &ExperimentSpec| {
        let r = run_experiment(s).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        r.write_detail_csv(&mut a).unwrap();
        r.write_summary_csv(&mut b).unwrap();
        (a, b)
    };
    assert_eq!(csv(&s), csv(&s));
    let mut other = s.clone();
    other.base_seed += 1;
    assert_ne!(csv(&s).0, csv(&other).0);
}

#[test]
fn well_estimated_law_keeps_coverage() {
    let mut s = spec("");
    s.model = CovariateModel::Ar1(Ar1Model {
        dim: 20,
        rho: 0.3,
        focal_index: 1,
    });
    s.p = 20;
    s.replicates = 256;
    let res = robustness_mode(&s, 50 * s.n, 0.0).unwrap();
    let floor = 0.95 - 2.0 * (0.05 * 0.95 / 256f64).sqrt();
    let all = res.summary_for("ALL").unwrap().coverage;
    assert!(all >= floor, "coverage {all}");
}

#[test]
fn truth_as_working_regression_covers() {
    let mut s = spec("");
    s.mu_source = MuSource::True;
    s.replicates = 128;
    let res = run_experiment(&s).unwrap();
    let floor = 0.95 - 2.0 * (0.05 * 0.95 / 128f64).sqrt();
    assert!(res.summary_for("ALL").unwrap().coverage >= floor);
    assert!(res.summary_for("NULL").unwrap().mean_lcb == 0.0);
}

#[test]
fn spec_validation() {
    let mut s = spec("");
    s.p = 11;
    assert!(s.validate().is_err());
    let mut s = spec("");
    s.method = Method::Macm {
        m: None,
        k: 100,
        exact: false,
    };
    assert!(s.validate().is_err());
    let mut s = spec("");
    s.mu_star.kind = MuStarKind::LogisticLinear;
    assert!(s.validate().is_err());
    let mut s = spec("");
    s.method = Method::MmseMc { k: 1 };
    assert!(s.validate().is_err());
    let mut s = spec("");
    s.method = Method::Cosufficient { n2: 12, mc_k: 0 };
    assert!(s.validate().is_err());
    assert!(ExperimentSpec::from_json("{}").is_err());
}
