use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use resrand::datasets;
use resrand::engine::{invert_ci, run_test, Decision, Grid, ModeUsed, TestConfig};
use resrand::exactcons::{
    build_balanced_clustering, randomization_gap, run_exact_test, BalancedDesignSpec,
};
use resrand::highdim::{family_test, PenaltyConfig};
use resrand::linmodel::{fit_ols, Dataset, LinearHypothesis};
use resrand::primitives::{Clustering, PrimitiveKind};
use resrand::reflect::{run_reflection_test, ReflectionConfig, ReflectionVariant};
use resrand::Error;

#[test]
fn hormone_slope_is_rejected_by_every_primitive() {
    let d = datasets::hormone().unwrap();
    let lots = Clustering::from_labels(d.cluster().unwrap()).unwrap();
    let h = LinearHypothesis::coefficient(2, 1, 0.0).unwrap();
    let cfg = TestConfig::default().with_seed(1);
    for kind in [
        PrimitiveKind::GlobalPerm,
        PrimitiveKind::GlobalSign,
        PrimitiveKind::ClusterPerm(lots.clone()),
        PrimitiveKind::Double(lots.clone()),
    ] {
        let out = run_test(&d, &h, &kind, &cfg).unwrap();
        assert_eq!(out.decision, Decision::Reject, "{}", kind.name());
    }
    // Three lots give only eight sign patterns, too few to reject at 5%.
    let out = run_test(&d, &h, &PrimitiveKind::ClusterSign(lots), &cfg).unwrap();
    assert_eq!(out.mode_used, ModeUsed::Enumerated);
    assert_eq!(out.draw_values.len(), 8);
    assert!(out.pval_two >= 1.0 / 8.0);
}

#[test]
fn hormone_interval_brackets_the_estimate() {
    let d = datasets::hormone().unwrap();
    let est = fit_ols(&d).unwrap().beta_hat[1];
    let ci = invert_ci(
        &d,
        1,
        &PrimitiveKind::GlobalPerm,
        &TestConfig::default().with_seed(2),
        Grid::new(-0.1, -0.03, 5e-4),
    )
    .unwrap();
    assert!(ci.lower < est && est < ci.upper);
    assert!((ci.lower + 0.0668).abs() <= 0.003 && (ci.upper + 0.0478).abs() <= 0.003);
}

#[test]
fn balanced_design_is_exact_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 30;
    let treat: Vec<bool> = (0..n).map(|i| i < 3).collect();
    let rows: Vec<Vec<f64>> = treat
        .iter()
        .map(|&t| vec![1.0, f64::from(u8::from(t))])
        .collect();
    let errors = DVector::from_fn(n, |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        if treat[i] {
            2.0 * z
        } else {
            z
        }
    });
    let d = Dataset::from_rows(errors.as_slice(), &rows).unwrap();
    let spec = BalancedDesignSpec::new(treat, 3);
    let c = build_balanced_clustering(&spec, &mut rng).unwrap();
    let h = LinearHypothesis::coefficient(2, 1, 0.0).unwrap();
    assert!(randomization_gap(&d, &h, &c, &errors).unwrap() < 1e-10);
    let out = run_exact_test(&d, &h, &c, 0.05).unwrap();
    assert!(out.exact);
    assert_eq!(out.outcome.draw_values.len(), 8);
}

#[test]
fn reflection_runs_on_a_time_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200;
    let mut e = 0.0;
    let mut y = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        e = 0.5 * e + rng.sample::<f64, _>(StandardNormal);
        let x = (t as f64 / 10.0).sin();
        rows.push(vec![1.0, x]);
        y.push(x + e);
    }
    let d = Dataset::from_rows(&y, &rows)
        .unwrap()
        .with_time((0..n as i64).collect())
        .unwrap();
    let h = LinearHypothesis::coefficient(2, 1, 1.0).unwrap();
    let rcfg = ReflectionConfig::new(6, ReflectionVariant::Conditional).with_min_cluster_size(2);
    let out = run_reflection_test(&d, &h, &rcfg, &TestConfig::default()).unwrap();
    if let Some(o) = out.outcome() {
        assert_eq!(o.draw_values.len(), 64);
    }

    let untimed = Dataset::from_rows(&y, &rows).unwrap();
    assert_eq!(
        run_reflection_test(&untimed, &h, &rcfg, &TestConfig::default()).unwrap_err(),
        Error::MissingTimeIndex
    );
}

#[test]
fn family_test_finds_a_strong_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (40, 60);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |i, _| {
        10.0 * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal)
    });
    let d = Dataset::new(y, x).unwrap();
    let cfg = TestConfig::default().with_draws(20_000).with_seed(6);
    let rep = family_test(
        &d,
        &PenaltyConfig::new(10.0, 0.5),
        &PrimitiveKind::GlobalSign,
        &cfg,
    )
    .unwrap();
    assert_eq!(rep.per_coef_pvals.len(), p);
    assert!(rep.rejected[0]);
    assert!(rep.rejected.iter().skip(1).filter(|&&r| r).count() <= 2);
}
