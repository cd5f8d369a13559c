use resrand_simlab::{
    preset, presets, run_monte_carlo, MethodSpec, MonteCarloConfig, PrimitiveChoice,
};

#[test]
fn every_preset_runs_a_few_replications() {
    for p in presets() {
        if p.id.starts_with("highdim") {
            continue;
        }
        let rep = p.run_with(3, 1).unwrap();
        assert_eq!(rep.scenario_id, p.id);
        assert_eq!(rep.methods.len(), p.methods.len());
        for m in &rep.methods {
            assert_eq!(
                m.decided + m.undecided + m.excluded,
                3,
                "{} {}",
                p.id,
                m.label
            );
            assert_eq!(m.excluded, 0, "{} {}: {:?}", p.id, m.label, m.errors);
        }
    }
}

#[test]
fn ids_are_unique_and_resolvable() {
    let all = presets();
    for p in &all {
        assert_eq!(all.iter().filter(|q| q.id == p.id).count(), 1);
        assert_eq!(preset(&p.id).as_ref(), Some(p));
    }
    assert!(preset("no-such-scenario").is_none());
}

#[test]
fn reports_repeat_for_a_fixed_seed() {
    let p = preset("oneway-level").unwrap();
    let methods = vec![
        MethodSpec::Wald,
        MethodSpec::Randomization {
            primitive: PrimitiveChoice::ClusterSign,
            draws: 200,
        },
    ];
    let cfg = MonteCarloConfig::new(12, 9);
    let mut a = run_monte_carlo(&p.spec, &methods, &cfg).unwrap();
    let mut b = run_monte_carlo(&p.spec, &methods, &cfg).unwrap();
    a.wall_time_secs = 0.0;
    b.wall_time_secs = 0.0;
    assert_eq!(a, b);
}
