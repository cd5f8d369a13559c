//! Named scenarios with the methods and scale used to check each rate claim.

use resrand::highdim::PenaltyConfig;
use resrand::reflect::ReflectionVariant;
use resrand::Result;

use crate::harness::{run_monte_carlo_with_id, MonteCarloConfig, MonteCarloReport};
use crate::method::{MethodSpec, PrimitiveChoice};
use crate::scenario::{CovariateDist, ErrorDist, PairLayout, ScenarioSpec, Signal, TimeCovariate};

/// Draws per high-dimensional coefficient test; Bonferroni cutoffs need
/// p-values resolved well below `alpha / p`.
pub const HIGHDIM_DRAWS: usize = 50_000;

/// Draws per randomization test.
pub const DEFAULT_DRAWS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub id: String,
    pub spec: ScenarioSpec,
    pub methods: Vec<MethodSpec>,
    pub replications: usize,
    /// Overrides the scenario's null value.
    pub a0: Option<f64>,
    pub reference_scale: &'static str,
}

impl Preset {
    pub fn run(&self, seed: u64) -> Result<MonteCarloReport> {
        self.run_with(self.replications, seed)
    }

    pub fn run_with(&self, replications: usize, seed: u64) -> Result<MonteCarloReport> {
        let mut cfg = MonteCarloConfig::new(replications, seed);
        cfg.a0 = self.a0;
        run_monte_carlo_with_id(&self.id, &self.spec, &self.methods, &cfg, self.reference_scale)
    }
}

fn rr(primitive: PrimitiveChoice) -> MethodSpec {
    MethodSpec::Randomization {
        primitive,
        draws: DEFAULT_DRAWS,
    }
}

fn one_way(heteroskedastic: bool) -> ScenarioSpec {
    ScenarioSpec::OneWayCluster {
        j: 10,
        cluster_size: 30,
        x_dist: CovariateDist::Normal,
        random_effect: true,
        heteroskedastic,
        beta: 0.0,
    }
}

fn err_name(e: ErrorDist) -> &'static str {
    match e {
        ErrorDist::Normal => "normal",
        ErrorDist::T3 => "t3",
        ErrorDist::Mixture => "mixture",
        ErrorDist::Cauchy => "cauchy",
    }
}

/// Penalties used by the high-dimensional presets.
pub fn highdim_penalties() -> PenaltyConfig {
    PenaltyConfig::new(10.0, 0.5)
}

fn highdim(signal: f64) -> ScenarioSpec {
    ScenarioSpec::HighDim {
        n: 60,
        p: 120,
        s0: 3,
        signal: Signal::Constant(signal),
        err: ErrorDist::Normal,
    }
}

/// Every registered preset.
pub fn presets() -> Vec<Preset> {
    let mut out = Vec::new();
    for sigma0 in [0.5, 1.0, 2.0, 5.0] {
        for err in [ErrorDist::Normal, ErrorDist::T3, ErrorDist::Mixture] {
            out.push(Preset {
                id: format!("bf-exact/sigma0={sigma0}/{}", err_name(err)),
                spec: ScenarioSpec::BehrensFisher {
                    n: 30,
                    n1: 3,
                    sigma0,
                    err,
                    beta1: 0.0,
                },
                methods: vec![MethodSpec::ExactBalanced { clusters: 3 }, MethodSpec::Wald],
                replications: 5000,
                a0: None,
                reference_scale: "M = 5000, n = 30",
            });
        }
    }
    let one_way_methods = vec![
        rr(PrimitiveChoice::ClusterSign),
        rr(PrimitiveChoice::ClusterPerm),
        rr(PrimitiveChoice::Double),
        MethodSpec::Wald,
    ];
    out.push(Preset {
        id: "oneway-level".into(),
        spec: one_way(false),
        methods: one_way_methods.clone(),
        replications: 1000,
        a0: None,
        reference_scale: "M = 5000, J = 10, n = 300",
    });
    out.push(Preset {
        id: "oneway-hetero".into(),
        spec: one_way(true),
        methods: one_way_methods.clone(),
        replications: 1000,
        a0: None,
        reference_scale: "M = 5000, J = 10, n = 300",
    });
    out.push(Preset {
        id: "oneway-power".into(),
        spec: one_way(false),
        methods: one_way_methods,
        replications: 1000,
        a0: Some(0.1),
        reference_scale: "M = 5000, J = 10, n = 300",
    });
    for (layout, name) in [
        (PairLayout::LowerTriangle, "lower"),
        (PairLayout::FullGrid, "grid"),
    ] {
        out.push(Preset {
            id: format!("dyadic-level/{name}"),
            spec: ScenarioSpec::Dyadic {
                m: 10,
                x_dist: CovariateDist::Normal,
                eps_dist: ErrorDist::Normal,
                layout,
                beta1: 1.0,
            },
            methods: vec![rr(PrimitiveChoice::TwoWay), MethodSpec::Wald],
            replications: 500,
            a0: None,
            reference_scale: "M = 5000, n = 100",
        });
    }
    out.push(Preset {
        id: "reflection-ar1".into(),
        spec: ScenarioSpec::AR1 {
            n: 100,
            rho: 0.8,
            x_model: TimeCovariate::I,
            u_dist: ErrorDist::Normal,
        },
        methods: vec![
            MethodSpec::Reflection {
                j: 6,
                variant: ReflectionVariant::Conditional,
                min_cluster_size: 2,
                draws: DEFAULT_DRAWS,
            },
            MethodSpec::Reflection {
                j: 6,
                variant: ReflectionVariant::Unconditional,
                min_cluster_size: 2,
                draws: DEFAULT_DRAWS,
            },
            MethodSpec::Wald,
        ],
        replications: 1000,
        a0: None,
        reference_scale: "M = 5000, n = 100",
    });
    for (signal, name) in [(0.0, "null"), (10.0, "power")] {
        out.push(Preset {
            id: format!("highdim-{name}"),
            spec: highdim(signal),
            methods: vec![MethodSpec::HighDimFamily {
                penalties: highdim_penalties(),
                primitive: PrimitiveChoice::Sign,
                draws: HIGHDIM_DRAWS,
            }],
            replications: 200,
            a0: None,
            reference_scale: "M = 1000, n = 100, p = 500",
        });
    }
    out
}

/// Looks up a preset by id.
pub fn preset(id: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_unique_and_specs_valid() {
        let all = presets();
        let mut ids: Vec<&str> = all.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), all.len());
        for p in &all {
            p.spec.validate().unwrap();
            assert!(!p.methods.is_empty());
        }
    }

    #[test]
    fn lookup_finds_registered_ids() {
        assert!(preset("oneway-level").is_some());
        assert!(preset("dyadic-level/grid").is_some());
        assert!(preset("nope").is_none());
    }
}
