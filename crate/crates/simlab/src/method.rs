//! Test procedures the harness can apply to generated data.
//!
//! A method sees the dataset and the hypothesis only; the generating truth
//! stays with the harness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use resrand::engine::{run_test, TestConfig};
use resrand::exactcons::{build_balanced_clustering, run_exact_test, BalancedDesignSpec};
use resrand::highdim::{family_test, PenaltyConfig};
use resrand::linmodel::{classical_wald_test, Dataset, LinearHypothesis};
use resrand::primitives::{layout_from_labels, Clustering, PrimitiveKind};
use resrand::reflect::{
    run_reflection_test, ReflectionConfig, ReflectionOutcome, ReflectionVariant,
};
use resrand::{Error, Result};

/// A primitive named independently of any dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveChoice {
    Perm,
    Sign,
    ClusterPerm,
    ClusterSign,
    Double,
    TwoWay,
}

impl PrimitiveChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Perm => "perm",
            Self::Sign => "sign",
            Self::ClusterPerm => "cluster-perm",
            Self::ClusterSign => "cluster-sign",
            Self::Double => "double",
            Self::TwoWay => "two-way-perm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "perm" => Self::Perm,
            "sign" => Self::Sign,
            "cluster-perm" => Self::ClusterPerm,
            "cluster-sign" => Self::ClusterSign,
            "double" => Self::Double,
            "two-way-perm" | "two-way" => Self::TwoWay,
            _ => return None,
        })
    }

    /// Binds the primitive to the cluster structure recorded in `d`.
    pub fn bind(self, d: &Dataset) -> Result<PrimitiveKind> {
        let clusters = || -> Result<Clustering> {
            let labels = d.cluster().ok_or_else(|| {
                Error::InvalidConfig(format!("primitive {} needs cluster labels", self.name()))
            })?;
            Clustering::from_labels(labels)
        };
        Ok(match self {
            Self::Perm => PrimitiveKind::GlobalPerm,
            Self::Sign => PrimitiveKind::GlobalSign,
            Self::ClusterPerm => PrimitiveKind::ClusterPerm(clusters()?),
            Self::ClusterSign => PrimitiveKind::ClusterSign(clusters()?),
            Self::Double => PrimitiveKind::Double(clusters()?),
            Self::TwoWay => {
                let (r, c) = d.row_cluster().zip(d.col_cluster()).ok_or_else(|| {
                    Error::InvalidConfig(
                        "primitive two-way-perm needs row and column labels".into(),
                    )
                })?;
                PrimitiveKind::TwoWayPerm(layout_from_labels(r, c)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum MethodSpec {
    /// Residual randomization test with a fixed primitive.
    Randomization {
        primitive: PrimitiveChoice,
        draws: usize,
    },
    /// Enumerated cluster sign test over a balanced split of a binary design.
    ExactBalanced { clusters: usize },
    /// Reflection test for autocorrelated errors.
    Reflection {
        j: usize,
        variant: ReflectionVariant,
        min_cluster_size: usize,
        draws: usize,
    },
    /// Bonferroni family of coefficient tests for high-dimensional designs.
    HighDimFamily {
        penalties: PenaltyConfig,
        primitive: PrimitiveChoice,
        draws: usize,
    },
    /// Homoskedastic OLS z-test.
    Wald,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Randomization { primitive, .. } => format!("rr-{}", primitive.name()),
            Self::ExactBalanced { clusters } => format!("rr-exact-{clusters}"),
            Self::Reflection { variant, .. } => match variant {
                ReflectionVariant::Conditional => "reflection-conditional".into(),
                ReflectionVariant::Unconditional => "reflection-unconditional".into(),
            },
            Self::HighDimFamily { primitive, .. } => format!("highdim-{}", primitive.name()),
            Self::Wald => "ols-wald".into(),
        }
    }

    /// Runs the method once. `seed` drives the randomization draws and `rng`
    /// resolves randomized decisions and any random construction.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        d: &Dataset,
        h: &LinearHypothesis,
        alpha: f64,
        seed: u64,
        rng: &mut R,
    ) -> Result<MethodResult> {
        let cfg = |draws: usize| TestConfig {
            draws,
            alpha,
            seed,
            ..TestConfig::default()
        };
        match self {
            Self::Randomization { primitive, draws } => {
                let kind = primitive.bind(d)?;
                let out = run_test(d, h, &kind, &cfg(*draws))?;
                Ok(MethodResult::Decided(out.decision.resolve(rng)))
            }
            Self::ExactBalanced { clusters } => {
                let spec = BalancedDesignSpec::from_dataset(d, *clusters)?;
                let c = build_balanced_clustering(&spec, rng)?;
                let out = run_exact_test(d, h, &c, alpha)?;
                Ok(MethodResult::Decided(out.outcome.decision.resolve(rng)))
            }
            Self::Reflection {
                j,
                variant,
                min_cluster_size,
                draws,
            } => {
                let rcfg =
                    ReflectionConfig::new(*j, *variant).with_min_cluster_size(*min_cluster_size);
                Ok(match run_reflection_test(d, h, &rcfg, &cfg(*draws))? {
                    ReflectionOutcome::Decided(out) => {
                        MethodResult::Decided(out.decision.resolve(rng))
                    }
                    ReflectionOutcome::Undecided { .. } => MethodResult::Undecided,
                    ReflectionOutcome::NotRejected { .. } => MethodResult::Decided(false),
                })
            }
            Self::HighDimFamily {
                penalties,
                primitive,
                draws,
            } => {
                let kind = primitive.bind(d)?;
                let report = family_test(d, penalties, &kind, &cfg(*draws))?;
                Ok(MethodResult::Family(report.rejected))
            }
            Self::Wald => Ok(MethodResult::Decided(
                classical_wald_test(d, h, alpha)?.reject,
            )),
        }
    }
}

/// What a method returned on one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodResult {
    /// Reject or not.
    Decided(bool),
    /// The method declined to decide.
    Undecided,
    /// One decision per coefficient.
    Family(Vec<bool>),
}
