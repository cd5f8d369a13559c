//! The reflection test for serially correlated errors.
//!
//! Restricted residuals closest to zero mark likely zero crossings of the
//! error process. Consecutive stretches between such anchors are flipped in
//! sign as whole clusters.

use serde::{Deserialize, Serialize};

use crate::engine::{run_test, TestConfig, TestOutcome};
use crate::error::{Error, Result};
use crate::linmodel::{fit_constrained_ols, Dataset, LinearHypothesis};
use crate::primitives::{Clustering, PrimitiveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReflectionVariant {
    /// Returns no decision when fewer than `J` clusters are formed.
    Conditional,
    /// Does not reject when fewer than `J` clusters are formed.
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionConfig {
    /// Target number of clusters.
    pub j: usize,
    pub variant: ReflectionVariant,
    /// Clusters with fewer points are discarded before counting.
    pub min_cluster_size: usize,
}

impl ReflectionConfig {
    pub fn new(j: usize, variant: ReflectionVariant) -> Self {
        Self {
            j,
            variant,
            min_cluster_size: 2,
        }
    }

    pub fn with_min_cluster_size(mut self, size: usize) -> Self {
        self.min_cluster_size = size;
        self
    }
}

/// Clusters built from anchor points, before and after size filtering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectionClustering {
    /// Anchor times `t_0 < ... < t_J` (0-based positions).
    pub anchors: Vec<usize>,
    /// Consecutive blocks `{t_0..t_1}, {t_1+1..t_2}, ...` that were kept.
    pub blocks: Vec<Vec<usize>>,
    /// Number of kept blocks.
    pub achieved: usize,
}

impl ReflectionClustering {
    /// The blocks as a partial clustering of `n` points; `None` when no
    /// block survived.
    pub fn clustering(&self, n: usize) -> Option<Clustering> {
        if self.blocks.is_empty() {
            return None;
        }
        Clustering::from_members(n, self.blocks.clone()).ok()
    }
}

/// Anchors at the `J + 1` residuals of smallest magnitude (earliest first
/// on ties) and cuts the span between them into `J` consecutive blocks,
/// keeping blocks with at least `min_size` points.
pub fn build_reflection_clustering_with(
    residuals: &[f64],
    j: usize,
    min_size: usize,
) -> Result<ReflectionClustering> {
    if j == 0 {
        return Err(Error::InvalidConfig("reflection test needs J >= 1".into()));
    }
    if j + 1 > residuals.len() {
        return Err(Error::InvalidConfig(format!(
            "J + 1 = {} anchors exceed the {} observations",
            j + 1,
            residuals.len()
        )));
    }
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&a, &b| {
        residuals[a]
            .abs()
            .total_cmp(&residuals[b].abs())
            .then(a.cmp(&b))
    });
    let mut anchors = order[..=j].to_vec();
    anchors.sort_unstable();

    let mut blocks = Vec::with_capacity(j);
    let mut start = anchors[0];
    for &end in &anchors[1..] {
        let block: Vec<usize> = (start..=end).collect();
        if !block.is_empty() && block.len() >= min_size.max(1) {
            blocks.push(block);
        }
        start = end + 1;
    }
    Ok(ReflectionClustering {
        achieved: blocks.len(),
        anchors,
        blocks,
    })
}

/// [`build_reflection_clustering_with`] keeping every nonempty block.
pub fn build_reflection_clustering(residuals: &[f64], j: usize) -> Result<ReflectionClustering> {
    build_reflection_clustering_with(residuals, j, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ReflectionOutcome {
    /// `J` clusters were formed and the cluster sign test was run.
    Decided(Box<TestOutcome>),
    /// Fewer than `J` clusters (conditional variant).
    Undecided { achieved: usize },
    /// Fewer than `J` clusters (unconditional variant): the null is kept.
    NotRejected { achieved: usize },
}

impl ReflectionOutcome {
    pub fn is_decided(&self) -> bool {
        matches!(self, ReflectionOutcome::Decided(_))
    }

    pub fn outcome(&self) -> Option<&TestOutcome> {
        match self {
            ReflectionOutcome::Decided(o) => Some(o),
            _ => None,
        }
    }
}

/// Reflection test of `h`. Observations outside the anchored span, and
/// those in discarded blocks, keep their sign under every flip.
pub fn run_reflection_test(
    d: &Dataset,
    h: &LinearHypothesis,
    rcfg: &ReflectionConfig,
    cfg: &TestConfig,
) -> Result<ReflectionOutcome> {
    if d.time().is_none() {
        return Err(Error::MissingTimeIndex);
    }
    let restricted = fit_constrained_ols(d, h)?;
    let rc = build_reflection_clustering_with(
        restricted.restricted_residuals.as_slice(),
        rcfg.j,
        rcfg.min_cluster_size,
    )?;
    if rc.achieved < rcfg.j {
        return Ok(match rcfg.variant {
            ReflectionVariant::Conditional => ReflectionOutcome::Undecided {
                achieved: rc.achieved,
            },
            ReflectionVariant::Unconditional => ReflectionOutcome::NotRejected {
                achieved: rc.achieved,
            },
        });
    }
    let clustering = rc.clustering(d.n()).expect("J >= 1 blocks were kept");
    let outcome = run_test(d, h, &PrimitiveKind::ClusterSign(clustering), cfg)?;
    Ok(ReflectionOutcome::Decided(Box::new(outcome)))
}
