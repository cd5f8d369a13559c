//! Clusterings under which the cluster sign test is exact in finite samples.
//!
//! When every within-cluster Gram matrix is a multiple of the full Gram
//! matrix, cluster sign flips of the restricted residuals reproduce the sign
//! flips of the true errors, and enumerating all `2^J` flips gives a test with
//! exact level.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::engine::{run_test, Mode, Sidedness, TestConfig, TestOutcome};
use crate::error::{Error, Result};
use crate::linmodel::{Dataset, Design, LinearHypothesis};
use crate::primitives::{enumerate_elements, Clustering, PrimitiveKind};

/// Default relative Frobenius tolerance for the similarity check.
pub const DEFAULT_SIMILARITY_TOL: f64 = 1e-8;

/// Largest sign group an exact test will enumerate.
pub const EXACT_ENUMERATION_CAP: u64 = 1 << 20;

/// A binary treatment to be split into `num_clusters` balanced clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalancedDesignSpec {
    pub treatment: Vec<bool>,
    pub num_clusters: usize,
}

impl BalancedDesignSpec {
    pub fn new(treatment: Vec<bool>, num_clusters: usize) -> Self {
        Self {
            treatment,
            num_clusters,
        }
    }

    /// Reads the treatment from an intercept-plus-binary-covariate design.
    pub fn from_dataset(d: &Dataset, num_clusters: usize) -> Result<Self> {
        Ok(Self::new(binary_treatment(d)?, num_clusters))
    }

    pub fn treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t).count()
    }

    pub fn control(&self) -> usize {
        self.treatment.len() - self.treated()
    }
}

/// Extracts `x_i = 1` indicators from a design with an intercept column and
/// one 0/1 covariate.
pub fn binary_treatment(d: &Dataset) -> Result<Vec<bool>> {
    let x = d.x();
    if x.ncols() != 2 {
        return Err(Error::UnsupportedDesign(format!(
            "balanced clusterings need an intercept and one binary covariate; design has {} columns",
            x.ncols()
        )));
    }
    let is_one = |v: f64| v == 1.0;
    let is_zero_one = |v: f64| v == 0.0 || v == 1.0;
    let (icpt, cov) = if x.column(0).iter().all(|&v| is_one(v)) {
        (0, 1)
    } else if x.column(1).iter().all(|&v| is_one(v)) {
        (1, 0)
    } else {
        return Err(Error::UnsupportedDesign(
            "design has no intercept column".into(),
        ));
    };
    debug_assert_ne!(icpt, cov);
    if !x.column(cov).iter().all(|&v| is_zero_one(v)) {
        return Err(Error::UnsupportedDesign(
            "covariate is not binary (0/1)".into(),
        ));
    }
    Ok(x.column(cov).iter().map(|&v| v == 1.0).collect())
}

/// Splits treated and control units uniformly at random into `J` clusters
/// holding `n1 / J` treated and `n0 / J` control units each.
pub fn build_balanced_clustering<R: Rng + ?Sized>(
    spec: &BalancedDesignSpec,
    rng: &mut R,
) -> Result<Clustering> {
    let j = spec.num_clusters;
    if j == 0 {
        return Err(Error::InvalidConfig(
            "number of clusters must be positive".into(),
        ));
    }
    if spec.treatment.is_empty() {
        return Err(Error::EmptyInput("treatment vector"));
    }
    let (n1, n0) = (spec.treated(), spec.control());
    if n1 % j != 0 || n0 % j != 0 {
        return Err(Error::IndivisibleDesign {
            clusters: j,
            treated_remainder: n1 % j,
            control_remainder: n0 % j,
        });
    }
    let mut treated: Vec<usize> = (0..spec.treatment.len())
        .filter(|&i| spec.treatment[i])
        .collect();
    let mut control: Vec<usize> = (0..spec.treatment.len())
        .filter(|&i| !spec.treatment[i])
        .collect();
    treated.shuffle(rng);
    control.shuffle(rng);
    let (t_per, c_per) = (n1 / j, n0 / j);
    let members = (0..j)
        .map(|k| {
            let mut m = treated[k * t_per..(k + 1) * t_per].to_vec();
            m.extend_from_slice(&control[k * c_per..(k + 1) * c_per]);
            m
        })
        .collect();
    Clustering::from_members(spec.treatment.len(), members)
}

/// Result of checking `Xc'Xc = (n_c / n) lambda_c X'X` for every cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityCheck {
    pub ok: bool,
    pub worst_relative_deviation: f64,
    pub lambdas: Vec<f64>,
}

/// Checks that each cluster's Gram matrix is proportional to the full one.
///
/// `lambda_c` is fitted by least squares in the Frobenius inner product and
/// the deviation is `||Xc'Xc - kappa X'X||_F / ||Xc'Xc||_F`.
pub fn verify_cluster_similarity(d: &Dataset, c: &Clustering, tol: f64) -> Result<SimilarityCheck> {
    if c.n() != d.n() {
        return Err(Error::LayoutMismatch {
            expected: c.n(),
            found: d.n(),
        });
    }
    Design::new(d.x())?;
    let x = d.x();
    let gram = x.tr_mul(x);
    let gram_sq = gram.norm_squared();
    let n = d.n() as f64;
    let mut worst: f64 = 0.0;
    let mut lambdas = Vec::with_capacity(c.num_clusters());
    for m in c.members() {
        let xc = DMatrix::from_fn(m.len(), x.ncols(), |r, j| x[(m[r], j)]);
        let gc = xc.tr_mul(&xc);
        let kappa = gc.dot(&gram) / gram_sq;
        let norm = gc.norm();
        let dev = if norm > 0.0 {
            (&gc - &gram * kappa).norm() / norm
        } else {
            0.0
        };
        worst = worst.max(dev);
        lambdas.push(kappa * n / m.len() as f64);
    }
    Ok(SimilarityCheck {
        ok: worst <= tol,
        worst_relative_deviation: worst,
        lambdas,
    })
}

/// A cluster sign test over all `2^J` flips, flagged exact when the
/// clustering passed the similarity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactOutcome {
    pub outcome: TestOutcome,
    pub exact: bool,
    pub similarity: SimilarityCheck,
}

pub fn run_exact_test(
    d: &Dataset,
    h: &LinearHypothesis,
    c: &Clustering,
    alpha: f64,
) -> Result<ExactOutcome> {
    run_exact_test_with_tol(d, h, c, alpha, DEFAULT_SIMILARITY_TOL)
}

pub fn run_exact_test_with_tol(
    d: &Dataset,
    h: &LinearHypothesis,
    c: &Clustering,
    alpha: f64,
    tol: f64,
) -> Result<ExactOutcome> {
    let similarity = verify_cluster_similarity(d, c, tol)?;
    let cfg = TestConfig {
        draws: 1,
        alpha,
        mode: Mode::Enumerated {
            cap: EXACT_ENUMERATION_CAP,
        },
        seed: 0,
        sidedness: Sidedness::TwoSided,
        auto_enumerate: true,
    };
    let mut outcome = run_test(d, h, &PrimitiveKind::ClusterSign(c.clone()), &cfg)?;
    if !similarity.ok {
        outcome.warnings.push(format!(
            "cluster Gram matrices are not proportional to X'X (worst relative deviation {:.3e}); \
             the test is only asymptotically valid",
            similarity.worst_relative_deviation
        ));
    }
    Ok(ExactOutcome {
        outcome,
        exact: similarity.ok,
        similarity,
    })
}

/// Largest difference over all cluster sign flips `g` between `t_n(g e0)`,
/// computed from restricted residuals, and `t_n(g e)`, computed from the
/// true errors.
pub fn randomization_gap(
    d: &Dataset,
    h: &LinearHypothesis,
    c: &Clustering,
    errors: &DVector<f64>,
) -> Result<f64> {
    if errors.len() != d.n() {
        return Err(Error::DimensionMismatch {
            what: "error vector",
            expected: d.n(),
            found: errors.len(),
        });
    }
    let design = Design::new(d.x())?;
    let fit = design.fit(d.y())?;
    let e0 = design.constrain(d.y(), &fit, h)?.restricted_residuals;
    let w = design.functional(h)?.weight;
    let kind = PrimitiveKind::ClusterSign(c.clone());
    let elements = enumerate_elements(&kind, d.n(), EXACT_ENUMERATION_CAP)?;
    Ok(elements
        .iter()
        .map(|g| {
            (g.weighted_sum(w.as_slice(), e0.as_slice())
                - g.weighted_sum(w.as_slice(), errors.as_slice()))
            .abs()
        })
        .fold(0.0, f64::max))
}
