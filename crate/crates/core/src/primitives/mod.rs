//! Inferential primitives: finite groups of signed permutations acting on
//! residual vectors.
//!
//! Group elements are stored as `(perm, sign)` pairs and act by
//! `(g u)[i] = sign[i] * u[perm[i]]`.

mod enumerate;
mod layout;

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub use enumerate::enumerate_elements;
pub use layout::{average_cells, layout_from_labels, Clustering, LayoutShape, TwoWayLayout};

/// The invariance assumed for the regression errors.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveKind {
    /// All permutations of the datapoints.
    GlobalPerm,
    /// Independent sign flips of every datapoint.
    GlobalSign,
    /// Permutations within each cluster.
    ClusterPerm(Clustering),
    /// One sign flip per cluster.
    ClusterSign(Clustering),
    /// Within-cluster permutations composed with cluster sign flips.
    Double(Clustering),
    /// Row and column permutations of a two-way layout.
    TwoWayPerm(TwoWayLayout),
}

impl PrimitiveKind {
    /// Short name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Self::GlobalPerm => "perm",
            Self::GlobalSign => "sign",
            Self::ClusterPerm(_) => "cluster-perm",
            Self::ClusterSign(_) => "cluster-sign",
            Self::Double(_) => "double",
            Self::TwoWayPerm(_) => "two-way-perm",
        }
    }

    /// Number of datapoints the primitive is tied to, if any.
    pub fn fixed_n(&self) -> Option<usize> {
        match self {
            Self::GlobalPerm | Self::GlobalSign => None,
            Self::ClusterPerm(c) | Self::ClusterSign(c) | Self::Double(c) => Some(c.n()),
            Self::TwoWayPerm(l) => Some(l.n()),
        }
    }

    /// Checks that the primitive can act on vectors of length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::EmptyInput("residual vector"));
        }
        if let Some(expected) = self.fixed_n() {
            if expected != n {
                return Err(Error::LayoutMismatch { expected, found: n });
            }
        }
        if let Self::TwoWayPerm(l) = self {
            l.check_permutable()?;
        }
        Ok(())
    }

    /// Draws a uniform element into `g`, reusing its buffers.
    pub fn sample_into<R: Rng + ?Sized>(&self, n: usize, g: &mut GroupElement, rng: &mut R) {
        g.reset(n);
        match self {
            Self::GlobalPerm => g.perm.shuffle(rng),
            Self::GlobalSign => fill_signs(&mut g.sign, rng),
            Self::ClusterPerm(c) => shuffle_within(c, &mut g.perm, rng),
            Self::ClusterSign(c) => flip_clusters(c, &mut g.sign, rng),
            Self::Double(c) => {
                shuffle_within(c, &mut g.perm, rng);
                flip_clusters(c, &mut g.sign, rng);
            }
            Self::TwoWayPerm(l) => match l.shape() {
                LayoutShape::Grid => {
                    let mut rows: Vec<usize> = (0..l.row_count()).collect();
                    let mut cols: Vec<usize> = (0..l.col_count()).collect();
                    rows.shuffle(rng);
                    cols.shuffle(rng);
                    grid_perm(l, &rows, &cols, &mut g.perm);
                }
                LayoutShape::Dyadic { .. } => {
                    let mut nodes: Vec<usize> = (0..l.row_count()).collect();
                    nodes.shuffle(rng);
                    dyad_perm(l, &nodes, &mut g.perm);
                }
            },
        }
    }
}

fn fill_signs<R: Rng + ?Sized>(sign: &mut [i8], rng: &mut R) {
    for chunk in sign.chunks_mut(64) {
        let bits: u64 = rng.random();
        for (k, s) in chunk.iter_mut().enumerate() {
            *s = if bits >> k & 1 == 1 { -1 } else { 1 };
        }
    }
}

fn shuffle_within<R: Rng + ?Sized>(c: &Clustering, perm: &mut [usize], rng: &mut R) {
    // Fisher-Yates over each cluster's positions, starting from identity.
    for m in c.members() {
        for k in (1..m.len()).rev() {
            let j = rng.random_range(0..=k);
            perm.swap(m[k], m[j]);
        }
    }
}

fn flip_clusters<R: Rng + ?Sized>(c: &Clustering, sign: &mut [i8], rng: &mut R) {
    for m in c.members() {
        if rng.random::<bool>() {
            for &i in m {
                sign[i] = -1;
            }
        }
    }
}

pub(crate) fn grid_perm(l: &TwoWayLayout, rows: &[usize], cols: &[usize], perm: &mut [usize]) {
    for (i, p) in perm.iter_mut().enumerate() {
        *p = l
            .cell(rows[l.row_of()[i]], cols[l.col_of()[i]])
            .expect("grid layouts are fully occupied");
    }
}

pub(crate) fn dyad_perm(l: &TwoWayLayout, nodes: &[usize], perm: &mut [usize]) {
    for (i, p) in perm.iter_mut().enumerate() {
        *p = l
            .dyad(nodes[l.row_of()[i]], nodes[l.col_of()[i]])
            .expect("permutable dyadic layouts are closed under node permutations");
    }
}

/// A signed permutation `u -> (sign[i] * u[perm[i]])_i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct GroupElement {
    pub perm: Vec<usize>,
    pub sign: Vec<i8>,
}

impl GroupElement {
    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            sign: vec![1; n],
        }
    }

    /// Checks that `perm` is a bijection and `sign` has entries in {-1, +1}.
    pub fn new(perm: Vec<usize>, sign: Vec<i8>) -> Result<Self> {
        let n = perm.len();
        if sign.len() != n {
            return Err(Error::DimensionMismatch {
                what: "sign vector",
                expected: n,
                found: sign.len(),
            });
        }
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidLabels("perm is not a bijection".into()));
            }
        }
        if sign.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::InvalidLabels("signs must be +1 or -1".into()));
        }
        Ok(Self { perm, sign })
    }

    fn reset(&mut self, n: usize) {
        self.perm.clear();
        self.perm.extend(0..n);
        self.sign.clear();
        self.sign.resize(n, 1);
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, p)| i == *p) && self.sign.iter().all(|s| *s == 1)
    }

    /// `out[i] = sign[i] * u[perm[i]]`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n() {
            return Err(Error::LayoutMismatch {
                expected: self.n(),
                found: u.len(),
            });
        }
        Ok(self.apply_unchecked(u))
    }

    pub(crate) fn apply_unchecked(&self, u: &[f64]) -> Vec<f64> {
        self.perm
            .iter()
            .zip(&self.sign)
            .map(|(&p, &s)| f64::from(s) * u[p])
            .collect()
    }

    /// `sum_i w[i] * (g u)[i]` without materializing `g u`.
    pub(crate) fn weighted_sum(&self, w: &[f64], u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..w.len() {
            let v = u[self.perm[i]];
            acc += if self.sign[i] < 0 {
                -w[i] * v
            } else {
                w[i] * v
            };
        }
        acc
    }

    /// The element `self ∘ other`, i.e. `u -> self(other(u))`.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        let perm = self.perm.iter().map(|&p| other.perm[p]).collect();
        let sign = self
            .perm
            .iter()
            .zip(&self.sign)
            .map(|(&p, &s)| s * other.sign[p])
            .collect();
        GroupElement { perm, sign }
    }

    pub fn inverse(&self) -> GroupElement {
        let n = self.n();
        let mut perm = vec![0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            perm[p] = i;
        }
        let sign = perm.iter().map(|&q| self.sign[q]).collect();
        GroupElement { perm, sign }
    }

    /// Whether the element belongs to the group described by `kind`.
    pub fn belongs_to(&self, kind: &PrimitiveKind) -> bool {
        let n = self.n();
        if GroupElement::new(self.perm.clone(), self.sign.clone()).is_err() {
            return false;
        }
        let no_signs = self.sign.iter().all(|s| *s == 1);
        let is_identity_perm = self.perm.iter().enumerate().all(|(i, p)| i == *p);
        let within = |c: &Clustering| {
            (0..n).all(|i| match c.label_of(i) {
                Some(l) => c.label_of(self.perm[i]) == Some(l),
                None => self.perm[i] == i,
            })
        };
        let cluster_signs = |c: &Clustering| {
            (0..n).all(|i| match c.label_of(i) {
                Some(l) => self.sign[i] == self.sign[c.members()[l][0]],
                None => self.sign[i] == 1,
            })
        };
        match kind {
            PrimitiveKind::GlobalPerm => no_signs,
            PrimitiveKind::GlobalSign => is_identity_perm,
            PrimitiveKind::ClusterPerm(c) => c.n() == n && no_signs && within(c),
            PrimitiveKind::ClusterSign(c) => c.n() == n && is_identity_perm && cluster_signs(c),
            PrimitiveKind::Double(c) => c.n() == n && within(c) && cluster_signs(c),
            PrimitiveKind::TwoWayPerm(l) => l.n() == n && no_signs && self.induced_by_layout(l),
        }
    }

    fn induced_by_layout(&self, l: &TwoWayLayout) -> bool {
        let n = self.n();
        let rows = induced_map(
            n,
            l.row_count(),
            |i| l.row_of()[i],
            |i| l.row_of()[self.perm[i]],
        );
        let cols = induced_map(
            n,
            l.col_count(),
            |i| l.col_of()[i],
            |i| l.col_of()[self.perm[i]],
        );
        match l.shape() {
            LayoutShape::Grid => match (rows, cols) {
                (Some(rm), Some(cm)) => (0..n)
                    .all(|i| l.cell(rm[l.row_of()[i]], cm[l.col_of()[i]]) == Some(self.perm[i])),
                _ => false,
            },
            LayoutShape::Dyadic { directed: true } => match (rows, cols) {
                (Some(rm), Some(cm)) => rm == cm,
                _ => false,
            },
            LayoutShape::Dyadic { directed: false } => {
                if n == 1 {
                    return self.perm[0] == 0;
                }
                // Each node maps to the node shared by the images of its dyads.
                let m = l.row_count();
                let mut candidates: Vec<Option<Vec<usize>>> = vec![None; m];
                for i in 0..n {
                    let j = self.perm[i];
                    let image = [l.row_of()[j], l.col_of()[j]];
                    for a in [l.row_of()[i], l.col_of()[i]] {
                        let slot = candidates[a].get_or_insert_with(|| image.to_vec());
                        slot.retain(|v| image.contains(v));
                    }
                }
                let mut nodes = Vec::with_capacity(m);
                for c in candidates {
                    match c.as_deref() {
                        Some([v]) => nodes.push(*v),
                        Some([v, w]) if v == w => nodes.push(*v),
                        _ => return false,
                    }
                }
                let mut seen = vec![false; m];
                if nodes.iter().any(|&v| std::mem::replace(&mut seen[v], true)) {
                    return false;
                }
                (0..n).all(|i| {
                    l.dyad(nodes[l.row_of()[i]], nodes[l.col_of()[i]]) == Some(self.perm[i])
                })
            }
        }
    }
}

/// The label map `from(i) -> to(i)` induced by a permutation, when it is a
/// well-defined bijection.
fn induced_map(
    n: usize,
    labels: usize,
    from: impl Fn(usize) -> usize,
    to: impl Fn(usize) -> usize,
) -> Option<Vec<usize>> {
    let mut map = vec![None; labels];
    for i in 0..n {
        if *map[from(i)].get_or_insert(to(i)) != to(i) {
            return None;
        }
    }
    let map: Option<Vec<usize>> = map.into_iter().collect();
    let map = map?;
    let mut seen = vec![false; labels];
    if map.iter().any(|&v| std::mem::replace(&mut seen[v], true)) {
        return None;
    }
    Some(map)
}

/// Sample a uniform element of `kind` acting on vectors of length `n`.
pub fn sample_element<R: Rng + ?Sized>(
    kind: &PrimitiveKind,
    n: usize,
    rng: &mut R,
) -> Result<GroupElement> {
    kind.validate(n)?;
    let mut g = GroupElement::identity(n);
    kind.sample_into(n, &mut g, rng);
    Ok(g)
}

/// `out[i] = sign[i] * u[perm[i]]`.
pub fn apply_element(g: &GroupElement, u: &[f64]) -> Result<Vec<f64>> {
    g.apply(u)
}

/// Order of a finite group, saturating to `Large` above `i64::MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum GroupSize {
    Exact(u64),
    Large,
}

impl GroupSize {
    const LIMIT: u64 = i64::MAX as u64;

    fn mul(self, k: u64) -> GroupSize {
        match self {
            GroupSize::Exact(s) => match s.checked_mul(k) {
                Some(v) if v <= Self::LIMIT => GroupSize::Exact(v),
                _ => GroupSize::Large,
            },
            GroupSize::Large => GroupSize::Large,
        }
    }

    fn factorial(m: usize) -> GroupSize {
        (2..=m as u64).fold(GroupSize::Exact(1), |acc, k| acc.mul(k))
    }

    fn pow2(k: usize) -> GroupSize {
        if k >= 63 {
            GroupSize::Large
        } else {
            GroupSize::Exact(1u64 << k)
        }
    }

    fn times(self, other: GroupSize) -> GroupSize {
        match other {
            GroupSize::Exact(k) => self.mul(k),
            GroupSize::Large => GroupSize::Large,
        }
    }

    /// The exact size, if it fits.
    pub fn exact(self) -> Option<u64> {
        match self {
            GroupSize::Exact(v) => Some(v),
            GroupSize::Large => None,
        }
    }

    /// True when the group has at most `limit` elements.
    pub fn at_most(self, limit: u64) -> bool {
        matches!(self, GroupSize::Exact(v) if v <= limit)
    }
}

impl fmt::Display for GroupSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSize::Exact(v) => write!(f, "{v}"),
            GroupSize::Large => write!(f, "at least 2^63"),
        }
    }
}

/// Number of elements of the group `kind` acting on length-`n` vectors.
pub fn group_size(kind: &PrimitiveKind, n: usize) -> GroupSize {
    let perms_within = |c: &Clustering| {
        c.sizes().iter().fold(GroupSize::Exact(1), |acc, &m| {
            acc.times(GroupSize::factorial(m))
        })
    };
    match kind {
        PrimitiveKind::GlobalPerm => GroupSize::factorial(n),
        PrimitiveKind::GlobalSign => GroupSize::pow2(n),
        PrimitiveKind::ClusterPerm(c) => perms_within(c),
        PrimitiveKind::ClusterSign(c) => GroupSize::pow2(c.num_clusters()),
        PrimitiveKind::Double(c) => GroupSize::pow2(c.num_clusters()).times(perms_within(c)),
        PrimitiveKind::TwoWayPerm(l) => match l.shape() {
            LayoutShape::Grid => {
                GroupSize::factorial(l.row_count()).times(GroupSize::factorial(l.col_count()))
            }
            LayoutShape::Dyadic { .. } => GroupSize::factorial(l.row_count()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn global_sign_is_uniform_over_eight_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts: HashMap<Vec<i8>, usize> = HashMap::new();
        for _ in 0..8000 {
            let g = sample_element(&PrimitiveKind::GlobalSign, 3, &mut rng).unwrap();
            assert_eq!(g.perm, vec![0, 1, 2]);
            *counts.entry(g.sign).or_default() += 1;
        }
        assert_eq!(counts.len(), 8);
        for c in counts.values() {
            assert!((*c as f64 / 8000.0 - 0.125).abs() < 0.02);
        }
    }

    #[test]
    fn singleton_clusters_only_have_identity_permutation() {
        let kind = PrimitiveKind::ClusterPerm(Clustering::singletons(5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert!(sample_element(&kind, 5, &mut rng).unwrap().is_identity());
        }
    }

    #[test]
    fn double_hits_all_sixteen_elements_uniformly() {
        let kind = PrimitiveKind::Double(Clustering::from_labels(&[0, 0, 1, 1]).unwrap());
        let all = enumerate_elements(&kind, 4, 100).unwrap();
        assert_eq!(all.len(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts: HashMap<GroupElement, usize> = HashMap::new();
        for _ in 0..4000 {
            *counts
                .entry(sample_element(&kind, 4, &mut rng).unwrap())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 16);
        for g in &all {
            let f = counts[g] as f64 / 4000.0;
            assert!((f - 1.0 / 16.0).abs() < 0.03);
        }
    }

    #[test]
    fn apply_follows_definition() {
        let g = GroupElement::new(vec![2, 1, 0], vec![1, -1, 1]).unwrap();
        assert_eq!(g.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![3.0, -2.0, 1.0]);
        let id = GroupElement::identity(3);
        assert_eq!(id.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let neg = GroupElement::new(vec![0, 1, 2], vec![-1; 3]).unwrap();
        assert_eq!(neg.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![-1.0, 2.0, -3.0]);
        assert!(matches!(
            g.apply(&[1.0]),
            Err(Error::LayoutMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn group_sizes() {
        assert_eq!(
            group_size(&PrimitiveKind::GlobalSign, 10),
            GroupSize::Exact(1024)
        );
        assert_eq!(
            group_size(&PrimitiveKind::GlobalPerm, 3),
            GroupSize::Exact(6)
        );
        let grid: Vec<usize> = (0..16).collect();
        let l = layout_from_labels(
            &grid.iter().map(|i| i / 4).collect::<Vec<_>>(),
            &grid.iter().map(|i| i % 4).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(
            group_size(&PrimitiveKind::TwoWayPerm(l), 16),
            GroupSize::Exact(576)
        );
        let c = Clustering::from_labels(&[0, 0, 0, 1, 1, 1, 2, 2, 2]).unwrap();
        assert_eq!(
            group_size(&PrimitiveKind::ClusterPerm(c), 9),
            GroupSize::Exact(216)
        );
        assert_eq!(group_size(&PrimitiveKind::GlobalPerm, 30), GroupSize::Large);
        assert_eq!(
            group_size(&PrimitiveKind::GlobalPerm, 20),
            GroupSize::Exact(2432902008176640000)
        );
        assert_eq!(group_size(&PrimitiveKind::GlobalSign, 63), GroupSize::Large);
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let kind = PrimitiveKind::ClusterSign(Clustering::whole(4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_element(&kind, 5, &mut rng),
            Err(Error::LayoutMismatch {
                expected: 4,
                found: 5
            })
        ));
    }

    #[test]
    fn partial_clusterings_fix_unassigned_points() {
        let c = Clustering::from_members(6, vec![vec![1, 2, 3], vec![4]]).unwrap();
        let kind = PrimitiveKind::Double(c);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = sample_element(&kind, 6, &mut rng).unwrap();
            assert_eq!((g.perm[0], g.sign[0]), (0, 1));
            assert_eq!((g.perm[5], g.sign[5]), (5, 1));
            assert!(g.belongs_to(&kind));
        }
    }

    #[test]
    fn dyadic_elements_keep_dyads_on_dyads() {
        let m = 5;
        let (mut r, mut c) = (vec![], vec![]);
        for a in 0..m {
            for b in 0..a {
                r.push(a);
                c.push(b);
            }
        }
        let l = layout_from_labels(&r, &c).unwrap();
        let kind = PrimitiveKind::TwoWayPerm(l);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = sample_element(&kind, 10, &mut rng).unwrap();
            assert!(GroupElement::new(g.perm.clone(), g.sign.clone()).is_ok());
            assert!(g.belongs_to(&kind));
        }
    }
}
