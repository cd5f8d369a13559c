use super::{
    dyad_perm, grid_perm, group_size, Clustering, GroupElement, LayoutShape, PrimitiveKind,
};
use crate::error::{Error, Result};

/// Rearranges `v` into the next permutation in lexicographic order; returns
/// false (leaving `v` sorted) after the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.reverse();
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Advances the odometer of block permutations, last block fastest.
fn advance(blocks: &mut [Vec<usize>]) -> bool {
    for b in blocks.iter_mut().rev() {
        if next_permutation(b) {
            return true;
        }
    }
    false
}

/// Lists every element of the group exactly once, identity first.
///
/// Sign patterns run in binary counting order (bit `k` set flips unit `k`)
/// and form the outer loop; permutations run in lexicographic order with the
/// first block most significant.
pub fn enumerate_elements(kind: &PrimitiveKind, n: usize, cap: u64) -> Result<Vec<GroupElement>> {
    kind.validate(n)?;
    let size = group_size(kind, n);
    if !size.at_most(cap) {
        return Err(Error::GroupTooLarge { size, cap });
    }
    let total = size.exact().expect("bounded by cap") as usize;

    // Sign units and permutation blocks, per kind.
    let (sign_units, mut blocks): (Vec<Vec<usize>>, Vec<Vec<usize>>) = match kind {
        PrimitiveKind::GlobalPerm => (vec![], vec![(0..n).collect()]),
        PrimitiveKind::GlobalSign => ((0..n).map(|i| vec![i]).collect(), vec![]),
        PrimitiveKind::ClusterPerm(c) => (vec![], identity_blocks(c)),
        PrimitiveKind::ClusterSign(c) => (c.members().to_vec(), vec![]),
        PrimitiveKind::Double(c) => (c.members().to_vec(), identity_blocks(c)),
        PrimitiveKind::TwoWayPerm(l) => match l.shape() {
            LayoutShape::Grid => (
                vec![],
                vec![(0..l.row_count()).collect(), (0..l.col_count()).collect()],
            ),
            LayoutShape::Dyadic { .. } => (vec![], vec![(0..l.row_count()).collect()]),
        },
    };

    let mut out = Vec::with_capacity(total);
    let sign_patterns: u64 = 1 << sign_units.len();
    for mask in 0..sign_patterns {
        for b in blocks.iter_mut() {
            b.sort_unstable();
        }
        loop {
            let mut g = GroupElement::identity(n);
            for (k, unit) in sign_units.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    for &i in unit {
                        g.sign[i] = -1;
                    }
                }
            }
            build_perm(kind, &blocks, &mut g.perm);
            out.push(g);
            if !advance(&mut blocks) {
                break;
            }
        }
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

/// Each cluster's positions, as the starting (identity) arrangement.
fn identity_blocks(c: &Clustering) -> Vec<Vec<usize>> {
    c.members().to_vec()
}

fn build_perm(kind: &PrimitiveKind, blocks: &[Vec<usize>], perm: &mut [usize]) {
    match kind {
        PrimitiveKind::GlobalSign | PrimitiveKind::ClusterSign(_) => {}
        PrimitiveKind::GlobalPerm => perm.copy_from_slice(&blocks[0]),
        PrimitiveKind::ClusterPerm(c) | PrimitiveKind::Double(c) => {
            // Blocks hold arrangements of each cluster's own positions.
            for (m, b) in c.members().iter().zip(blocks) {
                for (&pos, &src) in m.iter().zip(b) {
                    perm[pos] = src;
                }
            }
        }
        PrimitiveKind::TwoWayPerm(l) => match l.shape() {
            LayoutShape::Grid => grid_perm(l, &blocks[0], &blocks[1], perm),
            LayoutShape::Dyadic { .. } => dyad_perm(l, &blocks[0], perm),
        },
    }
}
