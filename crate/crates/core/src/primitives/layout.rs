use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linmodel::Dataset;

/// A partition of (a subset of) the datapoints into nonempty clusters.
///
/// Datapoints left unassigned are held fixed by every cluster transform;
/// full clusterings built from labels assign every index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Clustering {
    n: usize,
    assignment: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
}

impl Clustering {
    /// Builds a clustering from arbitrary labels, renumbered `0..J` in
    /// increasing label order.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("cluster labels"));
        }
        let distinct: BTreeSet<usize> = labels.iter().copied().collect();
        let index: HashMap<usize, usize> = distinct
            .into_iter()
            .enumerate()
            .map(|(k, l)| (l, k))
            .collect();
        let mut members = vec![Vec::new(); index.len()];
        let mut assignment = Vec::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            let c = index[l];
            members[c].push(i);
            assignment.push(Some(c));
        }
        Ok(Self {
            n: labels.len(),
            assignment,
            members,
        })
    }

    /// Builds a possibly partial clustering from explicit member lists.
    /// Lists must be nonempty, disjoint and inside `0..n`.
    pub fn from_members(n: usize, members: Vec<Vec<usize>>) -> Result<Self> {
        let mut assignment = vec![None; n];
        let mut members = members;
        for (c, m) in members.iter_mut().enumerate() {
            if m.is_empty() {
                return Err(Error::InvalidLabels(format!("cluster {c} is empty")));
            }
            m.sort_unstable();
            for &i in m.iter() {
                if i >= n {
                    return Err(Error::InvalidLabels(format!(
                        "index {i} out of range for n = {n}"
                    )));
                }
                if assignment[i].replace(c).is_some() {
                    return Err(Error::InvalidLabels(format!(
                        "index {i} is in two clusters"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            assignment,
            members,
        })
    }

    /// Every datapoint in one cluster.
    pub fn whole(n: usize) -> Self {
        Self::from_labels(&vec![0; n]).expect("n > 0")
    }

    /// Every datapoint in its own cluster.
    pub fn singletons(n: usize) -> Self {
        Self::from_labels(&(0..n).collect::<Vec<_>>()).expect("n > 0")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn label_of(&self, i: usize) -> Option<usize> {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    /// True when every datapoint belongs to some cluster.
    pub fn is_complete(&self) -> bool {
        self.assignment.iter().all(Option::is_some)
    }
}

/// Whether a two-way layout is a rectangular grid or a set of dyads on one
/// node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LayoutShape {
    /// Every (row, column) cell is occupied; rows and columns permute
    /// independently.
    Grid,
    /// Rows and columns index the same nodes and only some node pairs are
    /// observed; one node permutation acts on both coordinates.
    Dyadic { directed: bool },
}

/// Row and column cluster membership of every datapoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TwoWayLayout {
    row_of: Vec<usize>,
    col_of: Vec<usize>,
    replication_of: Vec<usize>,
    row_count: usize,
    col_count: usize,
    shape: LayoutShape,
    #[serde(skip)]
    cells: HashMap<(usize, usize), Vec<usize>>,
}

fn normalize(labels: &[usize], universe: &BTreeSet<usize>) -> Vec<usize> {
    let index: HashMap<usize, usize> = universe.iter().enumerate().map(|(k, l)| (*l, k)).collect();
    labels.iter().map(|l| index[l]).collect()
}

/// Builds a two-way layout from raw row and column labels.
///
/// A layout whose separately renumbered rows and columns fill the full grid
/// is a [`LayoutShape::Grid`]. Otherwise rows and columns are taken to label
/// the same nodes and are renumbered jointly, giving a dyadic layout.
/// Replication indices count repeated cells in input order.
pub fn layout_from_labels(row: &[usize], col: &[usize]) -> Result<TwoWayLayout> {
    if row.is_empty() || col.is_empty() {
        return Err(Error::EmptyInput("two-way labels"));
    }
    if row.len() != col.len() {
        return Err(Error::DimensionMismatch {
            what: "column labels",
            expected: row.len(),
            found: col.len(),
        });
    }
    let rows: BTreeSet<usize> = row.iter().copied().collect();
    let cols: BTreeSet<usize> = col.iter().copied().collect();
    let row_of = normalize(row, &rows);
    let col_of = normalize(col, &cols);
    let occupied: BTreeSet<(usize, usize)> =
        row_of.iter().copied().zip(col_of.iter().copied()).collect();

    let (row_of, col_of, row_count, col_count, shape) = if occupied.len() == rows.len() * cols.len()
    {
        (row_of, col_of, rows.len(), cols.len(), LayoutShape::Grid)
    } else {
        let nodes: BTreeSet<usize> = rows.union(&cols).copied().collect();
        let r = normalize(row, &nodes);
        let c = normalize(col, &nodes);
        let pairs: BTreeSet<(usize, usize)> = r.iter().copied().zip(c.iter().copied()).collect();
        let directed = pairs
            .iter()
            .any(|&(a, b)| a != b && pairs.contains(&(b, a)));
        let m = nodes.len();
        (r, c, m, m, LayoutShape::Dyadic { directed })
    };

    let mut cells: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut replication_of = Vec::with_capacity(row.len());
    for (i, key) in row_of
        .iter()
        .copied()
        .zip(col_of.iter().copied())
        .enumerate()
    {
        let entry = cells.entry(key).or_default();
        replication_of.push(entry.len());
        entry.push(i);
    }
    Ok(TwoWayLayout {
        row_of,
        col_of,
        replication_of,
        row_count,
        col_count,
        shape,
        cells,
    })
}

impl TwoWayLayout {
    pub fn n(&self) -> usize {
        self.row_of.len()
    }

    pub fn row_of(&self) -> &[usize] {
        &self.row_of
    }

    pub fn col_of(&self) -> &[usize] {
        &self.col_of
    }

    pub fn replication_of(&self) -> &[usize] {
        &self.replication_of
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn col_count(&self) -> usize {
        self.col_count
    }

    pub fn shape(&self) -> LayoutShape {
        self.shape
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    /// Datapoint stored in cell `(r, c)`, replication 0.
    pub(crate) fn cell(&self, r: usize, c: usize) -> Option<usize> {
        self.cells.get(&(r, c)).map(|v| v[0])
    }

    /// Datapoint for the node pair `(a, b)` of a dyadic layout, looking up
    /// the mirrored cell for undirected layouts.
    pub(crate) fn dyad(&self, a: usize, b: usize) -> Option<usize> {
        match self.shape {
            LayoutShape::Dyadic { directed: false } => self.cell(a, b).or_else(|| self.cell(b, a)),
            _ => self.cell(a, b),
        }
    }

    /// Checks that row/column permutations map the occupied cells onto
    /// themselves with one datapoint per cell.
    pub fn check_permutable(&self) -> Result<()> {
        for (&(r, c), v) in &self.cells {
            if v.len() > 1 {
                return Err(Error::ReplicatedCell {
                    row: r,
                    col: c,
                    count: v.len(),
                });
            }
        }
        if let LayoutShape::Dyadic { directed } = self.shape {
            let m = self.row_count;
            let diagonal = (0..m).filter(|&a| self.cell(a, a).is_some()).count();
            if diagonal != 0 && diagonal != m {
                return Err(Error::InvalidLabels(
                    "dyadic layout must contain all or none of the self-pairs".into(),
                ));
            }
            for a in 0..m {
                for b in 0..a {
                    let present = if directed {
                        self.cell(a, b).is_some() && self.cell(b, a).is_some()
                    } else {
                        let both = self.cell(a, b).is_some() && self.cell(b, a).is_some();
                        if both {
                            return Err(Error::ReplicatedCell {
                                row: a,
                                col: b,
                                count: 2,
                            });
                        }
                        self.dyad(a, b).is_some()
                    };
                    if !present {
                        return Err(Error::InvalidLabels(format!(
                            "dyadic layout is missing the pair ({a}, {b}); node permutations \
                             would map observed dyads onto unobserved ones"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Averages `y` and `X` within each occupied cell so that every cell holds
/// one observation, returning the averaged data and its layout.
pub fn average_cells(d: &Dataset, layout: &TwoWayLayout) -> Result<(Dataset, TwoWayLayout)> {
    if layout.n() != d.n() {
        return Err(Error::LayoutMismatch {
            expected: layout.n(),
            found: d.n(),
        });
    }
    let mut keys: Vec<(usize, usize)> = layout.cells.keys().copied().collect();
    keys.sort_unstable();
    let p = d.p();
    let mut y = DVector::zeros(keys.len());
    let mut x = DMatrix::zeros(keys.len(), p);
    for (k, key) in keys.iter().enumerate() {
        let idx = &layout.cells[key];
        let w = 1.0 / idx.len() as f64;
        for &i in idx {
            y[k] += w * d.y()[i];
            for j in 0..p {
                x[(k, j)] += w * d.x()[(i, j)];
            }
        }
    }
    let rows: Vec<usize> = keys.iter().map(|k| k.0).collect();
    let cols: Vec<usize> = keys.iter().map(|k| k.1).collect();
    let averaged = Dataset::new(y, x)?.with_two_way(rows.clone(), cols.clone())?;
    let new_layout = layout_from_labels(&rows, &cols)?;
    Ok((averaged, new_layout))
}
