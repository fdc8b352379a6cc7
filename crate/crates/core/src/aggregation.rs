//! Cell aggregation: every ill-posed active cell is attached to a well-posed root.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cutgeom::{CellClass, CellTag};
use crate::geometry::{Point, Side};
use crate::mesh::{CellId, QuadtreeMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("isolated ill-posed island in {side} (mesh too coarse?): {cells:?}")]
    IsolatedIsland { side: Side, cells: Vec<CellId> },
    #[error("classification has {got} entries for {expected} leaves")]
    SizeMismatch { expected: usize, got: usize },
}

/// Root map `R^α` of one subdomain.
#[derive(Clone, Debug, PartialEq)]
pub struct RootMap {
    side: Side,
    roots: BTreeMap<CellId, CellId>,
    aggregates: BTreeMap<CellId, Vec<CellId>>,
    sweeps: usize,
}

impl RootMap {
    pub fn side(&self) -> Side {
        self.side
    }

    /// Root of an active cell, `None` for inactive cells.
    pub fn root(&self, c: &CellId) -> Option<CellId> {
        self.roots.get(c).copied()
    }

    /// Every active cell with its root, in cell order.
    pub fn roots(&self) -> &BTreeMap<CellId, CellId> {
        &self.roots
    }

    /// Root → members (the root included), in cell order.
    pub fn aggregates(&self) -> &BTreeMap<CellId, Vec<CellId>> {
        &self.aggregates
    }

    pub fn num_sweeps(&self) -> usize {
        self.sweeps
    }
}

/// Builds `R^α` reading only the `side` tags of `classes` (one per leaf, in leaf order).
pub fn build_root_map(mesh: &QuadtreeMesh, classes: &[CellClass], side: Side) -> Result<RootMap, AggregationError> {
    build_root_map_with(mesh, classes, side, &|c| mesh.centroid(c))
}

/// As [`build_root_map`], measuring distances to roots at `root_centroid` (e.g. the centroid of
/// the root's physical part).
pub fn build_root_map_with(
    mesh: &QuadtreeMesh,
    classes: &[CellClass],
    side: Side,
    root_centroid: &dyn Fn(&CellId) -> Point,
) -> Result<RootMap, AggregationError> {
    if classes.len() != mesh.num_leaves() {
        return Err(AggregationError::SizeMismatch {
            expected: mesh.num_leaves(),
            got: classes.len(),
        });
    }
    let tag = |c: &CellId| mesh.leaf_index(c).map(|k| classes[k].tag(side));
    let mut roots = BTreeMap::new();
    let mut pending = Vec::new();
    for (c, class) in mesh.leaves().iter().zip(classes) {
        match class.tag(side) {
            CellTag::WellPosed => {
                roots.insert(*c, *c);
            }
            CellTag::IllPosed => pending.push(*c),
            CellTag::Exterior => {}
        }
    }

    let mut sweeps = 0;
    while !pending.is_empty() {
        sweeps += 1;
        let mut joined = Vec::new();
        let mut still = Vec::new();
        for c in &pending {
            let centre = mesh.centroid(c);
            let best = mesh
                .edge_neighbors(c)
                .into_iter()
                .filter(|(n, _)| tag(n).is_some_and(|t| t != CellTag::Exterior))
                .filter_map(|(n, _)| roots.get(&n).map(|r| (n, *r)))
                .map(|(n, r)| ((root_centroid(&r) - centre).norm(), n, r))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match best {
                Some((_, _, r)) => joined.push((*c, r)),
                None => still.push(*c),
            }
        }
        if joined.is_empty() {
            return Err(AggregationError::IsolatedIsland { side, cells: still });
        }
        // assignments become visible to the next sweep only
        roots.extend(joined);
        pending = still;
    }

    let mut aggregates: BTreeMap<CellId, Vec<CellId>> = BTreeMap::new();
    for (c, r) in &roots {
        aggregates.entry(*r).or_default().push(*c);
    }
    Ok(RootMap {
        side,
        roots,
        aggregates,
        sweeps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateStats {
    pub count: usize,
    pub max_members: usize,
    /// Largest bounding-box diagonal over `√2·h_root`.
    pub max_diameter_ratio: f64,
}

pub fn aggregate_diagnostics(map: &RootMap, mesh: &QuadtreeMesh) -> AggregateStats {
    let mut stats = AggregateStats {
        count: map.aggregates.len(),
        max_members: 0,
        max_diameter_ratio: 0.0,
    };
    for (root, members) in &map.aggregates {
        stats.max_members = stats.max_members.max(members.len());
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for m in members {
            let (o, h) = mesh.cell_box(m);
            lo = [lo[0].min(o.x), lo[1].min(o.y)];
            hi = [hi[0].max(o.x + h), hi[1].max(o.y + h)];
        }
        let diag = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
        let ratio = diag / (std::f64::consts::SQRT_2 * mesh.cell_size(root));
        stats.max_diameter_ratio = stats.max_diameter_ratio.max(ratio);
    }
    stats
}
