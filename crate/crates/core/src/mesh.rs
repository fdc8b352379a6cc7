//! Single-tree quadtree background mesh over a square domain.
//!
//! Leaves are addressed by [`CellId`] and vertices by integer coordinates on the
//! `2^max_level` lattice, so coincident points always hash identically.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::geometry::Point;

pub const DEFAULT_MAX_LEVEL: u8 = 24;
/// Deepest level whose doubled DOF lattice still fits in `u32`.
pub const MAX_SUPPORTED_LEVEL: u8 = 29;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

impl CellId {
    pub const ROOT: CellId = CellId { level: 0, i: 0, j: 0 };

    pub fn new(level: u8, i: u32, j: u32) -> Self {
        CellId { level, i, j }
    }

    pub fn parent(&self) -> Option<CellId> {
        (self.level > 0).then(|| CellId::new(self.level - 1, self.i / 2, self.j / 2))
    }

    /// Children in lexicographic order `(0,0), (1,0), (0,1), (1,1)`.
    pub fn children(&self) -> [CellId; 4] {
        let (l, i, j) = (self.level + 1, 2 * self.i, 2 * self.j);
        [
            CellId::new(l, i, j),
            CellId::new(l, i + 1, j),
            CellId::new(l, i, j + 1),
            CellId::new(l, i + 1, j + 1),
        ]
    }

    pub fn ancestor(&self, level: u8) -> CellId {
        debug_assert!(level <= self.level);
        let s = self.level - level;
        CellId::new(level, self.i >> s, self.j >> s)
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}({},{})", self.level, self.i, self.j)
    }
}

/// Edge of a cell, named by the direction it faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];

    fn offset(self) -> (i64, i64) {
        match self {
            Edge::Left => (-1, 0),
            Edge::Right => (1, 0),
            Edge::Bottom => (0, -1),
            Edge::Top => (0, 1),
        }
    }

    pub fn opposite(self) -> Edge {
        match self {
            Edge::Left => Edge::Right,
            Edge::Right => Edge::Left,
            Edge::Bottom => Edge::Top,
            Edge::Top => Edge::Bottom,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainBox {
    pub origin: Point,
    pub extent: f64,
}

impl DomainBox {
    pub fn unit() -> Self {
        DomainBox {
            origin: Point::origin(),
            extent: 1.0,
        }
    }

    pub fn new(origin: Point, extent: f64) -> Self {
        assert!(extent > 0.0, "domain extent must be positive");
        DomainBox { origin, extent }
    }

    pub fn area(&self) -> f64 {
        self.extent * self.extent
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("refining cell {0} would exceed the maximum level")]
    MaxLevelExceeded(CellId),
    #[error("cell {0} is not a leaf of the mesh")]
    NotALeaf(CellId),
    #[error("cell {0} is requested for both refinement and coarsening")]
    ConflictingRequest(CellId),
    #[error("level {level} exceeds the maximum level {max_level}")]
    LevelTooDeep { level: u8, max_level: u8 },
}

#[derive(Clone, Debug)]
pub struct QuadtreeMesh {
    domain: DomainBox,
    max_level: u8,
    leaves: Vec<CellId>,
    index: HashMap<CellId, usize>,
    balanced: bool,
}

impl QuadtreeMesh {
    pub fn uniform(domain: DomainBox, level: u8, max_level: u8) -> Result<Self, MeshError> {
        if level > max_level || max_level > MAX_SUPPORTED_LEVEL {
            return Err(MeshError::LevelTooDeep { level, max_level });
        }
        let n = 1u32 << level;
        let leaves: Vec<CellId> = (0..n)
            .flat_map(|i| (0..n).map(move |j| CellId::new(level, i, j)))
            .collect();
        Ok(Self::from_leaves(domain, max_level, leaves))
    }

    fn from_leaves(domain: DomainBox, max_level: u8, leaves: impl IntoIterator<Item = CellId>) -> Self {
        let mut leaves: Vec<CellId> = leaves.into_iter().collect();
        leaves.sort_unstable();
        leaves.dedup();
        let index = leaves.iter().enumerate().map(|(k, c)| (*c, k)).collect();
        let mut mesh = QuadtreeMesh {
            domain,
            max_level,
            leaves,
            index,
            balanced: false,
        };
        mesh.balanced = mesh.is_balanced();
        mesh
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn max_level(&self) -> u8 {
        self.max_level
    }

    /// Leaves in `CellId` order.
    pub fn leaves(&self) -> &[CellId] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_leaf(&self, c: &CellId) -> bool {
        self.index.contains_key(c)
    }

    pub fn leaf_index(&self, c: &CellId) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn balance_flag(&self) -> bool {
        self.balanced
    }

    pub fn cell_size(&self, c: &CellId) -> f64 {
        self.domain.extent / (1u64 << c.level) as f64
    }

    /// Lower-left corner and side length.
    pub fn cell_box(&self, c: &CellId) -> (Point, f64) {
        let h = self.cell_size(c);
        (
            Point::new(self.domain.origin.x + c.i as f64 * h, self.domain.origin.y + c.j as f64 * h),
            h,
        )
    }

    pub fn centroid(&self, c: &CellId) -> Point {
        let (o, h) = self.cell_box(c);
        Point::new(o.x + 0.5 * h, o.y + 0.5 * h)
    }

    /// Number of lattice units spanned by a cell side.
    pub fn lattice_span(&self, c: &CellId) -> u32 {
        1u32 << (self.max_level - c.level)
    }

    pub fn lattice_extent(&self) -> u32 {
        1u32 << self.max_level
    }

    /// Vertices on the `2^max_level` lattice, ordered `(0,0), (1,0), (0,1), (1,1)`.
    pub fn vertex_lattice_coords(&self, c: &CellId) -> [(u32, u32); 4] {
        let s = self.lattice_span(c);
        let (x0, y0) = (c.i * s, c.j * s);
        [(x0, y0), (x0 + s, y0), (x0, y0 + s), (x0 + s, y0 + s)]
    }

    /// Leaf containing `p`; points on shared edges resolve to the upper/right cell.
    pub fn locate(&self, p: &Point) -> Option<CellId> {
        let ex = self.domain.extent;
        let u = (p.x - self.domain.origin.x) / ex;
        let v = (p.y - self.domain.origin.y) / ex;
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return None;
        }
        for level in 0..=self.max_level {
            let n = (1u64 << level) as f64;
            let i = ((u * n).floor() as u32).min((1u32 << level) - 1);
            let j = ((v * n).floor() as u32).min((1u32 << level) - 1);
            let c = CellId::new(level, i, j);
            if self.is_leaf(&c) {
                return Some(c);
            }
        }
        None
    }

    /// Leaves across `edge` of cell `c` (any cell id, not necessarily a leaf).
    pub fn neighbors_across(&self, c: &CellId, edge: Edge) -> Vec<CellId> {
        let (di, dj) = edge.offset();
        let n = 1i64 << c.level;
        let (ni, nj) = (c.i as i64 + di, c.j as i64 + dj);
        if ni < 0 || nj < 0 || ni >= n || nj >= n {
            return Vec::new();
        }
        let nb = CellId::new(c.level, ni as u32, nj as u32);
        if self.is_leaf(&nb) {
            return vec![nb];
        }
        for level in (0..c.level).rev() {
            let a = nb.ancestor(level);
            if self.is_leaf(&a) {
                return vec![a];
            }
        }
        let mut out = Vec::new();
        self.collect_facing(&nb, edge.opposite(), &mut out);
        out.sort_unstable();
        out
    }

    fn collect_facing(&self, c: &CellId, facing: Edge, out: &mut Vec<CellId>) {
        if self.is_leaf(c) {
            out.push(*c);
            return;
        }
        if c.level >= self.max_level {
            return;
        }
        let ch = c.children();
        let pair = match facing {
            Edge::Left => [ch[0], ch[2]],
            Edge::Right => [ch[1], ch[3]],
            Edge::Bottom => [ch[0], ch[1]],
            Edge::Top => [ch[2], ch[3]],
        };
        for k in pair {
            self.collect_facing(&k, facing, out);
        }
    }

    /// All leaves sharing a positive-length edge segment with leaf `c`.
    pub fn edge_neighbors(&self, c: &CellId) -> Vec<(CellId, Edge)> {
        Edge::ALL
            .iter()
            .flat_map(|&e| self.neighbors_across(c, e).into_iter().map(move |n| (n, e)))
            .collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.leaves.iter().all(|c| {
            Edge::ALL
                .iter()
                .all(|&e| self.neighbors_across(c, e).iter().all(|n| n.level + 1 >= c.level && c.level + 1 >= n.level))
        })
    }

    /// Refines and coarsens, then restores 2:1 balance by further refinement.
    ///
    /// Sibling quadruples in `coarsen` are merged only when the merged parent
    /// stays balanced against the refined mesh; incomplete quadruples are kept.
    pub fn refine_and_coarsen(&self, refine: &[CellId], coarsen: &[CellId]) -> Result<QuadtreeMesh, MeshError> {
        let refine_set: BTreeSet<CellId> = refine.iter().copied().collect();
        let coarsen_set: BTreeSet<CellId> = coarsen.iter().copied().collect();
        if let Some(c) = refine_set.intersection(&coarsen_set).next() {
            return Err(MeshError::ConflictingRequest(*c));
        }
        for c in refine_set.iter().chain(coarsen_set.iter()) {
            if !self.is_leaf(c) {
                return Err(MeshError::NotALeaf(*c));
            }
        }
        for c in &refine_set {
            if c.level >= self.max_level {
                return Err(MeshError::MaxLevelExceeded(*c));
            }
        }
        if refine_set.is_empty() && coarsen_set.is_empty() {
            return Ok(self.clone());
        }

        let mut leaves: BTreeSet<CellId> = self.leaves.iter().copied().collect();
        for c in &refine_set {
            leaves.remove(c);
            leaves.extend(c.children());
        }
        let mut mesh = Self::from_leaves(self.domain, self.max_level, leaves);
        mesh = mesh.balanced_closure();

        let mut parents: BTreeSet<CellId> = BTreeSet::new();
        for c in &coarsen_set {
            if let Some(p) = c.parent() {
                if p.children().iter().all(|k| coarsen_set.contains(k)) {
                    parents.insert(p);
                }
            }
        }
        let mut leaves: BTreeSet<CellId> = mesh.leaves.iter().copied().collect();
        let mut changed = false;
        for p in parents {
            if !p.children().iter().all(|k| leaves.contains(k)) {
                continue;
            }
            let ok = Edge::ALL
                .iter()
                .all(|&e| mesh.neighbors_across(&p, e).iter().all(|n| n.level <= p.level + 1));
            if ok {
                for k in p.children() {
                    leaves.remove(&k);
                }
                leaves.insert(p);
                mesh = Self::from_leaves(self.domain, self.max_level, leaves.iter().copied());
                changed = true;
            }
        }
        if changed {
            mesh = mesh.balanced_closure();
        }
        Ok(mesh)
    }

    /// Splits leaves until every pair of edge neighbours differs by at most one level.
    pub fn balanced_closure(&self) -> QuadtreeMesh {
        let mut mesh = self.clone();
        loop {
            let mut split: BTreeSet<CellId> = BTreeSet::new();
            for c in &mesh.leaves {
                for e in Edge::ALL {
                    for n in mesh.neighbors_across(c, e) {
                        if n.level + 1 < c.level {
                            split.insert(n);
                        }
                    }
                }
            }
            if split.is_empty() {
                mesh.balanced = true;
                return mesh;
            }
            let mut leaves: BTreeSet<CellId> = mesh.leaves.iter().copied().collect();
            for c in split {
                leaves.remove(&c);
                leaves.extend(c.children());
            }
            mesh = Self::from_leaves(self.domain, self.max_level, leaves);
        }
    }
}
