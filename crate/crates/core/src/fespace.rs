//! Lagrangian Q1/Q2 spaces on the active meshes with hanging-node, aggregation
//! and Dirichlet constraints.
//!
//! Nodes are keyed on a lattice twice as fine as the finest admissible cell,
//! so Q2 mid-edge and centre nodes have integer coordinates. Scalar DOFs are
//! numbered `side offset + node · ncomp + comp`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::aggregation::RootMap;
use crate::cutgeom::{CellClass, CellTag};
use crate::geometry::{Point, Side, Vec2};
use crate::mesh::{CellId, Edge, QuadtreeMesh};

/// Node coordinates `(x, y)` on the doubled lattice.
pub type NodeKey = (u32, u32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeSpaceError {
    #[error("unsupported order {0} (expected 1 or 2)")]
    UnsupportedOrder(usize),
    #[error("constraint cycle through dof {0}")]
    Cycle(usize),
    #[error("ill-posed node at ({x}, {y}) lies {distance} from its root cell (h = {h})")]
    AggregateTooLarge { x: f64, y: f64, distance: f64, h: f64 },
    #[error("aggregated mode requires root maps")]
    MissingRootMaps,
    #[error("classification has {got} entries for {expected} leaves")]
    SizeMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Aggregated,
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DofClass {
    WellPosed,
    IllPosed,
    Hanging,
    Dirichlet,
}

/// `u_d = Σ coef · u_master + offset`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraint {
    pub masters: Vec<(usize, f64)>,
    pub offset: f64,
}

pub type ConstraintSet = BTreeMap<usize, Constraint>;

fn check_order(order: usize) -> Result<(), FeSpaceError> {
    if order == 1 || order == 2 {
        Ok(())
    } else {
        Err(FeSpaceError::UnsupportedOrder(order))
    }
}

/// 1D Lagrange values and derivatives on equispaced nodes of `[0, 1]`.
pub fn lagrange_1d(order: usize, t: f64) -> ([f64; 3], [f64; 3]) {
    match order {
        1 => ([1.0 - t, t, 0.0], [-1.0, 1.0, 0.0]),
        2 => (
            [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)],
            [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0],
        ),
        _ => panic!("unsupported order {order}"),
    }
}

pub fn nodes_per_cell(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Tensor Lagrange values at a reference point (may lie outside `[0,1]²`).
pub fn shape_values(order: usize, xi: [f64; 2]) -> Vec<f64> {
    let (lx, _) = lagrange_1d(order, xi[0]);
    let (ly, _) = lagrange_1d(order, xi[1]);
    let m = order + 1;
    let mut out = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            out.push(lx[i] * ly[j]);
        }
    }
    out
}

/// Reference gradients, same ordering as [`shape_values`].
pub fn shape_gradients(order: usize, xi: [f64; 2]) -> Vec<[f64; 2]> {
    let (lx, dx) = lagrange_1d(order, xi[0]);
    let (ly, dy) = lagrange_1d(order, xi[1]);
    let m = order + 1;
    let mut out = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            out.push([dx[i] * ly[j], lx[i] * dy[j]]);
        }
    }
    out
}

/// Physical basis values and gradients of the cell `[o, o + h]²` at `p`.
pub fn eval_basis(order: usize, origin: &Point, h: f64, p: &Point) -> (Vec<f64>, Vec<Vec2>) {
    let xi = [(p.x - origin.x) / h, (p.y - origin.y) / h];
    let v = shape_values(order, xi);
    let g = shape_gradients(order, xi)
        .into_iter()
        .map(|d| Vec2::new(d[0] / h, d[1] / h))
        .collect();
    (v, g)
}

/// Node keys of a cell in lexicographic local order `i + (q + 1) j`.
pub fn cell_node_keys(mesh: &QuadtreeMesh, c: &CellId, order: usize) -> Vec<NodeKey> {
    let span = 2 * mesh.lattice_span(c);
    let step = span / order as u32;
    let (x0, y0) = (2 * c.i * mesh.lattice_span(c), 2 * c.j * mesh.lattice_span(c));
    let mut out = Vec::with_capacity(nodes_per_cell(order));
    for b in 0..=order as u32 {
        for a in 0..=order as u32 {
            out.push((x0 + a * step, y0 + b * step));
        }
    }
    out
}

/// Substitutes constraint chains until every master is unconstrained.
/// Masters that resolve to Dirichlet data are folded into offsets.
pub fn close_constraints(raw: &ConstraintSet) -> Result<ConstraintSet, FeSpaceError> {
    fn resolve(
        d: usize,
        raw: &ConstraintSet,
        done: &mut ConstraintSet,
        visiting: &mut BTreeSet<usize>,
    ) -> Result<(), FeSpaceError> {
        if done.contains_key(&d) {
            return Ok(());
        }
        if !visiting.insert(d) {
            return Err(FeSpaceError::Cycle(d));
        }
        let c = &raw[&d];
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut offset = c.offset;
        for &(m, w) in &c.masters {
            if raw.contains_key(&m) {
                resolve(m, raw, done, visiting)?;
                let cm = &done[&m];
                offset += w * cm.offset;
                for &(mm, ww) in &cm.masters {
                    *acc.entry(mm).or_insert(0.0) += w * ww;
                }
            } else {
                *acc.entry(m).or_insert(0.0) += w;
            }
        }
        visiting.remove(&d);
        done.insert(
            d,
            Constraint {
                masters: acc.into_iter().filter(|(_, w)| *w != 0.0).collect(),
                offset,
            },
        );
        Ok(())
    }

    let mut done = ConstraintSet::new();
    let mut visiting = BTreeSet::new();
    for &d in raw.keys() {
        resolve(d, raw, &mut done, &mut visiting)?;
    }
    Ok(done)
}

/// Expansion of a scalar DOF in free-DOF coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expansion {
    pub terms: Vec<(usize, f64)>,
    pub offset: f64,
}

/// Cartesian product AgFE (or StdFE) space over both active meshes.
#[derive(Clone, Debug)]
pub struct FeSpace {
    order: usize,
    ncomp: usize,
    mode: Mode,
    origin: Point,
    unit: f64,
    nodes: [Vec<NodeKey>; 2],
    node_index: [HashMap<NodeKey, usize>; 2],
    classes: [Vec<DofClass>; 2],
    side_offset: [usize; 2],
    raw: ConstraintSet,
    closed: ConstraintSet,
    expansions: Vec<Expansion>,
    free_dofs: Vec<usize>,
}

/// Dirichlet data `g(side, x, component)` on `∂Ω`.
pub type DirichletFn<'a> = &'a dyn Fn(Side, &Point, usize) -> f64;

pub fn build_space(
    mesh: &QuadtreeMesh,
    classes: &[CellClass],
    roots: Option<&[RootMap; 2]>,
    order: usize,
    ncomp: usize,
    mode: Mode,
    dirichlet: DirichletFn,
) -> Result<FeSpace, FeSpaceError> {
    check_order(order)?;
    if classes.len() != mesh.num_leaves() {
        return Err(FeSpaceError::SizeMismatch {
            expected: mesh.num_leaves(),
            got: classes.len(),
        });
    }
    if mode == Mode::Aggregated && roots.is_none() {
        return Err(FeSpaceError::MissingRootMaps);
    }
    let extent = 2 * mesh.lattice_extent();
    let unit = mesh.domain().extent / extent as f64;
    let origin = mesh.domain().origin;
    let position = |k: &NodeKey| Point::new(origin.x + k.0 as f64 * unit, origin.y + k.1 as f64 * unit);

    let mut nodes: [Vec<NodeKey>; 2] = Default::default();
    let mut node_index: [HashMap<NodeKey, usize>; 2] = Default::default();
    let mut node_classes: [Vec<DofClass>; 2] = Default::default();
    let mut side_offset = [0usize; 2];
    let mut raw = ConstraintSet::new();

    for side in Side::BOTH {
        let s = side.index();
        // node → cells having it as a local node
        let mut node_cells: BTreeMap<NodeKey, Vec<CellId>> = BTreeMap::new();
        for (c, class) in mesh.leaves().iter().zip(classes) {
            if class.is_active(side) {
                for k in cell_node_keys(mesh, c, order) {
                    node_cells.entry(k).or_default().push(*c);
                }
            }
        }
        let tag_of = |c: &CellId| classes[mesh.leaf_index(c).unwrap()].tag(side);

        // hanging nodes: odd fine-edge positions along edges of active coarse cells
        let mut hanging: BTreeMap<NodeKey, Vec<(NodeKey, f64)>> = BTreeMap::new();
        for (c, class) in mesh.leaves().iter().zip(classes) {
            if !class.is_active(side) {
                continue;
            }
            let span = 2 * mesh.lattice_span(c);
            let (x0, y0) = (c.i * span, c.j * span);
            for edge in Edge::ALL {
                let finer = mesh.neighbors_across(c, edge).iter().any(|n| n.level > c.level);
                if !finer {
                    continue;
                }
                let along = |t_num: u32, t_den: u32| -> NodeKey {
                    let d = span * t_num / t_den;
                    match edge {
                        Edge::Left => (x0, y0 + d),
                        Edge::Right => (x0 + span, y0 + d),
                        Edge::Bottom => (x0 + d, y0),
                        Edge::Top => (x0 + d, y0 + span),
                    }
                };
                let q = order as u32;
                for m in (1..2 * q).step_by(2) {
                    let key = along(m, 2 * q);
                    if !node_cells.contains_key(&key) {
                        continue;
                    }
                    let (w, _) = lagrange_1d(order, m as f64 / (2 * q) as f64);
                    let masters = (0..=q).map(|k| (along(k, q), w[k as usize])).collect();
                    hanging.insert(key, masters);
                }
            }
        }

        let keys: Vec<NodeKey> = node_cells.keys().copied().collect();
        let index: HashMap<NodeKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let base: usize = side_offset[s];
        let dof = |k: &NodeKey, comp: usize| base + index[k] * ncomp + comp;
        let mut cls = Vec::with_capacity(keys.len());
        for k in &keys {
            let cells = &node_cells[k];
            let on_boundary = k.0 == 0 || k.1 == 0 || k.0 == extent || k.1 == extent;
            let class = if on_boundary {
                DofClass::Dirichlet
            } else if hanging.contains_key(k) {
                DofClass::Hanging
            } else if cells.iter().any(|c| tag_of(c) == CellTag::WellPosed) {
                DofClass::WellPosed
            } else {
                DofClass::IllPosed
            };
            cls.push(class);
            let x = position(k);
            match class {
                DofClass::Dirichlet => {
                    for comp in 0..ncomp {
                        raw.insert(
                            dof(k, comp),
                            Constraint {
                                masters: vec![],
                                offset: dirichlet(side, &x, comp),
                            },
                        );
                    }
                }
                DofClass::Hanging => {
                    for comp in 0..ncomp {
                        let masters = hanging[k].iter().map(|(m, w)| (dof(m, comp), *w)).collect();
                        raw.insert(dof(k, comp), Constraint { masters, offset: 0.0 });
                    }
                }
                DofClass::IllPosed if mode == Mode::Aggregated => {
                    let map = &roots.unwrap()[s];
                    let (_, _, root) = cells
                        .iter()
                        .map(|c| {
                            let r = map.root(c).expect("active cell without root");
                            ((mesh.centroid(&r) - x).norm(), *c, r)
                        })
                        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                        .unwrap();
                    let (o, h) = mesh.cell_box(&root);
                    let dx = (o.x - x.x).max(x.x - (o.x + h)).max(0.0);
                    let dy = (o.y - x.y).max(x.y - (o.y + h)).max(0.0);
                    let distance = dx.hypot(dy);
                    if distance > 10.0 * h {
                        return Err(FeSpaceError::AggregateTooLarge {
                            x: x.x,
                            y: x.y,
                            distance,
                            h,
                        });
                    }
                    let w = shape_values(order, [(x.x - o.x) / h, (x.y - o.y) / h]);
                    let root_keys = cell_node_keys(mesh, &root, order);
                    for comp in 0..ncomp {
                        let masters = root_keys.iter().zip(&w).map(|(m, wi)| (dof(m, comp), *wi)).collect();
                        raw.insert(dof(k, comp), Constraint { masters, offset: 0.0 });
                    }
                }
                _ => {}
            }
        }
        if s == 0 {
            side_offset[1] = keys.len() * ncomp;
        }
        nodes[s] = keys;
        node_index[s] = index;
        node_classes[s] = cls;
    }

    let closed = close_constraints(&raw)?;
    let n_dofs = side_offset[1] + nodes[1].len() * ncomp;

    // free DOFs ordered row by row across both subdomains to keep the bandwidth small
    let mut free: Vec<(u32, u32, usize, usize, usize)> = Vec::new();
    for side in Side::BOTH {
        let s = side.index();
        for (i, k) in nodes[s].iter().enumerate() {
            for comp in 0..ncomp {
                let d = side_offset[s] + i * ncomp + comp;
                if !closed.contains_key(&d) {
                    free.push((k.1, k.0, s, comp, d));
                }
            }
        }
    }
    free.sort_unstable();
    let free_dofs: Vec<usize> = free.iter().map(|t| t.4).collect();
    let mut free_index = vec![usize::MAX; n_dofs];
    for (i, d) in free_dofs.iter().enumerate() {
        free_index[*d] = i;
    }
    let expansions = (0..n_dofs)
        .map(|d| match closed.get(&d) {
            Some(c) => Expansion {
                terms: c.masters.iter().map(|(m, w)| (free_index[*m], *w)).collect(),
                offset: c.offset,
            },
            None => Expansion {
                terms: vec![(free_index[d], 1.0)],
                offset: 0.0,
            },
        })
        .collect();

    Ok(FeSpace {
        order,
        ncomp,
        mode,
        origin,
        unit,
        nodes,
        node_index,
        classes: node_classes,
        side_offset,
        raw,
        closed,
        expansions,
        free_dofs,
    })
}

impl FeSpace {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// All scalar DOFs, constrained ones included.
    pub fn n_dofs(&self) -> usize {
        self.expansions.len()
    }

    /// `|Σ_A^side|` (nodes).
    pub fn num_nodes(&self, side: Side) -> usize {
        self.nodes[side.index()].len()
    }

    pub fn node_keys(&self, side: Side) -> &[NodeKey] {
        &self.nodes[side.index()]
    }

    pub fn node_classes(&self, side: Side) -> &[DofClass] {
        &self.classes[side.index()]
    }

    pub fn node_position(&self, key: &NodeKey) -> Point {
        Point::new(
            self.origin.x + key.0 as f64 * self.unit,
            self.origin.y + key.1 as f64 * self.unit,
        )
    }

    pub fn dof(&self, side: Side, key: &NodeKey, comp: usize) -> Option<usize> {
        self.node_index[side.index()]
            .get(key)
            .map(|i| self.side_offset[side.index()] + i * self.ncomp + comp)
    }

    /// `(side, node key, component)` of a scalar DOF.
    pub fn dof_info(&self, d: usize) -> (Side, NodeKey, usize) {
        let side = if d < self.side_offset[1] { Side::Plus } else { Side::Minus };
        let local = d - self.side_offset[side.index()];
        (side, self.nodes[side.index()][local / self.ncomp], local % self.ncomp)
    }

    pub fn class_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for side in Side::BOTH {
            for c in &self.classes[side.index()] {
                let name = match c {
                    DofClass::WellPosed => "well_posed",
                    DofClass::IllPosed => "ill_posed",
                    DofClass::Hanging => "hanging",
                    DofClass::Dirichlet => "dirichlet",
                };
                *out.entry(name).or_insert(0) += self.ncomp;
            }
        }
        out
    }

    /// Scalar DOFs of `cell` on `side` in local order (node-major, component-minor).
    pub fn cell_dofs(&self, mesh: &QuadtreeMesh, cell: &CellId, side: Side) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(nodes_per_cell(self.order) * self.ncomp);
        for k in cell_node_keys(mesh, cell, self.order) {
            let base = self.dof(side, &k, 0)?;
            out.extend(base..base + self.ncomp);
        }
        Some(out)
    }

    pub fn raw_constraints(&self) -> &ConstraintSet {
        &self.raw
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.closed
    }

    pub fn expansion(&self, d: usize) -> &Expansion {
        &self.expansions[d]
    }

    /// Scalar DOF of each free index.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Values at every scalar DOF from free values (constraints and offsets applied).
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        self.expansions
            .iter()
            .map(|e| e.offset + e.terms.iter().map(|(i, w)| w * free[*i]).sum::<f64>())
            .collect()
    }

    /// Nodal interpolation of `f(side, x, comp)` at the free DOFs.
    pub fn interpolate_free(&self, f: &dyn Fn(Side, &Point, usize) -> f64) -> Vec<f64> {
        self.free_dofs
            .iter()
            .map(|d| {
                let (side, key, comp) = self.dof_info(*d);
                f(side, &self.node_position(&key), comp)
            })
            .collect()
    }
}
