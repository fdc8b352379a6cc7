//! Structural invariants of a discretization, each returning the first violation found.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;

use agfem::assembly::Beta;
use agfem::bench::{ManufacturedCase, Shape};
use agfem::cutgeom::CellTag;
use agfem::driver::{discretize, refine_coarse_ill_posed, Discrete, Settings};
use agfem::fespace::{build_space, close_constraints, ConstraintSet, DofClass, FeSpace, Mode};
use agfem::geometry::{
    circle_levelset, flower_levelset, halfplane_levelset, pacman_levelset, LevelSet, Point, Side, Vec2,
};
use agfem::mesh::{CellId, DomainBox, QuadtreeMesh, DEFAULT_MAX_LEVEL};

use super::{closure_fixpoint, dense_assemble};

/// Interface of a generated instance.
#[derive(Clone, Debug)]
pub enum Geometry {
    Circle { center: (f64, f64), radius: f64 },
    HalfPlane { angle: f64, offset: f64 },
    Flower,
    Pacman,
}

impl Geometry {
    pub fn levelset(&self) -> LevelSet {
        match self {
            Geometry::Circle { center, radius } => circle_levelset(Point::new(center.0, center.1), *radius),
            Geometry::HalfPlane { angle, offset } => halfplane_levelset(Vec2::new(angle.cos(), angle.sin()), *offset),
            Geometry::Flower => flower_levelset(Point::origin()),
            Geometry::Pacman => pacman_levelset(Point::new(0.5, 0.5), 0.3, (0.0, 1.5 * PI)),
        }
    }
}

/// A small randomisable problem instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub geometry: Geometry,
    pub elasticity: bool,
    pub order: usize,
    pub mode: Mode,
    pub contrast: f64,
    pub level: u8,
    /// Leaf positions (modulo the leaf count) refined once, producing hanging nodes.
    pub refine: Vec<usize>,
}

pub fn build(inst: &Instance) -> Result<(ManufacturedCase, Discrete), String> {
    let ls = inst.geometry.levelset();
    let case = if inst.elasticity {
        ManufacturedCase::disk_inclusion(inst.contrast, 1.0, 0.3)
    } else {
        ManufacturedCase::out_fe_space(inst.order, Shape::Circle, inst.contrast, 1.0)
    }
    .map_err(|e| e.to_string())?
    .with_interface(ls.clone());
    let settings = Settings {
        order: inst.order,
        mode: inst.mode,
        ..Settings::default()
    };
    let mut mesh = QuadtreeMesh::uniform(DomainBox::unit(), inst.level, DEFAULT_MAX_LEVEL).map_err(|e| e.to_string())?;
    if !inst.refine.is_empty() {
        let n = mesh.num_leaves();
        let marked: Vec<CellId> = inst.refine.iter().map(|k| mesh.leaves()[k % n]).collect();
        mesh = mesh.refine_and_coarsen(&marked, &[]).map_err(|e| e.to_string())?;
    }
    let mesh = refine_coarse_ill_posed(mesh, &ls, &settings).map_err(|e| e.to_string())?;
    let d = discretize(&case, mesh, &settings).map_err(|e| e.to_string())?;
    Ok((case, d))
}

/// Sub-triangle areas of every cut cell add up to the cell area; subdomain areas to the domain.
pub fn area_conservation(d: &Discrete) -> Result<(), String> {
    for (c, dec) in d.cut.cut_cells() {
        let h = d.mesh.cell_size(c);
        let total: f64 = dec.triangles().iter().map(|(t, _)| tri_area(t)).sum();
        if (total - h * h).abs() > 1e-12 * h * h {
            return Err(format!("cell {c}: sub-triangles cover {total:e}, cell has {:e}", h * h));
        }
        let sides = dec.area(Side::Plus) + dec.area(Side::Minus);
        if (sides - h * h).abs() > 1e-12 * h * h {
            return Err(format!("cell {c}: Ω⁺ + Ω⁻ parts cover {sides:e}, cell has {:e}", h * h));
        }
    }
    let whole = d.mesh.domain().area();
    let parts = d.cut.subdomain_area(&d.mesh, Side::Plus) + d.cut.subdomain_area(&d.mesh, Side::Minus);
    if (parts - whole).abs() > 1e-12 * whole {
        return Err(format!("subdomain areas sum to {parts:e}, domain has {whole:e}"));
    }
    Ok(())
}

fn tri_area(t: &[Point; 3]) -> f64 {
    0.5 * ((t[1].x - t[0].x) * (t[2].y - t[0].y) - (t[2].x - t[0].x) * (t[1].y - t[0].y)).abs()
}

fn node_class(space: &FeSpace, d: usize) -> DofClass {
    let (side, key, _) = space.dof_info(d);
    let k = space.node_keys(side).binary_search(&key).expect("node of a DOF");
    space.node_classes(side)[k]
}

/// Aggregation (and hanging) constraint rows have unit coefficient sums.
pub fn constraint_row_sums(space: &FeSpace) -> Result<(), String> {
    for (d, c) in space.raw_constraints() {
        if matches!(node_class(space, *d), DofClass::IllPosed | DofClass::Hanging) {
            let s: f64 = c.masters.iter().map(|(_, w)| w).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(format!("constraint row of DOF {d} sums to {s}"));
            }
        }
    }
    Ok(())
}

/// Every active cell has exactly one well-posed root and every aggregate is edge-connected.
pub fn aggregates_connected(d: &Discrete) -> Result<(), String> {
    let Some(maps) = &d.roots else {
        return Ok(());
    };
    let classes = d.cut.classes();
    for side in Side::BOTH {
        let map = &maps[side.index()];
        let active: BTreeSet<CellId> = d
            .mesh
            .leaves()
            .iter()
            .zip(classes)
            .filter(|(_, k)| k.is_active(side))
            .map(|(c, _)| *c)
            .collect();
        let rooted: BTreeSet<CellId> = map.roots().keys().copied().collect();
        if active != rooted {
            return Err(format!("{side}: root map does not cover exactly the active cells"));
        }
        let mut seen = BTreeSet::new();
        for (root, members) in map.aggregates() {
            let k = d.mesh.leaf_index(root).ok_or("root is not a leaf")?;
            if classes[k].tag(side) != CellTag::WellPosed || map.root(root) != Some(*root) {
                return Err(format!("{side}: root {root} is not a well-posed fixed point"));
            }
            let set: BTreeSet<CellId> = members.iter().copied().collect();
            for m in &set {
                if !seen.insert(*m) {
                    return Err(format!("{side}: cell {m} belongs to two aggregates"));
                }
            }
            let mut reached = BTreeSet::from([*root]);
            let mut queue = VecDeque::from([*root]);
            while let Some(c) = queue.pop_front() {
                for (n, _) in d.mesh.edge_neighbors(&c) {
                    if set.contains(&n) && reached.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
            if reached != set {
                return Err(format!("{side}: aggregate of {root} is not connected"));
            }
        }
    }
    Ok(())
}

fn as_maps(set: &ConstraintSet) -> BTreeMap<usize, (BTreeMap<usize, f64>, f64)> {
    set.iter()
        .map(|(d, c)| (*d, (c.masters.iter().copied().collect(), c.offset)))
        .collect()
}

fn same_constraints(a: &ConstraintSet, b: &ConstraintSet, tol: f64) -> Result<(), String> {
    let (a, b) = (as_maps(a), as_maps(b));
    if a.keys().ne(b.keys()) {
        return Err("constrained DOF sets differ".into());
    }
    for (d, (ma, oa)) in &a {
        let (mb, ob) = &b[d];
        if (oa - ob).abs() > tol * (1.0 + oa.abs()) {
            return Err(format!("DOF {d}: offsets {oa} vs {ob}"));
        }
        let keys: BTreeSet<&usize> = ma.keys().chain(mb.keys()).collect();
        for m in keys {
            let (x, y) = (ma.get(m).copied().unwrap_or(0.0), mb.get(m).copied().unwrap_or(0.0));
            if (x - y).abs() > tol {
                return Err(format!("DOF {d}, master {m}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

/// The closed constraints only reference free masters, match the fixpoint oracle and are
/// unchanged by closing again.
pub fn closure_idempotent_acyclic(space: &FeSpace) -> Result<(), String> {
    let closed = space.constraints();
    for (d, c) in closed {
        if let Some((m, _)) = c.masters.iter().find(|(m, _)| closed.contains_key(m)) {
            return Err(format!("closed row of DOF {d} still references constrained DOF {m}"));
        }
    }
    let oracle = closure_fixpoint(space.raw_constraints())?;
    same_constraints(closed, &oracle, 1e-12)?;
    let again = close_constraints(closed).map_err(|e| e.to_string())?;
    same_constraints(closed, &again, 0.0)
}

/// `n_free ≤ |Σ_A⁺| + |Σ_A⁻|`, the DOFs of the well-posed cells.
pub fn free_dof_bound(d: &Discrete) -> Result<(), String> {
    let space = &d.space;
    let mut bound = 0;
    for side in Side::BOTH {
        let mut nodes = BTreeSet::new();
        for (c, k) in d.mesh.leaves().iter().zip(d.cut.classes()) {
            if k.tag(side) == CellTag::WellPosed {
                nodes.extend(agfem::fespace::cell_node_keys(&d.mesh, c, space.order()));
            }
        }
        bound += nodes.len() * space.ncomp();
    }
    if space.n_free() > bound {
        return Err(format!("{} free DOFs exceed the bound {bound}", space.n_free()));
    }
    Ok(())
}

/// Largest entry-wise deviation of the sparse system from the dense oracle, relative to the
/// largest dense entry (matrix) and the largest right-hand side entry.
pub fn sparse_vs_dense(case: &ManufacturedCase, d: &Discrete) -> Result<(f64, f64), String> {
    let beta = |c: &CellId| match &d.beta {
        Beta::Fixed(b) => *b,
        Beta::PerCell { default, cells } => cells.get(c).copied().unwrap_or(*default),
    };
    let dense = dense_assemble(&d.mesh, &d.cut, &d.space, &case.material, &beta, case)?;
    let sparse = d.system.matrix.to_dense();
    let scale = dense.matrix.amax().max(f64::MIN_POSITIVE);
    let dm = (&sparse - &dense.matrix).amax() / scale;
    let bscale = dense.rhs.amax().max(f64::MIN_POSITIVE);
    let db = dense
        .rhs
        .iter()
        .zip(&d.system.rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / bscale;
    Ok((dm, db))
}

/// Tensor polynomial of degree `≤ order` per variable with the given coefficients.
pub fn tensor_poly(order: usize, coef: &[f64], p: &Point) -> f64 {
    let mut v = 0.0;
    let mut k = 0;
    for b in 0..=order {
        for a in 0..=order {
            v += coef[k] * p.x.powi(a as i32) * p.y.powi(b as i32);
            k += 1;
        }
    }
    v
}

/// Interpolating a `Q_q` polynomial at the free DOFs and expanding through the constraints
/// reproduces it at every DOF (well-posed, ill-posed, hanging, Dirichlet).
pub fn polynomial_reproduction(d: &Discrete, coef: &[Vec<f64>]) -> Result<f64, String> {
    let order = d.space.order();
    let ncomp = d.space.ncomp();
    let poly = |_: Side, p: &Point, comp: usize| tensor_poly(order, &coef[comp], p);
    let space = build_space(
        &d.mesh,
        d.cut.classes(),
        d.roots.as_ref(),
        order,
        ncomp,
        d.space.mode(),
        &poly,
    )
    .map_err(|e| e.to_string())?;
    let values = space.expand(&space.interpolate_free(&poly));
    let mut worst: f64 = 0.0;
    for (dof, v) in values.iter().enumerate() {
        let (side, key, comp) = space.dof_info(dof);
        let x = space.node_position(&key);
        let exact = poly(side, &x, comp);
        let err = (v - exact).abs() / (1.0 + exact.abs());
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(format!(
                "DOF {dof} ({side}, {:?}) at ({}, {}): {v} vs {exact}",
                node_class(&space, dof),
                x.x,
                x.y
            ));
        }
    }
    Ok(worst)
}
