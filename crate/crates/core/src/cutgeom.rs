//! Cut-cell geometry: volume fractions, sub-triangulations, bulk and interface quadratures.
//!
//! Every leaf is sampled on a `(2^depth + 1)²` lattice. Sub-squares whose corner
//! signs differ are split by a straight segment between edge roots located by
//! bisection (marching squares); uniform blocks are kept as squares.

use std::collections::HashMap;

use log::warn;
use thiserror::Error;

use crate::geometry::{LevelSet, Point, Side, Smoothness, Vec2};
use crate::mesh::{CellId, QuadtreeMesh};
use crate::quadrature::{self, QuadratureRule, MAX_DEGREE};

pub const DEFAULT_ETA0: f64 = 0.25;
/// Volume fractions below this are treated as empty.
pub const EXTERIOR_TOL: f64 = 1e-12;
/// Bisection tolerance relative to the cell size.
const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutError {
    #[error("level set is not finite at ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("could not bracket a root on edge ({ax}, {ay}) - ({bx}, {by})")]
    NoRoot { ax: f64, ay: f64, bx: f64, by: f64 },
    #[error("quadrature degree {0} is not supported (max {MAX_DEGREE})")]
    UnsupportedDegree(usize),
    #[error("cell {0} is not a leaf")]
    UnknownCell(CellId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellTag {
    WellPosed,
    IllPosed,
    Exterior,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellClass {
    /// Volume fractions `[η⁺, η⁻]`.
    pub eta: [f64; 2],
    pub tags: [CellTag; 2],
}

impl CellClass {
    pub fn from_eta(eta: [f64; 2], eta0: f64) -> Self {
        let tag = |e: f64| {
            if e < EXTERIOR_TOL {
                CellTag::Exterior
            } else if e >= eta0 {
                CellTag::WellPosed
            } else {
                CellTag::IllPosed
            }
        };
        CellClass {
            eta,
            tags: [tag(eta[0]), tag(eta[1])],
        }
    }

    pub fn tag(&self, side: Side) -> CellTag {
        self.tags[side.index()]
    }

    pub fn eta(&self, side: Side) -> f64 {
        self.eta[side.index()]
    }

    pub fn is_active(&self, side: Side) -> bool {
        self.tag(side) != CellTag::Exterior
    }

    pub fn is_well_posed(&self, side: Side) -> bool {
        self.tag(side) == CellTag::WellPosed
    }

    pub fn is_cut(&self) -> bool {
        self.is_active(Side::Plus) && self.is_active(Side::Minus)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Piece {
    Triangle([Point; 3]),
    Square { origin: Point, h: f64 },
}

impl Piece {
    pub fn area(&self) -> f64 {
        match self {
            Piece::Triangle(v) => triangle_area(v),
            Piece::Square { h, .. } => h * h,
        }
    }

    pub fn triangles(&self) -> Vec<[Point; 3]> {
        match self {
            Piece::Triangle(v) => vec![*v],
            Piece::Square { origin: o, h } => {
                let p = [
                    *o,
                    Point::new(o.x + h, o.y),
                    Point::new(o.x + h, o.y + h),
                    Point::new(o.x, o.y + h),
                ];
                vec![[p[0], p[1], p[2]], [p[0], p[2], p[3]]]
            }
        }
    }
}

fn triangle_area(v: &[Point; 3]) -> f64 {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    0.5 * (e1.x * e2.y - e1.y * e2.x).abs()
}

/// Straight piece of the discrete interface inside one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceSegment {
    pub a: Point,
    pub b: Point,
    /// Unit normal pointing from `Ω⁺` into `Ω⁻`.
    pub normal: Vec2,
    pub cell: CellId,
}

impl InterfaceSegment {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Decomposition of one cell into labelled pieces.
#[derive(Clone, Debug, Default)]
pub struct CellDecomposition {
    pub pieces: Vec<(Piece, Side)>,
    /// `(a, b, n⁺)` per segment.
    pub segments: Vec<(Point, Point, Vec2)>,
    pub eta: [f64; 2],
    /// Set when the part of the cell on a side looks disconnected.
    pub disconnected: [bool; 2],
}

impl CellDecomposition {
    pub fn area(&self, side: Side) -> f64 {
        self.pieces.iter().filter(|(_, s)| *s == side).map(|(p, _)| p.area()).sum()
    }

    /// Centroid of the part on `side`, `None` if it has no area.
    pub fn centroid(&self, side: Side) -> Option<Point> {
        let mut area = 0.0;
        let mut m = Vec2::zeros();
        for (t, s) in self.triangles() {
            if s != side {
                continue;
            }
            let a = triangle_area(&t);
            area += a;
            m += a * (t[0].coords + t[1].coords + t[2].coords) / 3.0;
        }
        (area > 0.0).then(|| Point::from(m / area))
    }

    /// Pieces expanded into triangles.
    pub fn triangles(&self) -> Vec<([Point; 3], Side)> {
        self.pieces
            .iter()
            .flat_map(|(p, s)| p.triangles().into_iter().map(move |t| (t, *s)))
            .collect()
    }

    pub fn is_cut(&self) -> bool {
        !self.segments.is_empty() || (self.eta[0] > 0.0 && self.eta[1] > 0.0)
    }
}

struct Sampler<'a> {
    ls: &'a LevelSet,
    origin: Point,
    h: f64,
}

impl Sampler<'_> {
    fn value(&self, p: &Point) -> Result<f64, CutError> {
        let v = self.ls.value(p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CutError::NonFinite { x: p.x, y: p.y })
        }
    }

    fn root(&self, a: Point, va: f64, b: Point, vb: f64) -> Result<Point, CutError> {
        if va == 0.0 {
            return Ok(a);
        }
        if vb == 0.0 {
            return Ok(b);
        }
        let (sa, sb) = (Side::of_value(va), Side::of_value(vb));
        if sa == sb {
            return Err(CutError::NoRoot {
                ax: a.x,
                ay: a.y,
                bx: b.x,
                by: b.y,
            });
        }
        let tol = ROOT_TOL * self.h;
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            if (hi - lo).norm() <= tol {
                break;
            }
            let mid = Point::from((lo.coords + hi.coords) * 0.5);
            let vm = self.value(&mid)?;
            if vm == 0.0 {
                return Ok(mid);
            }
            if Side::of_value(vm) == sa {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Point::from((lo.coords + hi.coords) * 0.5))
    }
}

/// Decomposes the square `[origin, origin + h]²` against `ls`.
pub fn subtriangulate(origin: &Point, h: f64, ls: &LevelSet, depth: u32) -> Result<CellDecomposition, CutError> {
    let n = 1usize << depth;
    let s = h / n as f64;
    let sampler = Sampler { ls, origin: *origin, h };
    let at = |a: usize, b: usize| Point::new(origin.x + a as f64 * s, origin.y + b as f64 * s);
    let mut vals = Vec::with_capacity((n + 1) * (n + 1));
    for b in 0..=n {
        for a in 0..=n {
            vals.push(sampler.value(&at(a, b))?);
        }
    }
    let side_at = |a: usize, b: usize| Side::of_value(vals[b * (n + 1) + a]);

    let mut out = CellDecomposition::default();
    let first = side_at(0, 0);
    let uniform = (0..=n).all(|b| (0..=n).all(|a| side_at(a, b) == first));
    if uniform {
        out.pieces.push((Piece::Square { origin: *origin, h }, first));
        out.eta[first.index()] = 1.0;
        return Ok(out);
    }

    let mut ctx = Marcher {
        sampler: &sampler,
        vals: &vals,
        n,
        s,
        out: &mut out,
    };
    ctx.block(0, 0, n)?;
    let area = h * h;
    out.eta = [out.area(Side::Plus) / area, out.area(Side::Minus) / area];
    out.disconnected = [
        looks_disconnected(&vals, n, Side::Plus),
        looks_disconnected(&vals, n, Side::Minus),
    ];
    let _ = sampler.origin;
    Ok(out)
}

struct Marcher<'a, 'b> {
    sampler: &'a Sampler<'b>,
    vals: &'a [f64],
    n: usize,
    s: f64,
    out: &'a mut CellDecomposition,
}

enum Item {
    Corner(usize),
    Root(Point),
}

impl Marcher<'_, '_> {
    fn val(&self, a: usize, b: usize) -> f64 {
        self.vals[b * (self.n + 1) + a]
    }

    fn point(&self, a: usize, b: usize) -> Point {
        let o = self.sampler.origin;
        Point::new(o.x + a as f64 * self.s, o.y + b as f64 * self.s)
    }

    fn block(&mut self, a0: usize, b0: usize, size: usize) -> Result<(), CutError> {
        let first = Side::of_value(self.val(a0, b0));
        let uniform = (b0..=b0 + size).all(|b| (a0..=a0 + size).all(|a| Side::of_value(self.val(a, b)) == first));
        if uniform {
            self.out.pieces.push((
                Piece::Square {
                    origin: self.point(a0, b0),
                    h: size as f64 * self.s,
                },
                first,
            ));
            return Ok(());
        }
        if size == 1 {
            return self.march(a0, b0);
        }
        let half = size / 2;
        for (da, db) in [(0, 0), (half, 0), (0, half), (half, half)] {
            self.block(a0 + da, b0 + db, half)?;
        }
        Ok(())
    }

    fn march(&mut self, a: usize, b: usize) -> Result<(), CutError> {
        // counter-clockwise corners
        let idx = [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)];
        let p: Vec<Point> = idx.iter().map(|&(i, j)| self.point(i, j)).collect();
        let v: Vec<f64> = idx.iter().map(|&(i, j)| self.val(i, j)).collect();
        let sd: Vec<Side> = v.iter().map(|&x| Side::of_value(x)).collect();
        let mut roots: [Option<Point>; 4] = [None; 4];
        for k in 0..4 {
            let k1 = (k + 1) % 4;
            if sd[k] != sd[k1] {
                roots[k] = Some(self.sampler.root(p[k], v[k], p[k1], v[k1])?);
            }
        }
        let n_roots = roots.iter().filter(|r| r.is_some()).count();
        let minus_ref = || {
            let pts: Vec<&Point> = (0..4).filter(|&k| sd[k] == Side::Minus).map(|k| &p[k]).collect();
            let c = pts.iter().fold(Vec2::zeros(), |acc, q| acc + q.coords) / pts.len() as f64;
            Point::from(c)
        };

        if n_roots == 2 {
            let mut loop_items = Vec::with_capacity(6);
            for k in 0..4 {
                loop_items.push(Item::Corner(k));
                if let Some(r) = roots[k] {
                    loop_items.push(Item::Root(r));
                }
            }
            for side in Side::BOTH {
                let poly: Vec<Point> = loop_items
                    .iter()
                    .filter_map(|it| match it {
                        Item::Corner(k) if sd[*k] == side => Some(p[*k]),
                        Item::Root(r) => Some(*r),
                        _ => None,
                    })
                    .collect();
                self.fan(&poly, side);
            }
            let rs: Vec<Point> = roots.iter().flatten().copied().collect();
            self.segment(rs[0], rs[1], minus_ref(), true);
            return Ok(());
        }

        // saddle: opposite corners agree; the centre sample decides connectivity
        debug_assert_eq!(n_roots, 4);
        let centre = Point::from((p[0].coords + p[2].coords) * 0.5);
        let centre_side = Side::of_value(self.sampler.value(&centre)?);
        let r: Vec<Point> = roots.iter().map(|x| x.unwrap()).collect();
        let mut hexagon = Vec::with_capacity(6);
        for k in 0..4 {
            let prev = r[(k + 3) % 4];
            let next = r[k];
            if sd[k] != centre_side {
                self.fan(&[prev, p[k], next], sd[k]);
                self.segment(prev, next, p[k], sd[k] == Side::Minus);
            } else {
                hexagon.push(p[k]);
            }
            hexagon.push(next);
        }
        self.fan(&hexagon, centre_side);
        Ok(())
    }

    fn fan(&mut self, poly: &[Point], side: Side) {
        let min_area = 1e-16 * self.s * self.s;
        for k in 1..poly.len().saturating_sub(1) {
            let t = [poly[0], poly[k], poly[k + 1]];
            if triangle_area(&t) > min_area {
                self.out.pieces.push((Piece::Triangle(t), side));
            }
        }
    }

    /// Adds a segment whose normal points towards `reference` when `towards` holds.
    fn segment(&mut self, a: Point, b: Point, reference: Point, towards: bool) {
        let d = b - a;
        let len = d.norm();
        if len <= 1e-14 * self.s {
            return;
        }
        let mut n = Vec2::new(d.y, -d.x) / len;
        let mid = Point::from((a.coords + b.coords) * 0.5);
        let facing = n.dot(&(reference - mid)) > 0.0;
        if facing != towards {
            n = -n;
        }
        self.out.segments.push((a, b, n));
    }
}

/// Union-find over sub-squares touching `side`, joined through sub-edges
/// with at least one corner on that side.
fn looks_disconnected(vals: &[f64], n: usize, side: Side) -> bool {
    let sd = |a: usize, b: usize| Side::of_value(vals[b * (n + 1) + a]);
    let has = |a: usize, b: usize| {
        [(a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1)]
            .iter()
            .any(|&(i, j)| sd(i, j) == side)
    };
    let mut parent: Vec<usize> = (0..n * n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut y = x;
        while parent[y] != r {
            let nx = parent[y];
            parent[y] = r;
            y = nx;
        }
        r
    }
    for b in 0..n {
        for a in 0..n {
            if !has(a, b) {
                continue;
            }
            if a + 1 < n && has(a + 1, b) && (sd(a + 1, b) == side || sd(a + 1, b + 1) == side) {
                let (x, y) = (find(&mut parent, b * n + a), find(&mut parent, b * n + a + 1));
                parent[x] = y;
            }
            if b + 1 < n && has(a, b + 1) && (sd(a, b + 1) == side || sd(a + 1, b + 1) == side) {
                let (x, y) = (find(&mut parent, b * n + a), find(&mut parent, (b + 1) * n + a));
                parent[x] = y;
            }
        }
    }
    let mut roots = std::collections::BTreeSet::new();
    for b in 0..n {
        for a in 0..n {
            if has(a, b) {
                roots.insert(find(&mut parent, b * n + a));
            }
        }
    }
    roots.len() > 1
}

/// Default sub-division depth for a level set.
pub fn default_depth(ls: &LevelSet) -> u32 {
    match ls.smoothness() {
        Smoothness::Smooth => 2,
        Smoothness::PiecewiseSmooth => 4,
    }
}

/// A quadrature point on the discrete interface with the cells providing each trace.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfacePoint {
    pub point: Point,
    pub weight: f64,
    pub normal: Vec2,
    /// `max(h_{T⁺}, h_{T⁻})`.
    pub h: f64,
    /// Cells `[T⁺, T⁻]` whose basis functions give the traces.
    pub cells: [CellId; 2],
    pub parent: CellId,
}

/// Classification and decomposition of every leaf.
#[derive(Clone, Debug)]
pub struct CutGeometry {
    eta0: f64,
    depth: u32,
    classes: Vec<CellClass>,
    decomps: HashMap<CellId, CellDecomposition>,
    segments: Vec<InterfaceSegment>,
}

/// Classifies every leaf of `mesh` against `ls` with well-posedness threshold `eta0`.
pub fn classify_cells(mesh: &QuadtreeMesh, ls: &LevelSet, eta0: f64, depth: u32) -> Result<CutGeometry, CutError> {
    assert!(eta0 > 0.0 && eta0 <= 1.0, "eta0 must lie in (0, 1]");
    let mut classes = Vec::with_capacity(mesh.num_leaves());
    let mut decomps = HashMap::new();
    let mut segments = Vec::new();
    let mut warned = 0usize;
    for c in mesh.leaves() {
        let (o, h) = mesh.cell_box(c);
        let d = subtriangulate(&o, h, ls, depth)?;
        classes.push(CellClass::from_eta(d.eta, eta0));
        if d.is_cut() {
            if d.disconnected.iter().any(|&x| x) {
                warned += 1;
                if warned <= 5 {
                    warn!("cell {c} has a disconnected intersection with one subdomain; not replicated");
                }
            }
            for (a, b, n) in &d.segments {
                segments.push(InterfaceSegment {
                    a: *a,
                    b: *b,
                    normal: *n,
                    cell: *c,
                });
            }
            decomps.insert(*c, d);
        }
    }
    if warned > 5 {
        warn!("{warned} cells with disconnected intersections in total");
    }
    Ok(CutGeometry {
        eta0,
        depth,
        classes,
        decomps,
        segments,
    })
}

impl CutGeometry {
    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Classes in mesh-leaf order.
    pub fn classes(&self) -> &[CellClass] {
        &self.classes
    }

    pub fn class_of(&self, mesh: &QuadtreeMesh, c: &CellId) -> Option<&CellClass> {
        mesh.leaf_index(c).map(|k| &self.classes[k])
    }

    pub fn decomposition(&self, c: &CellId) -> Option<&CellDecomposition> {
        self.decomps.get(c)
    }

    /// Centroid of `Ω^side ∩ T` (the cell centroid for uncut cells).
    pub fn physical_centroid(&self, mesh: &QuadtreeMesh, c: &CellId, side: Side) -> Point {
        self.decomps
            .get(c)
            .and_then(|d| d.centroid(side))
            .unwrap_or_else(|| mesh.centroid(c))
    }

    pub fn cut_cells(&self) -> impl Iterator<Item = (&CellId, &CellDecomposition)> {
        self.decomps.iter()
    }

    pub fn segments(&self) -> &[InterfaceSegment] {
        &self.segments
    }

    pub fn interface_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length()).sum()
    }

    /// Measure of `Ω^side` as represented by the decomposition.
    pub fn subdomain_area(&self, mesh: &QuadtreeMesh, side: Side) -> f64 {
        mesh.leaves()
            .iter()
            .zip(&self.classes)
            .map(|(c, k)| k.eta(side) * mesh.cell_size(c).powi(2))
            .sum()
    }

    /// Rule over `cell ∩ Ω^side`; empty for exterior cells.
    pub fn bulk_quadrature(
        &self,
        mesh: &QuadtreeMesh,
        cell: &CellId,
        side: Side,
        degree: usize,
    ) -> Result<QuadratureRule, CutError> {
        if degree > MAX_DEGREE {
            return Err(CutError::UnsupportedDegree(degree));
        }
        let k = mesh.leaf_index(cell).ok_or(CutError::UnknownCell(*cell))?;
        let class = &self.classes[k];
        if !class.is_active(side) {
            return Ok(QuadratureRule::default());
        }
        match self.decomps.get(cell) {
            None => {
                let (o, h) = mesh.cell_box(cell);
                Ok(quadrature::square_rule(&o, h, degree))
            }
            Some(d) => Ok(pieces_rule(d, side, degree)),
        }
    }

    /// Gauss points on every interface segment with trace cells resolved.
    pub fn interface_quadrature(&self, mesh: &QuadtreeMesh, degree: usize) -> Result<Vec<InterfacePoint>, CutError> {
        if degree > MAX_DEGREE {
            return Err(CutError::UnsupportedDegree(degree));
        }
        let mut out = Vec::new();
        let mut dropped = 0usize;
        for seg in &self.segments {
            let rule = quadrature::segment_rule(&seg.a, &seg.b, degree);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let plus = self.trace_cell(mesh, seg, p, Side::Plus);
                let minus = self.trace_cell(mesh, seg, p, Side::Minus);
                match (plus, minus) {
                    (Some(cp), Some(cm)) => out.push(InterfacePoint {
                        point: *p,
                        weight: *w,
                        normal: seg.normal,
                        h: mesh.cell_size(&cp).max(mesh.cell_size(&cm)),
                        cells: [cp, cm],
                        parent: seg.cell,
                    }),
                    _ => dropped += 1,
                }
            }
        }
        if dropped > 0 {
            warn!("{dropped} interface quadrature points without an active cell on one side were dropped");
        }
        Ok(out)
    }

    /// Cell providing the `side` trace at `p`: the parent when active there,
    /// otherwise the leaf just across the segment.
    fn trace_cell(&self, mesh: &QuadtreeMesh, seg: &InterfaceSegment, p: &Point, side: Side) -> Option<CellId> {
        let k = mesh.leaf_index(&seg.cell)?;
        if self.classes[k].is_active(side) {
            return Some(seg.cell);
        }
        let h = mesh.cell_size(&seg.cell);
        // n⁺ points into Ω⁻
        let dir = match side {
            Side::Plus => -seg.normal,
            Side::Minus => seg.normal,
        };
        for scale in [1e-6, 1e-3] {
            let q = p + dir * (scale * h);
            if let Some(c) = mesh.locate(&q) {
                if c != seg.cell {
                    let kc = mesh.leaf_index(&c)?;
                    if self.classes[kc].is_active(side) {
                        return Some(c);
                    }
                }
            }
        }
        None
    }
}

fn pieces_rule(d: &CellDecomposition, side: Side, degree: usize) -> QuadratureRule {
    let tri_ref = quadrature::reference_triangle_rule(degree);
    let mut rule = QuadratureRule::default();
    for (piece, s) in &d.pieces {
        if *s != side {
            continue;
        }
        match piece {
            Piece::Triangle(v) => quadrature::push_triangle(&mut rule, v, &tri_ref),
            Piece::Square { origin, h } => rule.extend(&quadrature::square_rule(origin, *h, degree)),
        }
    }
    rule
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{circle_levelset, halfplane_levelset};
    use crate::mesh::{DomainBox, DEFAULT_MAX_LEVEL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_mesh(level: u8) -> QuadtreeMesh {
        QuadtreeMesh::uniform(DomainBox::unit(), level, DEFAULT_MAX_LEVEL).unwrap()
    }

    #[test]
    fn uncut_cell_two_triangles() {
        let ls = halfplane_levelset(Vec2::new(1.0, 0.0), 5.0);
        let d = subtriangulate(&Point::origin(), 1.0, &ls, 2).unwrap();
        let tris = d.triangles();
        assert_eq!(tris.len(), 2);
        assert!(tris.iter().all(|(_, s)| *s == Side::Minus));
        assert_eq!(d.eta, [0.0, 1.0]);
        assert!(d.segments.is_empty());
    }

    #[test]
    fn diagonal_cut_through_corners() {
        let ls = halfplane_levelset(Vec2::new(1.0, 1.0), 1.0 / 2f64.sqrt());
        let d = subtriangulate(&Point::origin(), 1.0, &ls, 0).unwrap();
        assert!((d.area(Side::Plus) - 0.5).abs() < 1e-12);
        assert!((d.area(Side::Minus) - 0.5).abs() < 1e-12);
        assert_eq!(d.segments.len(), 1);
        let (a, b, n) = d.segments[0];
        assert!(((b - a).norm() - 2f64.sqrt()).abs() < 1e-12);
        // Ω⁻ is towards the origin
        assert!(n.x < 0.0 && n.y < 0.0);
    }

    #[test]
    fn halfplane_classification() {
        let mesh = unit_mesh(0);
        // Ω⁺ = {x > 0.5}
        let cg = classify_cells(&mesh, &halfplane_levelset(Vec2::new(1.0, 0.0), 0.5), 0.25, 2).unwrap();
        let k = cg.classes()[0];
        assert!((k.eta[0] - 0.5).abs() < 1e-12 && (k.eta[1] - 0.5).abs() < 1e-12);
        assert_eq!(k.tags, [CellTag::WellPosed, CellTag::WellPosed]);
        let seg = &cg.segments()[0..];
        let total: f64 = seg.iter().map(|s| s.length()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for s in seg {
            assert!((s.normal - Vec2::new(-1.0, 0.0)).norm() < 1e-12);
        }

        let cg = classify_cells(&mesh, &halfplane_levelset(Vec2::new(1.0, 0.0), 0.9), 0.25, 2).unwrap();
        let k = cg.classes()[0];
        assert!((k.eta[0] - 0.1).abs() < 1e-12);
        assert_eq!(k.tags, [CellTag::IllPosed, CellTag::WellPosed]);

        // cell fully inside Ω⁻
        let cg = classify_cells(&mesh, &circle_levelset(Point::new(0.5, 0.5), 3.0), 0.25, 2).unwrap();
        assert_eq!(cg.classes()[0].tags, [CellTag::Exterior, CellTag::WellPosed]);
        assert_eq!(cg.classes()[0].eta, [0.0, 1.0]);
    }

    #[test]
    fn quarter_disk_area_converges() {
        let mesh = unit_mesh(3);
        let ls = circle_levelset(Point::origin(), 0.7);
        let exact = std::f64::consts::PI * 0.49 / 4.0;
        let mut errs = Vec::new();
        for depth in 1..=4 {
            let cg = classify_cells(&mesh, &ls, 0.25, depth).unwrap();
            errs.push((cg.subdomain_area(&mesh, Side::Minus) - exact).abs());
        }
        let cg3 = classify_cells(&mesh, &ls, 0.25, 3).unwrap();
        assert!((cg3.subdomain_area(&mesh, Side::Minus) - exact).abs() < 1e-3);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
        }
    }

    #[test]
    fn arc_length_converges() {
        let mesh = unit_mesh(3);
        let ls = circle_levelset(Point::origin(), 0.7);
        let cg = classify_cells(&mesh, &ls, 0.25, 4).unwrap();
        let exact = std::f64::consts::FRAC_PI_2 * 0.7;
        assert!((cg.interface_length() - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn area_conservation_random_cuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let c = Point::new(rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5));
            let r = rng.random_range(0.1..1.2);
            let ls = circle_levelset(c, r);
            let o = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let h = rng.random_range(0.1..1.0);
            let d = subtriangulate(&o, h, &circle_levelset(c - o.coords + Vec2::new(0.0, 0.0), r), 2).unwrap();
            let _ = ls;
            let total = d.area(Side::Plus) + d.area(Side::Minus);
            assert!((total - h * h).abs() <= 1e-12 * h * h);
            assert!((d.eta[0] + d.eta[1] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bulk_rules_on_cut_cell() {
        let mesh = unit_mesh(0);
        let ls = halfplane_levelset(Vec2::new(1.0, 1.0), 1.0 / 2f64.sqrt());
        let cg = classify_cells(&mesh, &ls, 0.25, 0).unwrap();
        let minus = cg.bulk_quadrature(&mesh, &CellId::ROOT, Side::Minus, 2).unwrap();
        assert!((minus.integrate(|p| p.x) - 1.0 / 6.0).abs() < 1e-14);
        let plus = cg.bulk_quadrature(&mesh, &CellId::ROOT, Side::Plus, 2).unwrap();
        assert!((plus.measure() - 0.5).abs() < 1e-14);
        assert_eq!(
            cg.bulk_quadrature(&mesh, &CellId::ROOT, Side::Plus, 11).unwrap_err(),
            CutError::UnsupportedDegree(11)
        );
    }

    #[test]
    fn uncut_full_cell_rule() {
        let mesh = unit_mesh(0);
        let cg = classify_cells(&mesh, &halfplane_levelset(Vec2::new(1.0, 0.0), -1.0), 0.25, 2).unwrap();
        let r = cg.bulk_quadrature(&mesh, &CellId::ROOT, Side::Plus, 4).unwrap();
        assert!((r.measure() - 1.0).abs() < 1e-14);
        assert!(cg.bulk_quadrature(&mesh, &CellId::ROOT, Side::Minus, 4).unwrap().is_empty());
    }

    #[test]
    fn moments_exact_on_straight_cuts() {
        // polygon {x + 2y < 1.3} ∩ [0,1]², moments via the divergence theorem oracle
        let ls = halfplane_levelset(Vec2::new(1.0, 2.0), 1.3 / 5f64.sqrt());
        let d = subtriangulate(&Point::origin(), 1.0, &ls, 1).unwrap();
        let mut rule = QuadratureRule::default();
        let tri_ref = quadrature::reference_triangle_rule(4);
        for (t, s) in d.triangles() {
            if s == Side::Minus {
                quadrature::push_triangle(&mut rule, &t, &tri_ref);
            }
        }
        // region: 0 ≤ x ≤ 1, 0 ≤ y ≤ (1.3 − x)/2 (always below 1 on [0,1])
        for (a, b) in [(0, 0), (1, 0), (0, 1), (2, 1), (1, 3), (0, 4)] {
            let exact: f64 = {
                // ∫_0^1 x^a ((1.3 − x)/2)^{b+1}/(b+1) dx by high-order Gauss
                let (xs, ws) = quadrature::gauss_legendre_01(10);
                xs.iter()
                    .zip(&ws)
                    .map(|(x, w)| w * x.powi(a) * ((1.3 - x) / 2.0).powi(b + 1) / (b + 1) as f64)
                    .sum()
            };
            let got = rule.integrate(|p| p.x.powi(a) * p.y.powi(b));
            assert!((got - exact).abs() < 1e-12, "x^{a} y^{b}: {got} vs {exact}");
        }
    }

    #[test]
    fn normals_point_into_minus() {
        let mesh = unit_mesh(3);
        let ls = circle_levelset(Point::origin(), 0.7);
        let cg = classify_cells(&mesh, &ls, 0.25, 2).unwrap();
        for s in cg.segments() {
            let h = mesh.cell_size(&s.cell);
            for p in [s.a, s.b] {
                assert!(ls.value(&(p + 1e-6 * h * s.normal)) < 0.0);
                assert!(ls.value(&(p - 1e-6 * h * s.normal)) > 0.0);
            }
            assert!((s.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interface_points_on_mesh_edge_use_neighbours() {
        // interface exactly on the line x = 0.5, which is a mesh line at level 1
        let mesh = unit_mesh(1);
        let ls = halfplane_levelset(Vec2::new(1.0, 0.0), 0.5);
        let cg = classify_cells(&mesh, &ls, 0.25, 2).unwrap();
        let pts = cg.interface_quadrature(&mesh, 3).unwrap();
        let total: f64 = pts.iter().map(|p| p.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for p in &pts {
            assert_ne!(p.cells[0], p.cells[1]);
            let c0 = mesh.centroid(&p.cells[0]);
            let c1 = mesh.centroid(&p.cells[1]);
            assert!(c0.x > 0.5 && c1.x < 0.5);
        }
    }
}
