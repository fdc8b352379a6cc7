//! SIP–Nitsche assembly for Poisson and plane-strain elasticity on cut meshes.
//!
//! Local contributions are distributed through the closed constraint rows of
//! the space, so the assembled system only involves free DOFs.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cutgeom::{CutError, CutGeometry, InterfacePoint};
use crate::fespace::{eval_basis, nodes_per_cell, FeSpace};
use crate::geometry::{Point, Side, Vec2};
use crate::linalg::{CsrMatrix, SparseSystem};
use crate::mesh::{CellId, QuadtreeMesh};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("invalid material: {0}")]
    Material(String),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error("space has {space} components but the problem needs {problem}")]
    ComponentMismatch { space: usize, problem: usize },
    #[error("cell {0} has no DOFs on side {1}")]
    MissingDofs(CellId, Side),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Problem {
    Poisson,
    Elasticity,
}

/// Coefficients `[c⁺, c⁻]`: diffusivities `k` or shear moduli `μ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub problem: Problem,
    pub coef: [f64; 2],
    /// Poisson ratio (elasticity only), shared by both phases.
    pub nu: f64,
}

impl Material {
    pub fn poisson(k_plus: f64, k_minus: f64) -> Result<Self, AssemblyError> {
        Self::new(Problem::Poisson, [k_plus, k_minus], 0.0)
    }

    pub fn elasticity(mu_plus: f64, mu_minus: f64, nu: f64) -> Result<Self, AssemblyError> {
        Self::new(Problem::Elasticity, [mu_plus, mu_minus], nu)
    }

    fn new(problem: Problem, coef: [f64; 2], nu: f64) -> Result<Self, AssemblyError> {
        if !(coef[0] > 0.0 && coef[1] > 0.0 && coef.iter().all(|c| c.is_finite())) {
            return Err(AssemblyError::Material(format!("coefficients must be positive, got {coef:?}")));
        }
        if !(0.0..0.5).contains(&nu) {
            return Err(AssemblyError::Material(format!("Poisson ratio {nu} outside [0, 0.5)")));
        }
        Ok(Material { problem, coef, nu })
    }

    pub fn ncomp(&self) -> usize {
        match self.problem {
            Problem::Poisson => 1,
            Problem::Elasticity => 2,
        }
    }

    pub fn coef(&self, side: Side) -> f64 {
        self.coef[side.index()]
    }

    /// Plane-strain `λ = 2νμ/(1 − 2ν)`.
    pub fn lambda(&self, side: Side) -> f64 {
        match self.problem {
            Problem::Poisson => 0.0,
            Problem::Elasticity => 2.0 * self.nu * self.coef(side) / (1.0 - 2.0 * self.nu),
        }
    }

    /// Same material with both coefficients multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Material {
            coef: [self.coef[0] * s, self.coef[1] * s],
            ..*self
        }
    }

    /// `σ(φ e_k)·n` for a basis function with gradient `g`.
    fn traction(&self, side: Side, g: &Vec2, k: usize, n: &Vec2) -> [f64; 2] {
        let c = self.coef(side);
        match self.problem {
            Problem::Poisson => [c * g.dot(n), 0.0],
            Problem::Elasticity => {
                let lam = self.lambda(side);
                let gn = g.dot(n);
                let mut t = [0.0; 2];
                for (m, tm) in t.iter_mut().enumerate() {
                    *tm = c * (if m == k { gn } else { 0.0 } + g[m] * n[k]) + lam * g[k] * n[m];
                }
                t
            }
        }
    }

    /// `σ(φ_a e_k) : ε(φ_b e_l)`.
    fn energy(&self, side: Side, ga: &Vec2, k: usize, gb: &Vec2, l: usize) -> f64 {
        let c = self.coef(side);
        match self.problem {
            Problem::Poisson => c * ga.dot(gb),
            Problem::Elasticity => {
                let diag = if k == l { ga.dot(gb) } else { 0.0 };
                c * (diag + ga[l] * gb[k]) + self.lambda(side) * ga[k] * gb[l]
            }
        }
    }
}

/// Harmonic flux weights and mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub w_plus: f64,
    pub w_minus: f64,
    pub mu_bar: f64,
}

pub fn harmonic_weights(c_plus: f64, c_minus: f64) -> Result<Weights, AssemblyError> {
    if !(c_plus > 0.0 && c_minus > 0.0) {
        return Err(AssemblyError::Material(format!(
            "weights need positive coefficients, got ({c_plus}, {c_minus})"
        )));
    }
    let s = c_plus + c_minus;
    Ok(Weights {
        w_plus: c_minus / s,
        w_minus: c_plus / s,
        mu_bar: 2.0 * c_plus * c_minus / s,
    })
}

pub fn default_beta(order: usize) -> f64 {
    10.0 * (order * order) as f64
}

/// Nitsche penalty: one global value, or per cut cell (StdFE comparison).
#[derive(Clone, Debug, PartialEq)]
pub enum Beta {
    Fixed(f64),
    PerCell { default: f64, cells: BTreeMap<CellId, f64> },
}

impl Beta {
    fn at(&self, cell: &CellId) -> f64 {
        match self {
            Beta::Fixed(b) => *b,
            Beta::PerCell { default, cells } => cells.get(cell).copied().unwrap_or(*default),
        }
    }
}

/// Body force and interface data of a boundary-value problem.
pub trait ProblemData {
    fn body_force(&self, side: Side, p: &Point) -> [f64; 2];
    /// `j_Γ = u⁺ − u⁻`.
    fn jump(&self, p: &Point) -> [f64; 2];
    /// `g_Γ = (σ(u⁺) − σ(u⁻))·n⁺` for the given discrete normal.
    fn flux_jump(&self, p: &Point, n: &Vec2) -> [f64; 2];
}

/// Zero data, handy for pure matrix assembly.
pub struct NoData;

impl ProblemData for NoData {
    fn body_force(&self, _: Side, _: &Point) -> [f64; 2] {
        [0.0; 2]
    }
    fn jump(&self, _: &Point) -> [f64; 2] {
        [0.0; 2]
    }
    fn flux_jump(&self, _: &Point, _: &Vec2) -> [f64; 2] {
        [0.0; 2]
    }
}

pub fn bulk_degree(order: usize) -> usize {
    2 * order + 2
}

pub fn interface_degree(order: usize) -> usize {
    4 * order
}

/// Cell stiffness over the points of `rule` (local order node-major, component-minor).
pub fn local_stiffness(
    material: &Material,
    side: Side,
    order: usize,
    origin: &Point,
    h: f64,
    rule: &QuadratureRule,
) -> DMatrix<f64> {
    let nc = material.ncomp();
    let n = nodes_per_cell(order) * nc;
    let mut k = DMatrix::zeros(n, n);
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let (_, g) = eval_basis(order, origin, h, p);
        for a in 0..g.len() {
            for ka in 0..nc {
                for b in 0..g.len() {
                    for kb in 0..nc {
                        k[(a * nc + ka, b * nc + kb)] += w * material.energy(side, &g[a], ka, &g[b], kb);
                    }
                }
            }
        }
    }
    k
}

fn local_load(
    material: &Material,
    side: Side,
    order: usize,
    origin: &Point,
    h: f64,
    rule: &QuadratureRule,
    data: &dyn ProblemData,
) -> DVector<f64> {
    let nc = material.ncomp();
    let mut f = DVector::zeros(nodes_per_cell(order) * nc);
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let (v, _) = eval_basis(order, origin, h, p);
        let load = data.body_force(side, p);
        for (a, va) in v.iter().enumerate() {
            for k in 0..nc {
                f[a * nc + k] += w * va * load[k];
            }
        }
    }
    f
}

/// Per-DOF quantities of one interface point: jump, weighted flux, g-weights.
struct TraceRows {
    jump: Vec<[f64; 2]>,
    flux: Vec<[f64; 2]>,
    gweight: Vec<[f64; 2]>,
}

fn trace_rows(
    mesh: &QuadtreeMesh,
    material: &Material,
    weights: &Weights,
    order: usize,
    ip: &InterfacePoint,
) -> TraceRows {
    let nc = material.ncomp();
    let mut rows = TraceRows {
        jump: Vec::new(),
        flux: Vec::new(),
        gweight: Vec::new(),
    };
    for side in Side::BOTH {
        let (o, h) = mesh.cell_box(&ip.cells[side.index()]);
        let (v, g) = eval_basis(order, &o, h, &ip.point);
        let (sign, wflux, wg) = match side {
            Side::Plus => (1.0, weights.w_plus, weights.w_minus),
            Side::Minus => (-1.0, weights.w_minus, weights.w_plus),
        };
        for a in 0..v.len() {
            for k in 0..nc {
                let mut e = [0.0; 2];
                e[k] = 1.0;
                let t = material.traction(side, &g[a], k, &ip.normal);
                rows.jump.push([sign * v[a] * e[0], sign * v[a] * e[1]]);
                rows.flux.push([wflux * t[0], wflux * t[1]]);
                rows.gweight.push([wg * v[a] * e[0], wg * v[a] * e[1]]);
            }
        }
    }
    rows
}

fn dot2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Matrix and right-hand side of one interface quadrature point over the
/// stacked local DOFs `[T⁺ on Ω⁺, T⁻ on Ω⁻]`.
pub fn interface_terms(
    mesh: &QuadtreeMesh,
    material: &Material,
    beta: f64,
    order: usize,
    ip: &InterfacePoint,
    data: &dyn ProblemData,
) -> Result<(DMatrix<f64>, DVector<f64>), AssemblyError> {
    let weights = harmonic_weights(material.coef[0], material.coef[1])?;
    let rows = trace_rows(mesh, material, &weights, order, ip);
    let n = rows.jump.len();
    let pen = beta * weights.mu_bar / ip.h;
    let w = ip.weight;
    let j = data.jump(&ip.point);
    let g = data.flux_jump(&ip.point, &ip.normal);
    let mut k = DMatrix::zeros(n, n);
    let mut f = DVector::zeros(n);
    for d in 0..n {
        for e in 0..n {
            k[(d, e)] = w
                * (pen * dot2(&rows.jump[d], &rows.jump[e])
                    - dot2(&rows.flux[e], &rows.jump[d])
                    - dot2(&rows.flux[d], &rows.jump[e]));
        }
        f[d] = w * (pen * dot2(&j, &rows.jump[d]) - dot2(&rows.flux[d], &j) + dot2(&g, &rows.gweight[d]));
    }
    Ok((k, f))
}

/// Accumulates local blocks into the reduced system.
struct Reducer<'a> {
    space: &'a FeSpace,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl Reducer<'_> {
    fn add(&mut self, dofs: &[usize], k: &DMatrix<f64>, f: &DVector<f64>) {
        for (a, da) in dofs.iter().enumerate() {
            let ea = self.space.expansion(*da);
            let mut fa = f[a];
            for (b, db) in dofs.iter().enumerate() {
                let kab = k[(a, b)];
                if kab == 0.0 {
                    continue;
                }
                let eb = self.space.expansion(*db);
                fa -= kab * eb.offset;
                for &(i, ci) in &ea.terms {
                    for &(j, cj) in &eb.terms {
                        self.triplets.push((i, j, ci * cj * kab));
                    }
                }
            }
            for &(i, ci) in &ea.terms {
                self.rhs[i] += ci * fa;
            }
        }
    }
}

/// Assembles the reduced SIP–Nitsche system over the free DOFs of `space`.
pub fn assemble(
    mesh: &QuadtreeMesh,
    cut: &CutGeometry,
    space: &FeSpace,
    material: &Material,
    beta: &Beta,
    data: &dyn ProblemData,
) -> Result<SparseSystem, AssemblyError> {
    if space.ncomp() != material.ncomp() {
        return Err(AssemblyError::ComponentMismatch {
            space: space.ncomp(),
            problem: material.ncomp(),
        });
    }
    let order = space.order();
    let mut red = Reducer {
        space,
        triplets: Vec::new(),
        rhs: vec![0.0; space.n_free()],
    };
    for (c, class) in mesh.leaves().iter().zip(cut.classes()) {
        let (o, h) = mesh.cell_box(c);
        for side in Side::BOTH {
            if !class.is_active(side) {
                continue;
            }
            let rule = cut.bulk_quadrature(mesh, c, side, bulk_degree(order))?;
            let dofs = space.cell_dofs(mesh, c, side).ok_or(AssemblyError::MissingDofs(*c, side))?;
            let k = local_stiffness(material, side, order, &o, h, &rule);
            let f = local_load(material, side, order, &o, h, &rule, data);
            red.add(&dofs, &k, &f);
        }
    }
    for ip in cut.interface_quadrature(mesh, interface_degree(order))? {
        let mut dofs = space
            .cell_dofs(mesh, &ip.cells[0], Side::Plus)
            .ok_or(AssemblyError::MissingDofs(ip.cells[0], Side::Plus))?;
        dofs.extend(
            space
                .cell_dofs(mesh, &ip.cells[1], Side::Minus)
                .ok_or(AssemblyError::MissingDofs(ip.cells[1], Side::Minus))?,
        );
        let (k, f) = interface_terms(mesh, material, beta.at(&ip.parent), order, &ip, data)?;
        red.add(&dofs, &k, &f);
    }
    Ok(SparseSystem {
        matrix: CsrMatrix::from_triplets(space.n_free(), red.triplets),
        rhs: red.rhs,
    })
}

const POWER_STEPS: usize = 500;

/// Per-cut-cell penalties for the StdFE comparison space:
/// `β_T = max(10q², 2 λ_max)` with `λ_max` the largest eigenvalue of
/// `B x = λ A x`, `B = h ∫_{Γ∩T} (σ̃n)(σ̃n)ᵀ`, `A = ∫_{T∩Ω^α} σ̃ : ε`, `σ̃ = σ/c_α`.
pub fn stdfe_betas(
    mesh: &QuadtreeMesh,
    cut: &CutGeometry,
    material: &Material,
    order: usize,
) -> Result<BTreeMap<CellId, f64>, AssemblyError> {
    let points = cut.interface_quadrature(mesh, interface_degree(order))?;
    // (parent, side, trace cell) → points
    let mut groups: BTreeMap<(CellId, usize, CellId), Vec<&InterfacePoint>> = BTreeMap::new();
    for ip in &points {
        for side in Side::BOTH {
            groups
                .entry((ip.parent, side.index(), ip.cells[side.index()]))
                .or_default()
                .push(ip);
        }
    }
    let floor = default_beta(order);
    let nc = material.ncomp();
    let mut out: BTreeMap<CellId, f64> = BTreeMap::new();
    for ((parent, s, cell), pts) in groups {
        let side = if s == 0 { Side::Plus } else { Side::Minus };
        let unit = Material {
            coef: [1.0, 1.0],
            ..*material
        };
        let (o, h) = mesh.cell_box(&cell);
        let rule = cut.bulk_quadrature(mesh, &cell, side, bulk_degree(order))?;
        let a = local_stiffness(&unit, side, order, &o, h, &rule);
        let n = a.nrows();
        let mut b = DMatrix::zeros(n, n);
        let mut cut_len = 0.0;
        for ip in &pts {
            cut_len += ip.weight;
            let (_, g) = eval_basis(order, &o, h, &ip.point);
            let mut rows = Vec::with_capacity(n);
            for ga in &g {
                for k in 0..nc {
                    rows.push(unit.traction(side, ga, k, &ip.normal));
                }
            }
            for d in 0..n {
                for e in 0..n {
                    b[(d, e)] += ip.h * ip.weight * dot2(&rows[d], &rows[e]);
                }
            }
        }
        let lambda = match generalized_lambda_max(&a, &b) {
            Some(l) => 2.0 * l,
            None => {
                let fallback = floor * (mesh.cell_size(&parent) / cut_len.max(1e-300));
                warn!("StdFE penalty eigenproblem on {parent} did not converge; using {fallback:e}");
                fallback
            }
        };
        let entry = out.entry(parent).or_insert(floor);
        *entry = entry.max(lambda);
    }
    Ok(out)
}

/// Largest eigenvalue of `B x = λ (A + 10⁻¹² tr(A) I) x` by power iteration.
fn generalized_lambda_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    let shift = 1e-12 * a.trace().max(f64::MIN_POSITIVE);
    let reg = a + DMatrix::identity(n, n) * shift;
    let chol = reg.cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let c = &linv * b * linv.transpose();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.01 * i as f64);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_STEPS {
        let y = &c * &x;
        let ny = y.norm();
        if ny == 0.0 {
            return Some(0.0);
        }
        let next = x.dot(&y);
        x = y / ny;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return Some(next);
        }
        lambda = next;
    }
    None
}
