//! Manufactured solutions, error norms and Li–Bettess marking.

use std::f64::consts::PI;

use crate::assembly::{bulk_degree, harmonic_weights, AssemblyError, Material, ProblemData};
use crate::cutgeom::CutGeometry;
use crate::fespace::{eval_basis, FeSpace};
use crate::geometry::{circle_levelset, flower_levelset, pacman_levelset, LevelSet, Point, Side, Vec2};
use crate::mesh::{CellId, QuadtreeMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Circle,
    Flower,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Benchmark {
    /// Discontinuous polynomial of degree `q + 1` in `x` with continuous flux.
    OutFeSpace { q: usize, shape: Shape },
    /// `r^ω sin(ωθ)` about the pacman center, `ω⁻ = 2/3`, `ω⁺ = 4`.
    Fichera2d,
    /// Plane-strain circular inclusion, radial displacement.
    DiskInclusion,
}

pub const CIRCLE_RADIUS: f64 = 0.7;
pub const PACMAN_CENTER: (f64, f64) = (0.5, 0.5);
pub const PACMAN_RADIUS: f64 = 0.3;
pub const PACMAN_SECTOR: (f64, f64) = (0.0, 1.5 * PI);
pub const OMEGA_MINUS: f64 = 2.0 / 3.0;
pub const OMEGA_PLUS: f64 = 4.0;
pub const INCLUSION_A: f64 = 0.4;
pub const INCLUSION_B: f64 = 2.0;
pub const DEFAULT_NU: f64 = 0.3;

/// Exact field, its data and the material it was derived for.
#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub benchmark: Benchmark,
    pub material: Material,
    /// Replaces the benchmark's interface (only meaningful for [`Benchmark::OutFeSpace`], whose
    /// exact solution does not depend on the geometry).
    pub interface: Option<LevelSet>,
}

/// Gradient of `Im z^ω` (branch cut along `θ = cut`), `z` relative to `c`.
fn harmonic_sector(p: &Point, c: &Point, omega: f64, cut: f64) -> (f64, Vec2) {
    let d = p - c;
    let r = d.norm();
    if r == 0.0 {
        return (0.0, Vec2::zeros());
    }
    let mut theta = d.y.atan2(d.x);
    // bring θ into [cut − 2π, cut)
    while theta >= cut {
        theta -= 2.0 * PI;
    }
    while theta < cut - 2.0 * PI {
        theta += 2.0 * PI;
    }
    let u = r.powf(omega) * (omega * theta).sin();
    let s = omega * r.powf(omega - 1.0);
    let a = (omega - 1.0) * theta;
    (u, Vec2::new(s * a.sin(), s * a.cos()))
}

impl ManufacturedCase {
    pub fn out_fe_space(q: usize, shape: Shape, k_plus: f64, k_minus: f64) -> Result<Self, AssemblyError> {
        Ok(ManufacturedCase {
            benchmark: Benchmark::OutFeSpace { q, shape },
            material: Material::poisson(k_plus, k_minus)?,
            interface: None,
        })
    }

    pub fn fichera2d(k_plus: f64, k_minus: f64) -> Result<Self, AssemblyError> {
        Ok(ManufacturedCase {
            benchmark: Benchmark::Fichera2d,
            material: Material::poisson(k_plus, k_minus)?,
            interface: None,
        })
    }

    pub fn disk_inclusion(mu_plus: f64, mu_minus: f64, nu: f64) -> Result<Self, AssemblyError> {
        Ok(ManufacturedCase {
            benchmark: Benchmark::DiskInclusion,
            material: Material::elasticity(mu_plus, mu_minus, nu)?,
            interface: None,
        })
    }

    pub fn ncomp(&self) -> usize {
        self.material.ncomp()
    }

    pub fn with_interface(self, ls: LevelSet) -> Self {
        ManufacturedCase {
            interface: Some(ls),
            ..self
        }
    }

    pub fn levelset(&self) -> LevelSet {
        if let Some(ls) = &self.interface {
            return ls.clone();
        }
        match self.benchmark {
            Benchmark::OutFeSpace { shape: Shape::Circle, .. } => circle_levelset(Point::origin(), CIRCLE_RADIUS),
            Benchmark::OutFeSpace { shape: Shape::Flower, .. } => flower_levelset(Point::origin()),
            Benchmark::Fichera2d => pacman_levelset(
                Point::new(PACMAN_CENTER.0, PACMAN_CENTER.1),
                PACMAN_RADIUS,
                PACMAN_SECTOR,
            ),
            Benchmark::DiskInclusion => circle_levelset(Point::origin(), INCLUSION_A),
        }
    }

    /// The constant `c` of the inclusion solution.
    pub fn inclusion_c(&self) -> f64 {
        let m = &self.material;
        let (mp, mm) = (m.coef(Side::Plus), m.coef(Side::Minus));
        let (lp, lm) = (m.lambda(Side::Plus), m.lambda(Side::Minus));
        let (a2, b2) = (INCLUSION_A * INCLUSION_A, INCLUSION_B * INCLUSION_B);
        (lm + mm + mp) * b2 / ((lp + mp) * a2 + (lm + mm) * (b2 - a2) + mp * b2)
    }

    /// Radial displacement `u_r(r)` of the branch belonging to `side`.
    pub fn inclusion_radial(&self, side: Side, r: f64) -> f64 {
        let c = self.inclusion_c();
        let ratio = INCLUSION_B * INCLUSION_B / (INCLUSION_A * INCLUSION_A);
        match side {
            Side::Minus => ((1.0 - ratio) * c + ratio) * r,
            Side::Plus => (r - INCLUSION_B * INCLUSION_B / r) * c + INCLUSION_B * INCLUSION_B / r,
        }
    }

    /// Exact solution of `side`, extended smoothly beyond its subdomain.
    pub fn exact(&self, side: Side, p: &Point) -> [f64; 2] {
        self.exact_with_gradient(side, p).0
    }

    /// Rows are components: `grad[k] = ∇u_k`.
    pub fn exact_gradient(&self, side: Side, p: &Point) -> [Vec2; 2] {
        self.exact_with_gradient(side, p).1
    }

    fn exact_with_gradient(&self, side: Side, p: &Point) -> ([f64; 2], [Vec2; 2]) {
        match self.benchmark {
            Benchmark::OutFeSpace { q, .. } => {
                let (kp, km) = (self.material.coef(Side::Plus), self.material.coef(Side::Minus));
                let x = p.x;
                let qf = q as f64;
                let s = 3.0 * km + kp;
                let (u, du) = match side {
                    Side::Plus => (
                        (kp - km + s * x) / (4.0 * kp * (km + kp)) - x.powi(q as i32 + 1) / ((qf + 1.0) * kp),
                        s / (4.0 * kp * (km + kp)) - x.powi(q as i32) / kp,
                    ),
                    Side::Minus => (
                        s * x / (4.0 * km * (km + kp)) - x.powi(q as i32 + 1) / ((qf + 1.0) * km),
                        s / (4.0 * km * (km + kp)) - x.powi(q as i32) / km,
                    ),
                };
                ([u, 0.0], [Vec2::new(du, 0.0), Vec2::zeros()])
            }
            Benchmark::Fichera2d => {
                let c = Point::new(PACMAN_CENTER.0, PACMAN_CENTER.1);
                // u⁻ is cut in the middle of the removed wedge, u⁺ is entire
                let (omega, cut) = match side {
                    Side::Minus => (OMEGA_MINUS, 1.75 * PI),
                    Side::Plus => (OMEGA_PLUS, 2.0 * PI),
                };
                let (u, g) = harmonic_sector(p, &c, omega, cut);
                ([u, 0.0], [g, Vec2::zeros()])
            }
            Benchmark::DiskInclusion => {
                let c = self.inclusion_c();
                let r2 = p.coords.norm_squared();
                match side {
                    Side::Minus => {
                        let a = self.inclusion_radial(Side::Minus, 1.0);
                        ([a * p.x, a * p.y], [Vec2::new(a, 0.0), Vec2::new(0.0, a)])
                    }
                    Side::Plus => {
                        // u = c x + (1 − c) b² x / r²
                        let k = (1.0 - c) * INCLUSION_B * INCLUSION_B;
                        if r2 == 0.0 {
                            return ([0.0; 2], [Vec2::zeros(); 2]);
                        }
                        let u = [c * p.x + k * p.x / r2, c * p.y + k * p.y / r2];
                        let r4 = r2 * r2;
                        let g = [
                            Vec2::new(c + k * (r2 - 2.0 * p.x * p.x) / r4, -2.0 * k * p.x * p.y / r4),
                            Vec2::new(-2.0 * k * p.x * p.y / r4, c + k * (r2 - 2.0 * p.y * p.y) / r4),
                        ];
                        (u, g)
                    }
                }
            }
        }
    }

    /// Stress (or flux) of the exact field: `σ n` for elasticity, `k ∇u·n` for Poisson.
    pub fn exact_traction(&self, side: Side, p: &Point, n: &Vec2) -> [f64; 2] {
        traction_of(&self.material, side, &self.exact_gradient(side, p), n)
    }

    /// Dirichlet data `u^side` on the boundary.
    pub fn dirichlet(&self, side: Side, p: &Point, comp: usize) -> f64 {
        self.exact(side, p)[comp]
    }
}

/// `σ(u)·n` from the gradient rows of `u`.
pub fn traction_of(material: &Material, side: Side, grad: &[Vec2; 2], n: &Vec2) -> [f64; 2] {
    let c = material.coef(side);
    match material.problem {
        crate::assembly::Problem::Poisson => [c * grad[0].dot(n), 0.0],
        crate::assembly::Problem::Elasticity => {
            let lam = material.lambda(side);
            let div = grad[0][0] + grad[1][1];
            let mut t = [0.0; 2];
            for (m, tm) in t.iter_mut().enumerate() {
                // σ_mj = μ(∂_j u_m + ∂_m u_j) + λ div δ_mj
                *tm = (0..2).map(|j| c * (grad[m][j] + grad[j][m]) * n[j]).sum::<f64>() + lam * div * n[m];
            }
            t
        }
    }
}

/// `σ(u) : ε(u)` (or `k |∇u|²`).
pub fn energy_density(material: &Material, side: Side, grad: &[Vec2; 2]) -> f64 {
    let c = material.coef(side);
    match material.problem {
        crate::assembly::Problem::Poisson => c * grad[0].norm_squared(),
        crate::assembly::Problem::Elasticity => {
            let lam = material.lambda(side);
            let mut eps_sq = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let e = 0.5 * (grad[i][j] + grad[j][i]);
                    eps_sq += e * e;
                }
            }
            let div = grad[0][0] + grad[1][1];
            2.0 * c * eps_sq + lam * div * div
        }
    }
}

impl ProblemData for ManufacturedCase {
    fn body_force(&self, _side: Side, p: &Point) -> [f64; 2] {
        match self.benchmark {
            Benchmark::OutFeSpace { q, .. } => [q as f64 * p.x.powi(q as i32 - 1), 0.0],
            Benchmark::Fichera2d | Benchmark::DiskInclusion => [0.0; 2],
        }
    }

    fn jump(&self, p: &Point) -> [f64; 2] {
        let (a, b) = (self.exact(Side::Plus, p), self.exact(Side::Minus, p));
        [a[0] - b[0], a[1] - b[1]]
    }

    fn flux_jump(&self, p: &Point, n: &Vec2) -> [f64; 2] {
        let (a, b) = (
            self.exact_traction(Side::Plus, p, n),
            self.exact_traction(Side::Minus, p, n),
        );
        [a[0] - b[0], a[1] - b[1]]
    }
}

/// Absolute and relative error norms of a discrete solution.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub l2: f64,
    pub h1_semi: f64,
    /// `(Σ_α c_α ‖∇e‖² + Σ_F μ̄/h ‖⟦e⟧‖²)^{1/2}`.
    pub energy: f64,
    /// `(Σ_α ∫ σ(e) : ε(e))^{1/2}`.
    pub energy_density: f64,
    pub rel_l2: f64,
    pub rel_h1: f64,
    /// Divided by the bulk part `(Σ_α c_α ‖∇u‖²)^{1/2}` of the exact solution.
    pub rel_energy: f64,
    pub rel_energy_density: f64,
    /// `(Σ_α c_α ‖∇u‖²)^{1/2}`.
    pub u_energy: f64,
    /// Squared energy contribution per leaf (leaf order); interface terms go to the segment's cell.
    pub per_cell_energy_sq: Vec<f64>,
    /// Squared bulk energy error per side.
    pub per_side_energy_sq: [f64; 2],
}

impl ErrorReport {
    pub fn per_cell_energy(&self) -> Vec<f64> {
        self.per_cell_energy_sq.iter().map(|e| e.sqrt()).collect()
    }
}

/// Error norms of the free-DOF vector `solution` against `case`.
pub fn error_norms(
    mesh: &QuadtreeMesh,
    cut: &CutGeometry,
    space: &FeSpace,
    case: &ManufacturedCase,
    solution: &[f64],
) -> Result<ErrorReport, AssemblyError> {
    let values = space.expand(solution);
    let order = space.order();
    let nc = space.ncomp();
    let material = &case.material;
    let degree = bulk_degree(order);

    let eval = |cell: &CellId, side: Side, p: &Point| -> Option<([f64; 2], [Vec2; 2])> {
        let dofs = space.cell_dofs(mesh, cell, side)?;
        let (o, h) = mesh.cell_box(cell);
        let (v, g) = eval_basis(order, &o, h, p);
        let mut u = [0.0; 2];
        let mut du = [Vec2::zeros(); 2];
        for a in 0..v.len() {
            for k in 0..nc {
                let x = values[dofs[a * nc + k]];
                u[k] += x * v[a];
                du[k] += x * g[a];
            }
        }
        Some((u, du))
    };

    let mut sums = [0.0f64; 4]; // l2, h1, energy, density of e
    let mut norms = [0.0f64; 4]; // same for u
    let mut per_cell = vec![0.0; mesh.num_leaves()];
    let mut per_side = [0.0; 2];
    for (idx, (c, class)) in mesh.leaves().iter().zip(cut.classes()).enumerate() {
        for side in Side::BOTH {
            if !class.is_active(side) {
                continue;
            }
            let coef = material.coef(side);
            let rule = cut.bulk_quadrature(mesh, c, side, degree)?;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let (uh, guh) = eval(c, side, p).ok_or(AssemblyError::MissingDofs(*c, side))?;
                let (u, gu) = case.exact_with_gradient(side, p);
                let e = [u[0] - uh[0], u[1] - uh[1]];
                let ge = [gu[0] - guh[0], gu[1] - guh[1]];
                let grad_sq = |g: &[Vec2; 2]| g[0].norm_squared() + g[1].norm_squared();
                let cell_e = w * coef * grad_sq(&ge);
                sums[0] += w * (e[0] * e[0] + e[1] * e[1]);
                sums[1] += w * grad_sq(&ge);
                sums[2] += cell_e;
                sums[3] += w * energy_density(material, side, &ge);
                norms[0] += w * (u[0] * u[0] + u[1] * u[1]);
                norms[1] += w * grad_sq(&gu);
                norms[2] += w * coef * grad_sq(&gu);
                norms[3] += w * energy_density(material, side, &gu);
                per_cell[idx] += cell_e;
                per_side[side.index()] += cell_e;
            }
        }
    }
    let weights = harmonic_weights(material.coef[0], material.coef[1])?;
    for ip in cut.interface_quadrature(mesh, degree)? {
        let (up, _) = eval(&ip.cells[0], Side::Plus, &ip.point).ok_or(AssemblyError::MissingDofs(ip.cells[0], Side::Plus))?;
        let (um, _) =
            eval(&ip.cells[1], Side::Minus, &ip.point).ok_or(AssemblyError::MissingDofs(ip.cells[1], Side::Minus))?;
        let j = case.jump(&ip.point);
        let mut je = 0.0;
        for k in 0..nc {
            let d = j[k] - (up[k] - um[k]);
            je += d * d;
        }
        let contrib = ip.weight * weights.mu_bar / ip.h * je;
        sums[2] += contrib;
        if let Some(k) = mesh.leaf_index(&ip.parent) {
            per_cell[k] += contrib;
        }
    }
    let rel = |a: f64, b: f64| if b > 0.0 { a.sqrt() / b.sqrt() } else { a.sqrt() };
    Ok(ErrorReport {
        l2: sums[0].sqrt(),
        h1_semi: sums[1].sqrt(),
        energy: sums[2].sqrt(),
        energy_density: sums[3].sqrt(),
        rel_l2: rel(sums[0], norms[0]),
        rel_h1: rel(sums[1], norms[1]),
        rel_energy: rel(sums[2], norms[2]),
        rel_energy_density: rel(sums[3], norms[3]),
        u_energy: norms[2].sqrt(),
        per_cell_energy_sq: per_cell,
        per_side_energy_sq: per_side,
    })
}

/// Cells to refine and sibling groups to merge.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Marking {
    pub refine: Vec<CellId>,
    pub coarsen: Vec<CellId>,
}

pub const COARSEN_FACTOR: f64 = 0.1;

/// Li–Bettess: `e_perm = target · ‖u‖_E / √n`; refine `e_T > e_perm`,
/// coarsen complete sibling quadruples with every `e_T < 0.1 e_perm`.
pub fn li_bettess_mark(mesh: &QuadtreeMesh, per_cell_energy: &[f64], u_energy: f64, target_rel_error: f64) -> Marking {
    let n = mesh.num_leaves();
    assert_eq!(per_cell_energy.len(), n);
    let e_perm = target_rel_error * u_energy / (n as f64).sqrt();
    let mut out = Marking::default();
    for (c, e) in mesh.leaves().iter().zip(per_cell_energy) {
        if *e > e_perm {
            out.refine.push(*c);
        }
    }
    let small = |c: &CellId| {
        mesh.leaf_index(c)
            .is_some_and(|k| per_cell_energy[k] < COARSEN_FACTOR * e_perm)
    };
    for c in mesh.leaves() {
        // visit each quadruple once, through its first child
        let Some(p) = c.parent() else { continue };
        let kids = p.children();
        if *c != kids[0] {
            continue;
        }
        if kids.iter().all(small) {
            out.coarsen.extend(kids);
        }
    }
    out
}
