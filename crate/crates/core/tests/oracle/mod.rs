//! Brute-force reference implementations for the test suites.
//!
//! Nothing here calls the code paths it checks: the basis is re-derived from the Lagrange product
//! formula, constraints are closed by fixpoint iteration instead of depth-first substitution, and
//! the reduced system is formed as `Pᵀ A P` with an explicit dense prolongation.
#![allow(dead_code)]

pub mod invariants;

use std::collections::BTreeMap;

use agfem::assembly::{Material, Problem, ProblemData};
use agfem::cutgeom::CutGeometry;
use agfem::fespace::{Constraint, ConstraintSet, FeSpace};
use agfem::geometry::{LevelSet, Point, Side, Vec2};
use agfem::mesh::{CellId, QuadtreeMesh};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DENSE_ASSEMBLY_LIMIT: usize = 2000;

/// Lagrange basis on `order + 1` equispaced nodes of `[0, 1]`: values and derivatives.
pub fn lagrange(order: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes: Vec<f64> = (0..=order).map(|k| k as f64 / order as f64).collect();
    let mut v = vec![1.0; order + 1];
    let mut d = vec![0.0; order + 1];
    for k in 0..=order {
        for m in (0..=order).filter(|m| *m != k) {
            v[k] *= (t - nodes[m]) / (nodes[k] - nodes[m]);
        }
        for skip in (0..=order).filter(|s| *s != k) {
            let mut term = 1.0 / (nodes[k] - nodes[skip]);
            for m in (0..=order).filter(|m| *m != k && *m != skip) {
                term *= (t - nodes[m]) / (nodes[k] - nodes[m]);
            }
            d[k] += term;
        }
    }
    (v, d)
}

/// Tensor-product basis of the cell `[o, o + h]²`, local index `i + (q + 1) j`.
pub fn basis(order: usize, o: &Point, h: f64, p: &Point) -> (Vec<f64>, Vec<Vec2>) {
    let (vx, dx) = lagrange(order, (p.x - o.x) / h);
    let (vy, dy) = lagrange(order, (p.y - o.y) / h);
    let mut v = Vec::new();
    let mut g = Vec::new();
    for j in 0..=order {
        for i in 0..=order {
            v.push(vx[i] * vy[j]);
            g.push(Vec2::new(dx[i] * vy[j] / h, vx[i] * dy[j] / h));
        }
    }
    (v, g)
}

/// Stress of the vector field `φ e_k` (Poisson: the flux `c ∇φ` in row 0).
fn stress(material: &Material, side: Side, g: &Vec2, k: usize) -> [[f64; 2]; 2] {
    let c = material.coef[side.index()];
    match material.problem {
        Problem::Poisson => [[c * g.x, c * g.y], [0.0, 0.0]],
        Problem::Elasticity => {
            let lam = 2.0 * material.nu * c / (1.0 - 2.0 * material.nu);
            let mut eps = [[0.0; 2]; 2];
            for (i, row) in eps.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    let a = if i == k { g[j] } else { 0.0 };
                    let b = if j == k { g[i] } else { 0.0 };
                    *e = 0.5 * (a + b);
                }
            }
            let tr = eps[0][0] + eps[1][1];
            let mut s = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] = 2.0 * c * eps[i][j] + if i == j { lam * tr } else { 0.0 };
                }
            }
            s
        }
    }
}

/// Gradient (Poisson) or strain (elasticity) of `φ e_k`, paired with [`stress`].
fn strain(material: &Material, g: &Vec2, k: usize) -> [[f64; 2]; 2] {
    match material.problem {
        Problem::Poisson => [[g.x, g.y], [0.0, 0.0]],
        Problem::Elasticity => {
            let mut eps = [[0.0; 2]; 2];
            for (i, row) in eps.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    let a = if i == k { g[j] } else { 0.0 };
                    let b = if j == k { g[i] } else { 0.0 };
                    *e = 0.5 * (a + b);
                }
            }
            eps
        }
    }
}

fn traction(material: &Material, side: Side, g: &Vec2, k: usize, n: &Vec2) -> [f64; 2] {
    let s = stress(material, side, g, k);
    match material.problem {
        Problem::Poisson => [s[0][0] * n.x + s[0][1] * n.y, 0.0],
        Problem::Elasticity => [s[0][0] * n.x + s[0][1] * n.y, s[1][0] * n.x + s[1][1] * n.y],
    }
}

fn contract(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Full (unreduced) and reduced dense systems.
pub struct DenseSystem {
    /// Over every scalar DOF of the space.
    pub full: DMatrix<f64>,
    pub full_rhs: DVector<f64>,
    /// `n_dofs × n_free` prolongation and the offsets `g`: `u = P x + g`.
    pub prolongation: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// `Pᵀ A P` and `Pᵀ (b − A g)`.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Dense loop assembly of the SIP–Nitsche system followed by explicit reduction.
pub fn dense_assemble(
    mesh: &QuadtreeMesh,
    cut: &CutGeometry,
    space: &FeSpace,
    material: &Material,
    beta: &dyn Fn(&CellId) -> f64,
    data: &dyn ProblemData,
) -> Result<DenseSystem, String> {
    let n_free = space.n_free();
    if n_free > DENSE_ASSEMBLY_LIMIT {
        return Err(format!("{n_free} free DOFs exceed the dense limit {DENSE_ASSEMBLY_LIMIT}"));
    }
    let n = space.n_dofs();
    let q = space.order();
    let nc = space.ncomp();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);

    for (c, class) in mesh.leaves().iter().zip(cut.classes()) {
        let (o, h) = mesh.cell_box(c);
        for side in Side::BOTH {
            if !class.is_active(side) {
                continue;
            }
            let dofs = space.cell_dofs(mesh, c, side).ok_or("active cell without DOFs")?;
            let rule = cut.bulk_quadrature(mesh, c, side, 2 * q + 2).map_err(|e| e.to_string())?;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let (v, g) = basis(q, &o, h, p);
                let f = data.body_force(side, p);
                for i in 0..v.len() {
                    for ki in 0..nc {
                        let di = dofs[i * nc + ki];
                        let si = stress(material, side, &g[i], ki);
                        b[di] += w * v[i] * f[ki];
                        for j in 0..v.len() {
                            for kj in 0..nc {
                                let dj = dofs[j * nc + kj];
                                a[(dj, di)] += w * contract(&si, &strain(material, &g[j], kj));
                            }
                        }
                    }
                }
            }
        }
    }

    let (cp, cm) = (material.coef[0], material.coef[1]);
    let (w_plus, w_minus) = (cm / (cp + cm), cp / (cp + cm));
    let mu_bar = 2.0 * cp * cm / (cp + cm);
    for ip in cut.interface_quadrature(mesh, 4 * q).map_err(|e| e.to_string())? {
        // (dof, jump vector, weighted traction, g-weight vector)
        let mut rows: Vec<(usize, [f64; 2], [f64; 2], [f64; 2])> = Vec::new();
        for side in Side::BOTH {
            let cell = ip.cells[side.index()];
            let dofs = space.cell_dofs(mesh, &cell, side).ok_or("trace cell without DOFs")?;
            let (o, h) = mesh.cell_box(&cell);
            let (v, g) = basis(q, &o, h, &ip.point);
            let (sign, avg, other) = match side {
                Side::Plus => (1.0, w_plus, w_minus),
                Side::Minus => (-1.0, w_minus, w_plus),
            };
            for i in 0..v.len() {
                for k in 0..nc {
                    let mut e = [0.0; 2];
                    e[k] = v[i];
                    let t = traction(material, side, &g[i], k, &ip.normal);
                    rows.push((
                        dofs[i * nc + k],
                        [sign * e[0], sign * e[1]],
                        [avg * t[0], avg * t[1]],
                        [other * e[0], other * e[1]],
                    ));
                }
            }
        }
        let pen = beta(&ip.parent) * mu_bar / ip.h;
        let jump = data.jump(&ip.point);
        let gflux = data.flux_jump(&ip.point, &ip.normal);
        let dot = |x: &[f64; 2], y: &[f64; 2]| x[0] * y[0] + x[1] * y[1];
        for (di, ji, ti, gi) in &rows {
            b[*di] += ip.weight * (pen * dot(&jump, ji) - dot(ti, &jump) + dot(&gflux, gi));
            for (dj, jj, tj, _) in &rows {
                a[(*di, *dj)] += ip.weight * (pen * dot(ji, jj) - dot(tj, ji) - dot(ti, jj));
            }
        }
    }

    let closed = closure_fixpoint(space.raw_constraints())?;
    let (p, g) = prolongation(space, &closed)?;
    let pt = p.transpose();
    let matrix = &pt * &a * &p;
    let rhs = &pt * (&b - &a * &g);
    Ok(DenseSystem {
        full: a,
        full_rhs: b,
        prolongation: p,
        offset: g,
        matrix,
        rhs,
    })
}

/// `P` and `g` from a closed constraint set: free DOFs get unit rows in solver order.
pub fn prolongation(space: &FeSpace, closed: &ConstraintSet) -> Result<(DMatrix<f64>, DVector<f64>), String> {
    let n = space.n_dofs();
    let free: BTreeMap<usize, usize> = space.free_dofs().iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut p = DMatrix::zeros(n, free.len());
    let mut g = DVector::zeros(n);
    for d in 0..n {
        match closed.get(&d) {
            Some(c) => {
                g[d] = c.offset;
                for (m, w) in &c.masters {
                    let col = free.get(m).ok_or(format!("master {m} of {d} is not free"))?;
                    p[(d, *col)] += w;
                }
            }
            None => {
                let col = free.get(&d).ok_or(format!("unconstrained DOF {d} is not free"))?;
                p[(d, *col)] = 1.0;
            }
        }
    }
    Ok((p, g))
}

/// Closure by repeated one-level substitution until no master is itself constrained.
pub fn closure_fixpoint(raw: &ConstraintSet) -> Result<ConstraintSet, String> {
    let mut cur = raw.clone();
    for _ in 0..=raw.len() {
        let mut changed = false;
        let mut next = ConstraintSet::new();
        for (d, c) in &cur {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            let mut offset = c.offset;
            for (m, w) in &c.masters {
                match cur.get(m) {
                    Some(cm) => {
                        changed = true;
                        offset += w * cm.offset;
                        for (mm, ww) in &cm.masters {
                            *acc.entry(*mm).or_default() += w * ww;
                        }
                    }
                    None => *acc.entry(*m).or_default() += w,
                }
            }
            next.insert(
                *d,
                Constraint {
                    masters: acc.into_iter().filter(|(_, w)| *w != 0.0).collect(),
                    offset,
                },
            );
        }
        cur = next;
        if !changed {
            return Ok(cur);
        }
    }
    Err("constraint graph has a cycle".into())
}

/// Eigenvalues (ascending) by cyclic Jacobi rotations.
pub fn dense_sym_eig(a: &DMatrix<f64>) -> Result<Vec<f64>, String> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err("matrix is not square".into());
    }
    let scale = a.amax();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(format!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    let mut m = (a + a.transpose()) * 0.5;
    let fro = m.norm();
    let off = |m: &DMatrix<f64>| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) >= 1e-12 * fro {
        sweeps += 1;
        if sweeps > 100 {
            return Err("cyclic Jacobi did not converge".into());
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Stratified Monte Carlo integral of `f` over `Ω^side ∩ [o, o + extent]²`: an `m × m` grid of
/// strata with two uniform samples each.
pub fn mc_region_integral(
    ls: &LevelSet,
    side: Side,
    origin: &Point,
    extent: f64,
    f: &dyn Fn(&Point) -> f64,
    n_samples: usize,
    seed: u64,
) -> McEstimate {
    assert!(n_samples >= 10_000, "too few samples");
    let m = ((n_samples / 2) as f64).sqrt().floor() as usize;
    let cell = extent / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum_means = 0.0;
    let mut var = 0.0;
    for j in 0..m {
        for i in 0..m {
            let mut s = [0.0; 2];
            for v in &mut s {
                let p = Point::new(
                    origin.x + (i as f64 + rng.random::<f64>()) * cell,
                    origin.y + (j as f64 + rng.random::<f64>()) * cell,
                );
                *v = if Side::of_value(ls.value(&p)) == side { f(&p) } else { 0.0 };
            }
            sum_means += 0.5 * (s[0] + s[1]);
            // unbiased variance of the stratum mean from two samples
            var += 0.25 * (s[0] - s[1]).powi(2);
        }
    }
    let area = extent * extent;
    let strata = (m * m) as f64;
    McEstimate {
        value: area * sum_means / strata,
        std_error: area / strata * var.sqrt(),
    }
}
