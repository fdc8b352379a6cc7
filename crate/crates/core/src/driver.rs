//! End-to-end pipelines: discretize, solve, measure; convergence, AMR and sweep studies.

use std::time::Instant;

use log::{debug, info, warn};
use thiserror::Error;

use crate::aggregation::{aggregate_diagnostics, build_root_map_with, AggregateStats, AggregationError, RootMap};
use crate::assembly::{assemble, default_beta, stdfe_betas, AssemblyError, Beta};
use crate::bench::{error_norms, li_bettess_mark, Benchmark, ErrorReport, ManufacturedCase, Shape, DEFAULT_NU};
use crate::cutgeom::{classify_cells, default_depth, CellTag, CutError, CutGeometry, DEFAULT_ETA0};
use crate::fespace::{build_space, FeSpace, FeSpaceError, Mode};
use crate::geometry::{LevelSet, Point, Side};
use crate::linalg::{
    cond2_estimate_seeded, pcg, CondEstimate, EigenMethod, LinalgError, Scaling, SolveReport, SparseSystem,
};
use crate::mesh::{DomainBox, MeshError, QuadtreeMesh, DEFAULT_MAX_LEVEL};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Space(#[from] FeSpaceError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{0}")]
    Invalid(String),
}

/// Which manufactured problem, independent of material values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaseKind {
    OutFeSpace(Shape),
    Fichera2d,
    DiskInclusion,
}

impl CaseKind {
    /// Case with `c⁻ = 1` and `c⁺ = contrast`.
    pub fn build(&self, order: usize, contrast: f64, nu: f64) -> Result<ManufacturedCase, DriverError> {
        Ok(match self {
            CaseKind::OutFeSpace(shape) => ManufacturedCase::out_fe_space(order, *shape, contrast, 1.0)?,
            CaseKind::Fichera2d => ManufacturedCase::fichera2d(contrast, 1.0)?,
            CaseKind::DiskInclusion => ManufacturedCase::disk_inclusion(contrast, 1.0, nu)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CaseKind::OutFeSpace(Shape::Circle) => "out_fe_space_circle",
            CaseKind::OutFeSpace(Shape::Flower) => "out_fe_space_flower",
            CaseKind::Fichera2d => "fichera2d",
            CaseKind::DiskInclusion => "disk_inclusion",
        }
    }
}

/// Discretization and solver knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub order: usize,
    pub mode: Mode,
    pub eta0: f64,
    /// Overrides `10 q²` (aggregated) or the per-cell StdFE values.
    pub beta: Option<f64>,
    /// Sub-division depth of cut cells; derived from the level set when absent.
    pub depth: Option<u32>,
    pub tol: f64,
    pub maxit: usize,
    pub max_level: u8,
    /// Record wall-clock times (otherwise 0, keeping outputs reproducible).
    pub timing: bool,
    /// Eigenvalue method of condition estimates.
    pub eigen: EigenMethod,
    /// Seed of randomised start vectors.
    pub seed: u64,
}

impl Settings {
    pub fn cond2(&self, a: &crate::linalg::CsrMatrix, scaling: Scaling) -> Result<CondEstimate, LinalgError> {
        cond2_estimate_seeded(a, scaling, self.eigen, self.seed)
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            order: 1,
            mode: Mode::Aggregated,
            eta0: DEFAULT_ETA0,
            beta: None,
            depth: None,
            tol: crate::linalg::DEFAULT_TOL,
            maxit: crate::linalg::DEFAULT_MAXIT,
            max_level: DEFAULT_MAX_LEVEL,
            timing: false,
            eigen: EigenMethod::Auto,
            seed: crate::linalg::DEFAULT_SEED,
        }
    }
}

/// Everything built for one mesh.
pub struct Discrete {
    pub mesh: QuadtreeMesh,
    pub cut: CutGeometry,
    pub roots: Option<[RootMap; 2]>,
    pub space: FeSpace,
    pub beta: Beta,
    pub system: SparseSystem,
}

impl Discrete {
    pub fn aggregate_stats(&self) -> Option<[AggregateStats; 2]> {
        self.roots
            .as_ref()
            .map(|r| [aggregate_diagnostics(&r[0], &self.mesh), aggregate_diagnostics(&r[1], &self.mesh)])
    }
}

pub fn discretize(case: &ManufacturedCase, mesh: QuadtreeMesh, settings: &Settings) -> Result<Discrete, DriverError> {
    let ls = case.levelset();
    let depth = settings.depth.unwrap_or_else(|| default_depth(&ls));
    let cut = classify_cells(&mesh, &ls, settings.eta0, depth)?;
    let roots = match settings.mode {
        Mode::Aggregated => {
            let map = |side| {
                build_root_map_with(&mesh, cut.classes(), side, &|c| cut.physical_centroid(&mesh, c, side))
            };
            Some([map(Side::Plus)?, map(Side::Minus)?])
        }
        Mode::Standard => None,
    };
    let dirichlet = |s: Side, p: &Point, k: usize| case.dirichlet(s, p, k);
    let space = build_space(
        &mesh,
        cut.classes(),
        roots.as_ref(),
        settings.order,
        case.ncomp(),
        settings.mode,
        &dirichlet,
    )?;
    let beta = match (settings.beta, settings.mode) {
        (Some(b), _) => Beta::Fixed(b),
        (None, Mode::Aggregated) => Beta::Fixed(default_beta(settings.order)),
        (None, Mode::Standard) => Beta::PerCell {
            default: default_beta(settings.order),
            cells: stdfe_betas(&mesh, &cut, &case.material, settings.order)?,
        },
    };
    let system = assemble(&mesh, &cut, &space, &case.material, &beta, case)?;
    Ok(Discrete {
        mesh,
        cut,
        roots,
        space,
        beta,
        system,
    })
}

pub struct Solved {
    pub discrete: Discrete,
    pub solution: Vec<f64>,
    pub report: SolveReport,
    pub errors: ErrorReport,
    pub wall_ms: u64,
}

pub fn solve_case(case: &ManufacturedCase, mesh: QuadtreeMesh, settings: &Settings) -> Result<Solved, DriverError> {
    let start = Instant::now();
    let discrete = discretize(case, mesh, settings)?;
    let (solution, report) = pcg(&discrete.system.matrix, &discrete.system.rhs, settings.tol, settings.maxit);
    if !report.converged {
        warn!(
            "CG stopped after {} iterations at relative residual {:e}",
            report.iterations, report.final_relres
        );
    }
    let errors = error_norms(&discrete.mesh, &discrete.cut, &discrete.space, case, &solution)?;
    let wall_ms = if settings.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    debug!(
        "{} cells, {} free dofs, {} CG iterations, rel H1 {:e}",
        discrete.mesh.num_leaves(),
        discrete.space.n_free(),
        report.iterations,
        errors.rel_h1
    );
    Ok(Solved {
        discrete,
        solution,
        report,
        errors,
        wall_ms,
    })
}

/// One row of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub run_id: String,
    pub step: usize,
    /// Smallest cell size.
    pub h: f64,
    pub n_cells: usize,
    pub n_free: usize,
    pub rel_h1: f64,
    pub rel_l2: f64,
    pub rel_energy: f64,
    pub energy_density: f64,
    pub cg_iters: usize,
    pub converged: bool,
    pub cond_scaled: Option<f64>,
    pub wall_ms: u64,
}

fn min_cell_size(mesh: &QuadtreeMesh) -> f64 {
    mesh.leaves().iter().map(|c| mesh.cell_size(c)).fold(f64::INFINITY, f64::min)
}

fn row_of(run_id: &str, step: usize, s: &Solved, settings: &Settings, with_cond: bool) -> Result<ConvergenceRow, DriverError> {
    let cond_scaled = if with_cond {
        Some(settings.cond2(&s.discrete.system.matrix, Scaling::SymmetricDiagonal)?.value)
    } else {
        None
    };
    Ok(ConvergenceRow {
        run_id: run_id.to_string(),
        step,
        h: min_cell_size(&s.discrete.mesh),
        n_cells: s.discrete.mesh.num_leaves(),
        n_free: s.discrete.space.n_free(),
        rel_h1: s.errors.rel_h1,
        rel_l2: s.errors.rel_l2,
        rel_energy: s.errors.rel_energy,
        energy_density: s.errors.energy_density,
        cg_iters: s.report.iterations,
        converged: s.report.converged,
        cond_scaled,
        wall_ms: s.wall_ms,
    })
}

/// Uniform refinement over `levels` of `domain`.
pub fn uniform_convergence(
    run_id: &str,
    case: &ManufacturedCase,
    domain: DomainBox,
    levels: &[u8],
    settings: &Settings,
    with_cond: bool,
) -> Result<Vec<ConvergenceRow>, DriverError> {
    let mut rows = Vec::with_capacity(levels.len());
    for (step, level) in levels.iter().enumerate() {
        let mesh = QuadtreeMesh::uniform(domain, *level, settings.max_level)?;
        let solved = solve_case(case, mesh, settings)?;
        let row = row_of(run_id, step, &solved, settings, with_cond)?;
        info!(
            "{run_id} level {level}: n = {}, rel H1 {:.3e}, rel energy {:.3e}",
            row.n_free, row.rel_h1, row.rel_energy
        );
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmrSettings {
    pub start_level: u8,
    /// Decreasing target relative energy errors; each yields one point of the curve.
    pub targets: Vec<f64>,
    /// Remeshing passes allowed per target.
    pub max_passes: usize,
    /// Stop once the free-DOF count exceeds this.
    pub max_dofs: usize,
}

/// `first · ratio^k`, `k = 0..count`.
pub fn geometric_targets(first: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| first * ratio.powi(k as i32)).collect()
}

impl Default for AmrSettings {
    fn default() -> Self {
        AmrSettings {
            start_level: 3,
            targets: geometric_targets(0.02, 0.6, 8),
            max_passes: 25,
            max_dofs: 200_000,
        }
    }
}

pub struct AmrOutcome {
    /// One row per target reached, on the mesh that satisfies it.
    pub rows: Vec<ConvergenceRow>,
    /// Cells marked for refinement over all passes, attributed to the side holding most of their area.
    pub refined_per_side: [usize; 2],
    pub passes: usize,
    pub final_mesh: QuadtreeMesh,
}

/// Li–Bettess adaptive loop: for each target the mesh is refined (and coarsened) until no cell
/// exceeds the permissible error, then the resulting mesh is recorded.
pub fn amr_convergence(
    run_id: &str,
    case: &ManufacturedCase,
    domain: DomainBox,
    amr: &AmrSettings,
    settings: &Settings,
    with_cond: bool,
) -> Result<AmrOutcome, DriverError> {
    let ls = case.levelset();
    let mut mesh = refine_coarse_ill_posed(
        QuadtreeMesh::uniform(domain, amr.start_level, settings.max_level)?,
        &ls,
        settings,
    )?;
    let mut rows = Vec::new();
    let mut refined = [0usize; 2];
    let mut passes = 0;
    'targets: for (step, &target) in amr.targets.iter().enumerate() {
        for pass in 0..=amr.max_passes {
            let solved = solve_case(case, mesh.clone(), settings)?;
            let errors = &solved.errors;
            let marks = li_bettess_mark(&mesh, &errors.per_cell_energy(), errors.u_energy, target);
            let refine: Vec<_> = marks
                .refine
                .iter()
                .copied()
                .filter(|c| c.level < settings.max_level)
                .collect();
            let too_big = solved.discrete.space.n_free() > amr.max_dofs;
            if refine.is_empty() || pass == amr.max_passes || too_big {
                if !refine.is_empty() && !too_big {
                    warn!("{run_id}: target {target:e} not reached after {pass} passes");
                }
                let row = row_of(run_id, step, &solved, settings, with_cond)?;
                info!(
                    "{run_id} target {target:.3e}: {} cells, n = {}, rel energy {:.3e}",
                    row.n_cells, row.n_free, row.rel_energy
                );
                rows.push(row);
                if too_big {
                    break 'targets;
                }
                break;
            }
            for c in &refine {
                let k = mesh.leaf_index(c).expect("marked cell is a leaf");
                let class = &solved.discrete.cut.classes()[k];
                let side = if class.eta(Side::Plus) >= class.eta(Side::Minus) {
                    Side::Plus
                } else {
                    Side::Minus
                };
                refined[side.index()] += 1;
            }
            passes += 1;
            debug!("{run_id} pass {pass}: refine {}, coarsen {}", refine.len(), marks.coarsen.len());
            mesh = mesh.refine_and_coarsen(&refine, &marks.coarsen)?;
            mesh = refine_coarse_ill_posed(mesh, &ls, settings)?;
        }
    }
    Ok(AmrOutcome {
        rows,
        refined_per_side: refined,
        passes,
        final_mesh: mesh,
    })
}

/// Refines cells that are ill-posed on some side and coarser than an edge neighbour, until none
/// remain. Otherwise a hanging node of the finer root can be constrained by the very DOFs that are
/// aggregated onto it.
pub fn refine_coarse_ill_posed(
    mut mesh: QuadtreeMesh,
    ls: &LevelSet,
    settings: &Settings,
) -> Result<QuadtreeMesh, DriverError> {
    let depth = settings.depth.unwrap_or_else(|| default_depth(ls));
    loop {
        let cut = classify_cells(&mesh, ls, settings.eta0, depth)?;
        let marked: Vec<_> = mesh
            .leaves()
            .iter()
            .zip(cut.classes())
            .filter(|(c, class)| {
                c.level < settings.max_level
                    && Side::BOTH.iter().any(|s| class.tag(*s) == CellTag::IllPosed)
                    && mesh.edge_neighbors(c).iter().any(|(n, _)| n.level > c.level)
            })
            .map(|(c, _)| *c)
            .collect();
        if marked.is_empty() {
            return Ok(mesh);
        }
        debug!("refining {} coarse ill-posed cells", marked.len());
        mesh = mesh.refine_and_coarsen(&marked, &[])?;
    }
}

/// Slope of the least-squares fit of `log err` against `log x` over the last `last` points.
pub fn least_squares_slope(x: &[f64], err: &[f64], last: usize) -> Option<f64> {
    let n = x.len().min(err.len());
    if n < 2 {
        return None;
    }
    let k = last.min(n).max(2);
    let xs: Vec<f64> = x[n - k..].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err[n - k..].iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// One `(contrast, a, mode)` point of a robustness sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub contrast: f64,
    pub a: f64,
    pub mode: Mode,
    pub rel_h1: Option<f64>,
    pub cond_raw: Option<CondEstimate>,
    pub cond_scaled: Option<CondEstimate>,
    /// Why the point failed (unconverged solve or error); capped estimates are not failures.
    pub flag: Option<String>,
}

impl SweepPoint {
    pub fn capped(&self) -> bool {
        self.cond_raw.is_some_and(|c| c.lower_bound) || self.cond_scaled.is_some_and(|c| c.lower_bound)
    }
}

/// Sweep grid definition.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub kind: CaseKind,
    pub nu: f64,
    /// Replaces the case's interface (see [`ManufacturedCase::with_interface`]).
    pub interface: Option<LevelSet>,
    pub level: u8,
    pub contrasts: Vec<f64>,
    pub scalings: Vec<f64>,
    pub modes: Vec<Mode>,
    pub solve: bool,
    pub cond: bool,
}

pub fn default_contrasts() -> Vec<f64> {
    (-6..=6).map(|e| 10f64.powi(e)).collect()
}

pub fn default_scalings() -> Vec<f64> {
    (0..9).map(|i| -1.0 + 0.25 * i as f64).collect()
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            kind: CaseKind::OutFeSpace(Shape::Flower),
            nu: DEFAULT_NU,
            interface: None,
            level: 5,
            contrasts: default_contrasts(),
            scalings: default_scalings(),
            modes: vec![Mode::Aggregated],
            solve: true,
            cond: false,
        }
    }
}

/// Domain `[0, 1 + a h]²` keeping `2^level` cells per side.
pub fn scaled_domain(level: u8, a: f64) -> DomainBox {
    let h = 1.0 / (1u64 << level) as f64;
    DomainBox::new(Point::origin(), 1.0 + a * h)
}

/// Evaluates one grid point; failures are recorded in the returned flag.
pub fn sweep_point(spec: &SweepSpec, contrast: f64, a: f64, mode: Mode, settings: &Settings) -> SweepPoint {
    let mut point = SweepPoint {
        contrast,
        a,
        mode,
        rel_h1: None,
        cond_raw: None,
        cond_scaled: None,
        flag: None,
    };
    let result = (|| -> Result<(), DriverError> {
        let mut case = spec.kind.build(settings.order, contrast, spec.nu)?;
        if let Some(ls) = &spec.interface {
            case = case.with_interface(ls.clone());
        }
        let mesh = QuadtreeMesh::uniform(scaled_domain(spec.level, a), spec.level, settings.max_level)?;
        let s = Settings {
            mode,
            ..settings.clone()
        };
        let discrete = if spec.solve {
            let solved = solve_case(&case, mesh, &s)?;
            point.rel_h1 = Some(solved.errors.rel_h1);
            if !solved.report.converged {
                point.flag = Some(format!("cg did not converge ({:e})", solved.report.final_relres));
            }
            solved.discrete
        } else {
            discretize(&case, mesh, &s)?
        };
        if spec.cond {
            point.cond_raw = Some(s.cond2(&discrete.system.matrix, Scaling::None)?);
            point.cond_scaled = Some(s.cond2(&discrete.system.matrix, Scaling::SymmetricDiagonal)?);
        }
        Ok(())
    })();
    if let Err(e) = result {
        warn!("sweep point (contrast {contrast:e}, a {a}, {mode:?}) failed: {e}");
        point.flag = Some(e.to_string());
    }
    point
}

/// Full grid in (mode, contrast, a) order.
pub fn sweep(spec: &SweepSpec, settings: &Settings) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for mode in &spec.modes {
        for contrast in &spec.contrasts {
            for a in &spec.scalings {
                out.push(sweep_point(spec, *contrast, *a, *mode, settings));
            }
        }
    }
    out
}

/// Name of a benchmark for reporting.
pub fn benchmark_name(b: &Benchmark) -> &'static str {
    match b {
        Benchmark::OutFeSpace { shape: Shape::Circle, .. } => "out_fe_space_circle",
        Benchmark::OutFeSpace { shape: Shape::Flower, .. } => "out_fe_space_flower",
        Benchmark::Fichera2d => "fichera2d",
        Benchmark::DiskInclusion => "disk_inclusion",
    }
}
