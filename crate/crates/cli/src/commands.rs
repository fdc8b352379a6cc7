//! The four studies: `converge`, `sweep`, `cond` and `run`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use agfem::assembly::Beta;
use agfem::bench::ManufacturedCase;
use agfem::cutgeom::CellTag;
use agfem::driver::{
    amr_convergence, least_squares_slope, solve_case, sweep, uniform_convergence, ConvergenceRow, DriverError,
    Solved, SweepPoint, SweepSpec,
};
use agfem::fespace::{eval_basis, Mode};
use agfem::geometry::{Point, Side};
use agfem::linalg::Scaling;
use agfem::mesh::QuadtreeMesh;
use log::{info, warn};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::output::{
    fmt_f, heatmap_svg, loglog_svg, mode_name, write_converge_csv, write_rates_csv, write_summary_csv,
    write_sweep_csv, write_vtk, Rate, Series, VtkField, VTK_QUAD, VTK_TRIANGLE,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numerical(#[from] DriverError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Converge,
    Sweep,
    Cond,
    Run,
}

/// Files written and the number of flagged (failed) rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures > 0 {
            3
        } else {
            0
        }
    }
}

pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    fs::create_dir_all(out)?;
    match cmd {
        Command::Converge => converge(cfg, out),
        Command::Sweep => sweep_cmd(cfg, out, false),
        Command::Cond => sweep_cmd(cfg, out, true),
        Command::Run => run(cfg, out),
    }
}

fn build_case(cfg: &RunConfig, contrast: f64) -> Result<ManufacturedCase, DriverError> {
    let case = cfg.kind.build(cfg.settings.order, contrast, cfg.nu)?;
    Ok(match cfg.interface() {
        Some(ls) => case.with_interface(ls),
        None => case,
    })
}

fn create(out: &Path, name: &str, files: &mut Vec<PathBuf>) -> io::Result<BufWriter<File>> {
    let path = out.join(name);
    let f = File::create(&path)?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn write_text(out: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> io::Result<()> {
    let mut w = create(out, name, files)?;
    w.write_all(text.as_bytes())?;
    w.flush()
}

type Metric = (&'static str, fn(&ConvergenceRow) -> f64);

const METRICS: [Metric; 4] = [
    ("rel_h1", |r| r.rel_h1),
    ("rel_l2", |r| r.rel_l2),
    ("rel_energy", |r| r.rel_energy),
    ("energy_density_l2", |r| r.energy_density),
];

/// Slopes over the last three rows.
pub fn rates(rows: &[ConvergenceRow]) -> Vec<Rate> {
    let sqrt_dofs: Vec<f64> = rows.iter().map(|r| (r.n_free as f64).sqrt()).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    METRICS
        .iter()
        .map(|(name, f)| {
            let e: Vec<f64> = rows.iter().map(f).collect();
            Rate {
                metric: name,
                slope_dofs: least_squares_slope(&sqrt_dofs, &e, 3),
                order_h: least_squares_slope(&h, &e, 3),
                points: rows.len().min(3),
            }
        })
        .collect()
}

fn converge(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let case = build_case(cfg, cfg.contrast)?;
    let rows = match &cfg.amr {
        Some(amr) => {
            let o = amr_convergence(&cfg.run_id, &case, cfg.domain, amr, &cfg.settings, cfg.cond)?;
            info!(
                "refined cells: {} in Ω⁺, {} in Ω⁻ over {} passes",
                o.refined_per_side[0], o.refined_per_side[1], o.passes
            );
            o.rows
        }
        None => uniform_convergence(&cfg.run_id, &case, cfg.domain, &cfg.levels, &cfg.settings, cfg.cond)?,
    };
    let mut files = Vec::new();
    write_converge_csv(create(out, "converge.csv", &mut files)?, &rows)?;
    let rates = rates(&rows);
    write_rates_csv(create(out, "rates.csv", &mut files)?, &rates)?;
    if cfg.plots {
        let x: Vec<f64> = rows.iter().map(|r| (r.n_free as f64).sqrt()).collect();
        let series: Vec<Series> = METRICS
            .iter()
            .zip(&rates)
            .map(|((name, f), rate)| Series {
                label: match rate.slope_dofs {
                    Some(s) => format!("{name} (slope {s:.2})"),
                    None => name.to_string(),
                },
                x: x.clone(),
                y: rows.iter().map(f).collect(),
            })
            .collect();
        let title = format!("{}: Q{} {}", cfg.run_id, cfg.settings.order, mode_name(cfg.settings.mode));
        write_text(out, "converge.svg", &loglog_svg(&title, "DOFs^(1/2)", "error", &series), &mut files)?;
    }
    let failures = rows.iter().filter(|r| !r.converged).count();
    for r in rows.iter().filter(|r| !r.converged) {
        warn!("step {} flagged: CG did not converge", r.step);
    }
    Ok(Outcome { files, failures })
}

fn sweep_cmd(cfg: &RunConfig, out: &Path, cond: bool) -> Result<Outcome, CliError> {
    if cond {
        cfg.check_dense_cond()?;
    }
    let default_modes = if cond {
        vec![Mode::Aggregated, Mode::Standard]
    } else {
        vec![Mode::Aggregated]
    };
    let spec = SweepSpec {
        kind: cfg.kind,
        nu: cfg.nu,
        interface: cfg.interface(),
        level: cfg.sweep.level,
        contrasts: cfg.sweep.contrasts.clone(),
        scalings: cfg.sweep.scalings.clone(),
        modes: cfg.sweep.modes.clone().unwrap_or(default_modes),
        solve: !cond,
        cond: cond || cfg.cond,
    };
    let points = sweep(&spec, &cfg.settings);
    let stem = if cond { "cond" } else { "sweep" };
    let mut files = Vec::new();
    write_sweep_csv(create(out, &format!("{stem}.csv"), &mut files)?, &points)?;
    if cfg.plots {
        let x_labels: Vec<String> = spec.scalings.iter().map(|a| format!("{a}")).collect();
        let y_labels: Vec<String> = spec.contrasts.iter().map(|c| format!("{c:.0e}")).collect();
        type Pick = fn(&SweepPoint) -> Option<f64>;
        let mut maps: Vec<(&str, Pick)> = Vec::new();
        if spec.solve {
            maps.push(("rel_h1", |p| p.rel_h1));
        }
        if spec.cond {
            maps.push(("cond2_raw", |p| p.cond_raw.map(|c| c.value)));
            maps.push(("cond2_scaled", |p| p.cond_scaled.map(|c| c.value)));
        }
        for mode in &spec.modes {
            for (name, pick) in &maps {
                let grid: Vec<Vec<Option<f64>>> = spec
                    .contrasts
                    .iter()
                    .map(|c| {
                        spec.scalings
                            .iter()
                            .map(|a| {
                                points
                                    .iter()
                                    .find(|p| p.mode == *mode && p.contrast == *c && p.a == *a)
                                    .and_then(pick)
                            })
                            .collect()
                    })
                    .collect();
                let title = format!("{} {name}, Q{} {}", cfg.kind.name(), cfg.settings.order, mode_name(*mode));
                let svg = heatmap_svg(&title, "a", &x_labels, "contrast", &y_labels, &grid);
                write_text(out, &format!("{stem}_{name}_{}.svg", mode_name(*mode)), &svg, &mut files)?;
            }
        }
    }
    let failures = points.iter().filter(|p| p.flag.is_some()).count();
    for p in points.iter().filter(|p| p.flag.is_some()) {
        warn!(
            "flagged point contrast {:e}, a {}, {}: {}",
            p.contrast,
            p.a,
            mode_name(p.mode),
            p.flag.as_deref().unwrap_or("")
        );
    }
    Ok(Outcome { files, failures })
}

fn tag_code(t: CellTag) -> f64 {
    match t {
        CellTag::Exterior => 0.0,
        CellTag::IllPosed => 1.0,
        CellTag::WellPosed => 2.0,
    }
}

fn run(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let case = build_case(cfg, cfg.contrast)?;
    let mesh = match &cfg.amr {
        Some(amr) => amr_convergence(&cfg.run_id, &case, cfg.domain, amr, &cfg.settings, false)?.final_mesh,
        None => QuadtreeMesh::uniform(cfg.domain, cfg.initial_level, cfg.settings.max_level).map_err(DriverError::from)?,
    };
    let solved = solve_case(&case, mesh, &cfg.settings)?;
    let mut files = Vec::new();
    write_summary_csv(create(out, "summary.csv", &mut files)?, &summary(cfg, &solved)?)?;
    write_dofs_csv(create(out, "dofs.csv", &mut files)?, &solved)?;
    if cfg.vtk {
        write_solution_vtk(create(out, "solution.vtk", &mut files)?, &case, &solved)?;
        write_mesh_vtk(create(out, "mesh.vtk", &mut files)?, &solved)?;
    }
    Ok(Outcome {
        files,
        failures: usize::from(!solved.report.converged),
    })
}

fn summary(cfg: &RunConfig, s: &Solved) -> Result<Vec<(String, String)>, CliError> {
    let d = &s.discrete;
    let e = &s.errors;
    let mut v: Vec<(String, String)> = vec![
        ("run_id".into(), cfg.run_id.clone()),
        ("benchmark".into(), cfg.kind.name().into()),
        ("order".into(), cfg.settings.order.to_string()),
        ("mode".into(), mode_name(cfg.settings.mode).into()),
        ("contrast".into(), fmt_f(cfg.contrast)),
        ("eta0".into(), fmt_f(cfg.settings.eta0)),
        (
            "beta".into(),
            match &d.beta {
                Beta::Fixed(b) => fmt_f(*b),
                Beta::PerCell { .. } => "per_cell".into(),
            },
        ),
        ("n_cells".into(), d.mesh.num_leaves().to_string()),
        ("n_dofs_free".into(), d.space.n_free().to_string()),
    ];
    for (k, n) in d.space.class_counts() {
        v.push((format!("dofs_{k}"), n.to_string()));
    }
    if let Some(stats) = d.aggregate_stats() {
        for (side, st) in Side::BOTH.iter().zip(stats) {
            let tag = if *side == Side::Plus { "plus" } else { "minus" };
            v.push((format!("aggregates_{tag}"), st.count.to_string()));
            v.push((format!("max_aggregate_members_{tag}"), st.max_members.to_string()));
            v.push((format!("max_aggregate_diameter_ratio_{tag}"), fmt_f(st.max_diameter_ratio)));
        }
    }
    v.extend([
        ("cg_iters".into(), s.report.iterations.to_string()),
        ("cg_converged".into(), s.report.converged.to_string()),
        ("cg_relres".into(), fmt_f(s.report.final_relres)),
        ("rel_h1".into(), fmt_f(e.rel_h1)),
        ("rel_l2".into(), fmt_f(e.rel_l2)),
        ("rel_energy".into(), fmt_f(e.rel_energy)),
        ("energy_density_l2".into(), fmt_f(e.energy_density)),
    ]);
    if cfg.cond {
        let c = cfg.settings.cond2(&d.system.matrix, Scaling::SymmetricDiagonal).map_err(DriverError::from)?;
        v.push(("cond2_scaled".into(), fmt_f(c.value)));
        v.push(("cond2_capped".into(), c.lower_bound.to_string()));
    }
    v.push(("wall_ms".into(), s.wall_ms.to_string()));
    Ok(v)
}

/// Position and value of every free DOF, in solver order.
fn write_dofs_csv(w: impl Write, s: &Solved) -> csv::Result<()> {
    let space = &s.discrete.space;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["free_index", "side", "x", "y", "component", "value"])?;
    for (i, d) in space.free_dofs().iter().enumerate() {
        let (side, key, comp) = space.dof_info(*d);
        let p = space.node_position(&key);
        out.write_record([
            i.to_string(),
            side.to_string(),
            fmt_f(p.x),
            fmt_f(p.y),
            comp.to_string(),
            fmt_f(s.solution[i]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Physical sub-triangles of every active cell, one copy per side.
fn side_triangles(s: &Solved) -> Vec<(usize, Side, [Point; 3])> {
    let d = &s.discrete;
    let mut out = Vec::new();
    for (k, (c, class)) in d.mesh.leaves().iter().zip(d.cut.classes()).enumerate() {
        let decomposition = d.cut.decomposition(c).filter(|dec| dec.is_cut());
        for side in Side::BOTH {
            if !class.is_active(side) {
                continue;
            }
            match decomposition {
                Some(dec) => {
                    for (t, s) in dec.triangles() {
                        if s == side {
                            out.push((k, side, t));
                        }
                    }
                }
                None if class.eta(side) > 0.5 => {
                    let (o, h) = d.mesh.cell_box(c);
                    let p = |i: f64, j: f64| Point::new(o.x + i * h, o.y + j * h);
                    out.push((k, side, [p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0)]));
                    out.push((k, side, [p(0.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)]));
                }
                None => {}
            }
        }
    }
    out
}

fn write_solution_vtk(w: impl Write, case: &ManufacturedCase, s: &Solved) -> io::Result<()> {
    let d = &s.discrete;
    let space = &d.space;
    let nc = space.ncomp();
    let values = space.expand(&s.solution);
    let width = if nc == 1 { 1 } else { 3 };
    let mut points = Vec::new();
    let mut cells = Vec::new();
    let (mut uh, mut ue, mut side_code, mut level) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, side, tri) in side_triangles(s) {
        let c = d.mesh.leaves()[k];
        let Some(dofs) = space.cell_dofs(&d.mesh, &c, side) else {
            continue;
        };
        let (o, h) = d.mesh.cell_box(&c);
        let base = points.len();
        for p in &tri {
            let (phi, _) = eval_basis(space.order(), &o, h, p);
            let mut u = [0.0; 3];
            for (a, v) in phi.iter().enumerate() {
                for (comp, slot) in u.iter_mut().enumerate().take(nc) {
                    *slot += values[dofs[a * nc + comp]] * v;
                }
            }
            let exact = case.exact(side, p);
            uh.extend_from_slice(&u[..width]);
            ue.extend_from_slice(&[exact[0], exact[1], 0.0][..width]);
            points.push([p.x, p.y]);
        }
        cells.push(vec![base, base + 1, base + 2]);
        side_code.push(if side == Side::Plus { 1.0 } else { -1.0 });
        level.push(c.level as f64);
    }
    write_vtk(
        w,
        "agfem solution",
        &points,
        &cells,
        VTK_TRIANGLE,
        &[
            VtkField {
                name: "u_h".into(),
                ncomp: width,
                values: uh,
            },
            VtkField {
                name: "u_exact".into(),
                ncomp: width,
                values: ue,
            },
        ],
        &[
            VtkField {
                name: "side".into(),
                ncomp: 1,
                values: side_code,
            },
            VtkField {
                name: "level".into(),
                ncomp: 1,
                values: level,
            },
        ],
    )
}

fn write_mesh_vtk(w: impl Write, s: &Solved) -> io::Result<()> {
    let d = &s.discrete;
    let mesh = &d.mesh;
    let mut points = Vec::new();
    let mut cells = Vec::new();
    for c in mesh.leaves() {
        let (o, h) = mesh.cell_box(c);
        let base = points.len();
        points.extend([[o.x, o.y], [o.x + h, o.y], [o.x + h, o.y + h], [o.x, o.y + h]]);
        cells.push((base..base + 4).collect());
    }
    let classes = d.cut.classes();
    let field = |name: &str, values: Vec<f64>| VtkField {
        name: name.into(),
        ncomp: 1,
        values,
    };
    let root_index = |side: Side| -> Vec<f64> {
        mesh.leaves()
            .iter()
            .map(|c| {
                d.roots
                    .as_ref()
                    .and_then(|r| r[side.index()].root(c))
                    .and_then(|r| mesh.leaf_index(&r))
                    .map_or(-1.0, |k| k as f64)
            })
            .collect()
    };
    let mut data = vec![
        field("level", mesh.leaves().iter().map(|c| c.level as f64).collect()),
        field("eta_plus", classes.iter().map(|k| k.eta(Side::Plus)).collect()),
        field("eta_minus", classes.iter().map(|k| k.eta(Side::Minus)).collect()),
        field("tag_plus", classes.iter().map(|k| tag_code(k.tag(Side::Plus))).collect()),
        field("tag_minus", classes.iter().map(|k| tag_code(k.tag(Side::Minus))).collect()),
    ];
    if d.roots.is_some() {
        data.push(field("root_plus", root_index(Side::Plus)));
        data.push(field("root_minus", root_index(Side::Minus)));
    }
    data.push(field("energy_error", s.errors.per_cell_energy()));
    write_vtk(w, "agfem mesh", &points, &cells, VTK_QUAD, &[], &data)
}
