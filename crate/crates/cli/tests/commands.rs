use std::fs;
use std::path::Path;

use agfem::driver::solve_case;
use agfem::mesh::QuadtreeMesh;
use agfem_cli::{execute, CliError, Command, ConfigError, RunConfig};

fn config(text: &str, overrides: &[&str]) -> RunConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::from_text(text, &overrides).expect("valid config")
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).expect("csv file");
    r.records().map(|x| x.expect("record")).collect()
}

const CIRCLE: &str = "benchmark.name = out_fe_space\nbenchmark.shape = circle\nfe.order = 1\n";

#[test]
fn dofs_csv_holds_the_solver_vector() {
    let cfg = config(CIRCLE, &["mesh.initial_level=3", "output.vtk=false", "benchmark.contrast=10"]);
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(Command::Run, &cfg, dir.path()).unwrap();
    assert_eq!(outcome.failures, 0);
    assert_eq!(outcome.files.len(), 2);

    let case = cfg.kind.build(1, 10.0, cfg.nu).unwrap();
    let mesh = QuadtreeMesh::uniform(cfg.domain, 3, cfg.settings.max_level).unwrap();
    let solved = solve_case(&case, mesh, &cfg.settings).unwrap();
    let rows = read_csv(&dir.path().join("dofs.csv"));
    assert_eq!(rows.len(), solved.solution.len());
    for (row, x) in rows.iter().zip(&solved.solution) {
        let v: f64 = row[5].parse().unwrap();
        assert!((v - x).abs() <= 1e-11 * x.abs().max(1e-300), "{v} vs {x}");
    }

    let summary = read_csv(&dir.path().join("summary.csv"));
    let n_free = summary.iter().find(|r| &r[0] == "n_dofs_free").unwrap();
    assert_eq!(n_free[1].parse::<usize>().unwrap(), solved.solution.len());
}

#[test]
fn single_level_has_no_rates() {
    let cfg = config(CIRCLE, &["mesh.levels=3"]);
    let dir = tempfile::tempdir().unwrap();
    execute(Command::Converge, &cfg, dir.path()).unwrap();
    assert_eq!(read_csv(&dir.path().join("converge.csv")).len(), 1);
    let rates = read_csv(&dir.path().join("rates.csv"));
    assert!(!rates.is_empty());
    for r in &rates {
        assert_eq!(&r[1], "");
        assert_eq!(&r[2], "");
    }
}

#[test]
fn two_levels_give_a_slope() {
    let cfg = config(CIRCLE, &["mesh.levels=3,4", "output.plots=false"]);
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(Command::Converge, &cfg, dir.path()).unwrap();
    assert!(!outcome.files.iter().any(|f| f.extension().is_some_and(|e| e == "svg")));
    let rates = read_csv(&dir.path().join("rates.csv"));
    let h1 = rates.iter().find(|r| &r[0] == "rel_h1").unwrap();
    let order: f64 = h1[2].parse().unwrap();
    assert!(order > 0.5 && order < 1.6, "{order}");
}

#[test]
fn sweep_writes_one_row_per_point_and_heatmaps() {
    let cfg = config(
        "benchmark.name = out_fe_space\nbenchmark.shape = flower\nsweep.level = 3\n",
        &["sweep.contrasts=1e-2,1e2", "sweep.scalings=-1,0,1"],
    );
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(Command::Sweep, &cfg, dir.path()).unwrap();
    assert_eq!(read_csv(&dir.path().join("sweep.csv")).len(), 6);
    assert!(dir.path().join("sweep_rel_h1_aggregated.svg").exists());
    assert_eq!(outcome.failures, 0);
}

#[test]
fn cond_sweep_covers_both_modes_without_solving() {
    let cfg = config(
        "benchmark.name = out_fe_space\nbenchmark.shape = circle\nsweep.level = 3\n",
        &["sweep.contrasts=1", "sweep.scalings=0.5", "output.plots=false"],
    );
    let dir = tempfile::tempdir().unwrap();
    execute(Command::Cond, &cfg, dir.path()).unwrap();
    let rows = read_csv(&dir.path().join("cond.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(&r[2], "", "cond sweep must not solve");
        assert!(r[4].parse::<f64>().unwrap() >= 1.0);
    }
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let err = RunConfig::from_text("benchmark.nmae = fichera2d\n", &[]).unwrap_err();
    assert!(matches!(err, ConfigError::UnknownKey(_)));
    assert_eq!(CliError::from(err).exit_code(), 2);

    assert!(RunConfig::from_text(CIRCLE, &["sweep.scalings=2".into()]).is_err());
    assert!(RunConfig::from_text(CIRCLE, &["fe.order=3".into()]).is_err());
    assert!(RunConfig::from_text(CIRCLE, &["nonsense".into()]).is_err());

    let cfg = config(CIRCLE, &["cond.eigen=dense", "sweep.level=8"]);
    let dir = tempfile::tempdir().unwrap();
    let err = execute(Command::Cond, &cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_output_directory_is_created() {
    let cfg = config(CIRCLE, &["mesh.initial_level=3", "output.vtk=true"]);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run");
    let outcome = execute(Command::Run, &cfg, &out).unwrap();
    assert_eq!(outcome.files.len(), 4);
    let vtk = fs::read_to_string(out.join("mesh.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version"));
}
