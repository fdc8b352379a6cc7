//! Flat `section.key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments (and `--set` overrides)
//! replace earlier ones. Every key is checked against [`KNOWN_KEYS`] before anything is parsed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use agfem::bench::{Shape, DEFAULT_NU, PACMAN_CENTER, PACMAN_RADIUS, PACMAN_SECTOR};
use agfem::cutgeom::DEFAULT_ETA0;
use agfem::driver::{default_contrasts, default_scalings, geometric_targets, AmrSettings, CaseKind, Settings};
use agfem::fespace::Mode;
use agfem::geometry::{
    circle_levelset, flower_levelset_with, halfplane_levelset, pacman_levelset, LevelSet, Point, ShapeParams, Vec2,
};
use agfem::linalg::{EigenMethod, DEFAULT_MAXIT, DEFAULT_SEED, DEFAULT_TOL, DENSE_EIGEN_LIMIT};
use agfem::mesh::{DomainBox, DEFAULT_MAX_LEVEL, MAX_SUPPORTED_LEVEL};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
}

fn bad(key: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "run.id",
    "run.seed",
    "run.timing",
    "benchmark.name",
    "benchmark.shape",
    "benchmark.contrast",
    "benchmark.nu",
    "geometry.kind",
    "geometry.center",
    "geometry.radius",
    "geometry.amplitude",
    "geometry.lobes",
    "geometry.normal",
    "geometry.offset",
    "geometry.sector",
    "geometry.depth",
    "fe.order",
    "fe.mode",
    "fe.eta0",
    "fe.beta",
    "mesh.domain",
    "mesh.levels",
    "mesh.initial_level",
    "mesh.max_level",
    "amr.enabled",
    "amr.start_level",
    "amr.targets",
    "amr.first_target",
    "amr.target_ratio",
    "amr.num_targets",
    "amr.max_passes",
    "amr.max_dofs",
    "sweep.level",
    "sweep.contrasts",
    "sweep.scalings",
    "sweep.modes",
    "solver.tol",
    "solver.maxit",
    "cond.eigen",
    "output.cond",
    "output.plots",
    "output.vtk",
];

/// Key/value pairs as written, before validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: line.to_string(),
            })?;
            raw.insert(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        self.insert(k.trim(), v.trim())
    }

    fn insert(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted key {key}");
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| bad(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| bad(key, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn point(&self, key: &str) -> Result<Option<[f64; 2]>, ConfigError> {
        match self.list::<f64>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some([v[0], v[1]])),
            Some(_) => Err(bad(key, "expected two comma-separated numbers")),
        }
    }
}

/// Grid of the robustness and conditioning sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub level: u8,
    pub contrasts: Vec<f64>,
    pub scalings: Vec<f64>,
    /// `None` lets the command choose (sweep: aggregated; cond: both).
    pub modes: Option<Vec<Mode>>,
}

/// Interface requested through `geometry.*`.
#[derive(Clone, Debug, PartialEq)]
pub enum GeometrySpec {
    Circle { center: [f64; 2], radius: f64 },
    Flower { params: ShapeParams },
    HalfPlane { normal: [f64; 2], offset: f64 },
    Pacman { center: [f64; 2], radius: f64, sector: (f64, f64) },
}

impl GeometrySpec {
    pub fn levelset(&self) -> LevelSet {
        match self {
            GeometrySpec::Circle { center, radius } => circle_levelset(Point::new(center[0], center[1]), *radius),
            GeometrySpec::Flower { params } => flower_levelset_with(params),
            GeometrySpec::HalfPlane { normal, offset } => halfplane_levelset(Vec2::new(normal[0], normal[1]), *offset),
            GeometrySpec::Pacman { center, radius, sector } => {
                pacman_levelset(Point::new(center[0], center[1]), *radius, *sector)
            }
        }
    }
}

/// Validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub kind: CaseKind,
    pub contrast: f64,
    pub nu: f64,
    /// Interface override (out-of-FE-space benchmark only).
    pub geometry: Option<GeometrySpec>,
    pub settings: Settings,
    pub domain: DomainBox,
    pub levels: Vec<u8>,
    pub initial_level: u8,
    pub amr: Option<AmrSettings>,
    pub sweep: SweepGrid,
    pub cond: bool,
    pub plots: bool,
    pub vtk: bool,
}

fn parse_mode(key: &str, v: &str) -> Result<Mode, ConfigError> {
    match v {
        "aggregated" => Ok(Mode::Aggregated),
        "standard" => Ok(Mode::Standard),
        _ => Err(bad(key, format!("`{v}` is not one of aggregated, standard"))),
    }
}

fn parse_levels(key: &str, v: &str) -> Result<Vec<u8>, ConfigError> {
    let level = |s: &str| s.trim().parse::<u8>().map_err(|e| bad(key, format!("`{s}`: {e}")));
    if let Some((lo, hi)) = v.split_once("..") {
        let (lo, hi) = (level(lo)?, level(hi)?);
        if lo > hi {
            return Err(bad(key, format!("empty range {v}")));
        }
        return Ok((lo..=hi).collect());
    }
    v.split(',').filter(|s| !s.trim().is_empty()).map(level).collect()
}

fn check_level(key: &str, level: u8, max_level: u8) -> Result<(), ConfigError> {
    if level > max_level {
        return Err(bad(key, format!("level {level} exceeds mesh.max_level = {max_level}")));
    }
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set(o)?;
        }
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let kind = match raw.get("benchmark.name").unwrap_or("out_fe_space") {
            "out_fe_space" => {
                let shape = match raw.get("benchmark.shape").unwrap_or("circle") {
                    "circle" => Shape::Circle,
                    "flower" => Shape::Flower,
                    s => return Err(bad("benchmark.shape", format!("`{s}` is not one of circle, flower"))),
                };
                CaseKind::OutFeSpace(shape)
            }
            "fichera2d" => CaseKind::Fichera2d,
            "disk_inclusion" => CaseKind::DiskInclusion,
            s => {
                return Err(bad(
                    "benchmark.name",
                    format!("`{s}` is not one of out_fe_space, fichera2d, disk_inclusion"),
                ))
            }
        };
        if raw.get("benchmark.shape").is_some() && !matches!(kind, CaseKind::OutFeSpace(_)) {
            return Err(bad("benchmark.shape", "only meaningful for out_fe_space"));
        }
        let contrast = positive("benchmark.contrast", raw.or("benchmark.contrast", 1.0)?)?;
        let nu: f64 = raw.or("benchmark.nu", DEFAULT_NU)?;
        if !(0.0..0.5).contains(&nu) {
            return Err(bad("benchmark.nu", format!("must lie in [0, 0.5), got {nu}")));
        }
        if raw.get("benchmark.nu").is_some() && kind != CaseKind::DiskInclusion {
            return Err(bad("benchmark.nu", "only meaningful for disk_inclusion"));
        }
        let geometry = geometry_spec(raw, kind)?;

        let order: usize = raw.or("fe.order", 1)?;
        if !(1..=2).contains(&order) {
            return Err(bad("fe.order", format!("supported orders are 1 and 2, got {order}")));
        }
        let mode = parse_mode("fe.mode", raw.get("fe.mode").unwrap_or("aggregated"))?;
        let eta0: f64 = raw.or("fe.eta0", DEFAULT_ETA0)?;
        if !(eta0 > 0.0 && eta0 < 1.0) {
            return Err(bad("fe.eta0", format!("must lie in (0, 1), got {eta0}")));
        }
        let beta = raw.parsed::<f64>("fe.beta")?.map(|b| positive("fe.beta", b)).transpose()?;
        let depth = raw.parsed::<u32>("geometry.depth")?;
        if depth.is_some_and(|d| d > 12) {
            return Err(bad("geometry.depth", "at most 12"));
        }
        let tol = positive("solver.tol", raw.or("solver.tol", DEFAULT_TOL)?)?;
        let maxit: usize = raw.or("solver.maxit", DEFAULT_MAXIT)?;
        if maxit == 0 {
            return Err(bad("solver.maxit", "must be at least 1"));
        }
        let max_level: u8 = raw.or("mesh.max_level", DEFAULT_MAX_LEVEL)?;
        if max_level > MAX_SUPPORTED_LEVEL {
            return Err(bad("mesh.max_level", format!("at most {MAX_SUPPORTED_LEVEL}")));
        }
        let eigen = match raw.get("cond.eigen").unwrap_or("auto") {
            "auto" => EigenMethod::Auto,
            "dense" => EigenMethod::Dense,
            "lanczos" => EigenMethod::Lanczos,
            s => return Err(bad("cond.eigen", format!("`{s}` is not one of auto, dense, lanczos"))),
        };
        let settings = Settings {
            order,
            mode,
            eta0,
            beta,
            depth,
            tol,
            maxit,
            max_level,
            timing: raw.or("run.timing", false)?,
            eigen,
            seed: raw.or("run.seed", DEFAULT_SEED)?,
        };

        let domain = match raw.list::<f64>("mesh.domain")? {
            None => DomainBox::unit(),
            Some(v) if v.len() == 3 => DomainBox::new(Point::new(v[0], v[1]), positive("mesh.domain", v[2])?),
            Some(_) => return Err(bad("mesh.domain", "expected `x0, y0, extent`")),
        };
        let levels = match raw.get("mesh.levels") {
            Some(v) => parse_levels("mesh.levels", v)?,
            None => (3..=7).collect(),
        };
        if levels.is_empty() {
            return Err(bad("mesh.levels", "no levels given"));
        }
        for l in &levels {
            check_level("mesh.levels", *l, max_level)?;
        }
        let initial_level: u8 = raw.or("mesh.initial_level", 5)?;
        check_level("mesh.initial_level", initial_level, max_level)?;

        let amr = if raw.or("amr.enabled", false)? {
            let defaults = AmrSettings::default();
            let targets = match raw.list::<f64>("amr.targets")? {
                Some(t) => {
                    for k in ["amr.first_target", "amr.target_ratio", "amr.num_targets"] {
                        if raw.get(k).is_some() {
                            return Err(bad(k, "conflicts with amr.targets"));
                        }
                    }
                    t
                }
                None => {
                    let first = raw.or("amr.first_target", defaults.targets[0])?;
                    let ratio: f64 = raw.or("amr.target_ratio", 0.6)?;
                    if !(ratio > 0.0 && ratio < 1.0) {
                        return Err(bad("amr.target_ratio", format!("must lie in (0, 1), got {ratio}")));
                    }
                    geometric_targets(first, ratio, raw.or("amr.num_targets", defaults.targets.len())?)
                }
            };
            for t in &targets {
                positive("amr.targets", *t)?;
            }
            let start_level = raw.or("amr.start_level", defaults.start_level)?;
            check_level("amr.start_level", start_level, max_level)?;
            Some(AmrSettings {
                start_level,
                targets,
                max_passes: raw.or("amr.max_passes", defaults.max_passes)?,
                max_dofs: raw.or("amr.max_dofs", defaults.max_dofs)?,
            })
        } else {
            None
        };

        let default_sweep_level = match kind {
            CaseKind::DiskInclusion => 5 - order as u8,
            _ => 6 - order as u8,
        };
        let sweep_level = raw.or("sweep.level", default_sweep_level)?;
        check_level("sweep.level", sweep_level, max_level)?;
        let contrasts = raw.list::<f64>("sweep.contrasts")?.unwrap_or_else(default_contrasts);
        for c in &contrasts {
            positive("sweep.contrasts", *c)?;
        }
        let scalings = raw.list::<f64>("sweep.scalings")?.unwrap_or_else(default_scalings);
        if let Some(a) = scalings.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(bad("sweep.scalings", format!("scaling {a} outside [-1, 1]")));
        }
        let modes = raw
            .get("sweep.modes")
            .map(|v| {
                v.split(',')
                    .map(|s| parse_mode("sweep.modes", s.trim()))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        if contrasts.is_empty() || scalings.is_empty() || modes.as_ref().is_some_and(Vec::is_empty) {
            return Err(bad("sweep", "empty grid"));
        }

        let run_id = raw.get("run.id").map(str::to_string).unwrap_or_else(|| kind.name().to_string());
        if run_id.is_empty() || run_id.contains([',', '"', '\n']) {
            return Err(bad("run.id", "must be non-empty without commas or quotes"));
        }

        Ok(RunConfig {
            run_id,
            kind,
            contrast,
            nu,
            geometry,
            settings,
            domain,
            levels,
            initial_level,
            amr,
            sweep: SweepGrid {
                level: sweep_level,
                contrasts,
                scalings,
                modes,
            },
            cond: raw.or("output.cond", false)?,
            plots: raw.or("output.plots", true)?,
            vtk: raw.or("output.vtk", true)?,
        })
    }

    pub fn interface(&self) -> Option<LevelSet> {
        self.geometry.as_ref().map(GeometrySpec::levelset)
    }

    /// Upper bound on the free-DOF count of a uniform mesh of `level` (both sides fully active).
    pub fn dof_bound(&self, level: u8) -> usize {
        let per_side = (1usize << level) * self.settings.order + 1;
        let ncomp = if self.kind == CaseKind::DiskInclusion { 2 } else { 1 };
        2 * ncomp * per_side * per_side
    }

    /// Checks that a sweep forced onto dense eigenvalues stays within the dense limit.
    pub fn check_dense_cond(&self) -> Result<(), ConfigError> {
        let bound = self.dof_bound(self.sweep.level);
        if self.settings.eigen == EigenMethod::Dense && bound > DENSE_EIGEN_LIMIT {
            return Err(bad(
                "cond.eigen",
                format!(
                    "dense eigenvalues need n ≤ {DENSE_EIGEN_LIMIT}, but sweep.level {} allows up to {bound} unknowns",
                    self.sweep.level
                ),
            ));
        }
        Ok(())
    }
}

fn geometry_spec(raw: &RawConfig, kind: CaseKind) -> Result<Option<GeometrySpec>, ConfigError> {
    let shape_keys = [
        "geometry.center",
        "geometry.radius",
        "geometry.amplitude",
        "geometry.lobes",
        "geometry.normal",
        "geometry.offset",
        "geometry.sector",
    ];
    let Some(name) = raw.get("geometry.kind") else {
        if let Some(k) = shape_keys.iter().find(|k| raw.get(k).is_some()) {
            return Err(bad(k, "requires geometry.kind"));
        }
        return Ok(None);
    };
    if !matches!(kind, CaseKind::OutFeSpace(_)) {
        return Err(bad(
            "geometry.kind",
            format!("the {} solution is tied to its own interface", kind.name()),
        ));
    }
    let allowed: &[&str] = match name {
        "circle" => &["geometry.center", "geometry.radius"],
        "flower" => &["geometry.center", "geometry.radius", "geometry.amplitude", "geometry.lobes"],
        "halfplane" => &["geometry.normal", "geometry.offset"],
        "pacman" => &["geometry.center", "geometry.radius", "geometry.sector"],
        s => {
            return Err(bad(
                "geometry.kind",
                format!("`{s}` is not one of circle, flower, halfplane, pacman"),
            ))
        }
    };
    if let Some(k) = shape_keys.iter().find(|k| raw.get(k).is_some() && !allowed.contains(k)) {
        return Err(bad(k, format!("not a parameter of geometry.kind = {name}")));
    }
    let spec = match name {
        "circle" => GeometrySpec::Circle {
            center: raw.point("geometry.center")?.unwrap_or([0.0, 0.0]),
            radius: positive("geometry.radius", raw.or("geometry.radius", 0.7)?)?,
        },
        "flower" => {
            let d = ShapeParams::default();
            let c = raw.point("geometry.center")?.unwrap_or([0.0, 0.0]);
            let params = ShapeParams {
                center: Point::new(c[0], c[1]),
                radius: raw.or("geometry.radius", d.radius)?,
                flower_amplitude: raw.or("geometry.amplitude", d.flower_amplitude)?,
                flower_lobes: raw.or("geometry.lobes", d.flower_lobes)?,
                ..d
            };
            params.validate().map_err(|e| bad("geometry", e))?;
            if !(0.0..1.0).contains(&params.flower_amplitude) {
                return Err(bad("geometry.amplitude", "must lie in [0, 1)"));
            }
            GeometrySpec::Flower { params }
        }
        "halfplane" => {
            let normal = raw.point("geometry.normal")?.unwrap_or([1.0, 0.0]);
            if normal[0] == 0.0 && normal[1] == 0.0 {
                return Err(bad("geometry.normal", "must be non-zero"));
            }
            GeometrySpec::HalfPlane {
                normal,
                offset: raw.or("geometry.offset", 0.5)?,
            }
        }
        _ => {
            let sector = match raw.list::<f64>("geometry.sector")? {
                None => PACMAN_SECTOR,
                Some(v) if v.len() == 2 => (v[0], v[1]),
                Some(_) => return Err(bad("geometry.sector", "expected `theta0, theta1` in radians")),
            };
            let opening = sector.1 - sector.0;
            if !(opening > 0.0 && opening < 2.0 * PI) {
                return Err(bad("geometry.sector", "opening must lie in (0, 2π)"));
            }
            GeometrySpec::Pacman {
                center: raw.point("geometry.center")?.unwrap_or([PACMAN_CENTER.0, PACMAN_CENTER.1]),
                radius: positive("geometry.radius", raw.or("geometry.radius", PACMAN_RADIUS)?)?,
                sector,
            }
        }
    };
    Ok(Some(spec))
}
