//! CSV tables, SVG plots and legacy VTK files.

use std::fmt::Write as _;
use std::io::{self, Write};

use agfem::driver::{ConvergenceRow, SweepPoint};
use agfem::fespace::Mode;

/// Fixed-precision scientific notation, so equal values always print equally.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.12e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Aggregated => "aggregated",
        Mode::Standard => "standard",
    }
}

pub const CONVERGE_HEADER: [&str; 12] = [
    "run_id",
    "level_or_iter",
    "h",
    "n_cells",
    "n_dofs_free",
    "rel_h1",
    "rel_l2",
    "rel_energy",
    "energy_density_l2",
    "cg_iters",
    "cond2_scaled",
    "wall_ms",
];

pub const SWEEP_HEADER: [&str; 7] = ["contrast", "a", "rel_h1", "cond2_raw", "cond2_scaled", "mode", "capped_flag"];

/// Convergence table; `cond2_scaled` stays empty unless it was computed.
pub fn write_converge_csv(w: impl Write, rows: &[ConvergenceRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CONVERGE_HEADER)?;
    for r in rows {
        out.write_record([
            r.run_id.clone(),
            r.step.to_string(),
            fmt_f(r.h),
            r.n_cells.to_string(),
            r.n_free.to_string(),
            fmt_f(r.rel_h1),
            fmt_f(r.rel_l2),
            fmt_f(r.rel_energy),
            fmt_f(r.energy_density),
            r.cg_iters.to_string(),
            fmt_opt(r.cond_scaled),
            r.wall_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares rate of one error measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Rate {
    pub metric: &'static str,
    /// Slope of `log err` against `log DOFs^{1/2}`.
    pub slope_dofs: Option<f64>,
    /// Slope of `log err` against `log h` (the order).
    pub order_h: Option<f64>,
    pub points: usize,
}

pub fn write_rates_csv(w: impl Write, rates: &[Rate]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "slope_vs_sqrt_dofs", "order_vs_h", "points"])?;
    for r in rates {
        out.write_record([
            r.metric.to_string(),
            fmt_opt(r.slope_dofs),
            fmt_opt(r.order_h),
            r.points.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv(w: impl Write, points: &[SweepPoint]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for p in points {
        out.write_record([
            fmt_f(p.contrast),
            fmt_f(p.a),
            fmt_opt(p.rel_h1),
            fmt_opt(p.cond_raw.map(|c| c.value)),
            fmt_opt(p.cond_scaled.map(|c| c.value)),
            mode_name(p.mode).to_string(),
            u8::from(p.capped()).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `key,value` summary table.
pub fn write_summary_csv(w: impl Write, entries: &[(String, String)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    for (k, v) in entries {
        out.write_record([k, v])?;
    }
    out.flush()?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(x: f64) -> String {
    format!("{x:.0e}")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One curve of a log-log plot.
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Log-log line plot; each label is expected to carry its slope annotation.
pub fn loglog_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (80.0, 200.0, 40.0, 60.0);
    let positive = |v: &f64| *v > 0.0 && v.is_finite();
    let xs: Vec<f64> = series.iter().flat_map(|s| s.x.iter().copied()).filter(positive).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.y.iter().copied()).filter(positive).collect();
    let decade_range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            let (a, b) = (lo.log10().floor(), hi.log10().ceil());
            (a, if b > a { b } else { a + 1.0 })
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = decade_range(&xs);
    let (y0, y1) = decade_range(&ys);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let px = |x: f64| left + (x.log10() - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (y1 - y.log10()) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        xml_escape(title)
    );
    for d in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 18.0,
            fmt_tick(10f64.powi(d))
        );
    }
    for d in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0,
            fmt_tick(10f64.powi(d))
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 16.0,
        xml_escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        xml_escape(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = ser
            .x
            .iter()
            .zip(&ser.y)
            .filter(|(x, y)| positive(x) && positive(y))
            .map(|(x, y)| (px(*x), py(*y)))
            .collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        for (x, y) in &pts {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            xml_escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Viridis-like ramp, `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - k as f64;
    let c: Vec<u8> = (0..3)
        .map(|i| (STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heatmap with `values[row][col]` (rows: `y_labels`, columns: `x_labels`); colors follow
/// `log10` of the value. Missing values are drawn grey.
pub fn heatmap_svg(
    title: &str,
    x_name: &str,
    x_labels: &[String],
    y_name: &str,
    y_labels: &[String],
    values: &[Vec<Option<f64>>],
) -> String {
    let (left, top, cell) = (90.0, 50.0, 36.0);
    let nx = x_labels.len();
    let ny = y_labels.len();
    let pw = cell * nx as f64;
    let ph = cell * ny as f64;
    let w = left + pw + 150.0;
    let h = top + ph + 60.0;
    let finite: Vec<f64> = values
        .iter()
        .flatten()
        .flatten()
        .copied()
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = |v: f64| {
        if hi > lo {
            (v.log10() - lo.log10()) / (hi.log10() - lo.log10())
        } else {
            0.5
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        xml_escape(title)
    );
    for (r, row) in values.iter().enumerate() {
        // first row at the bottom
        let y = top + ph - cell * (r + 1) as f64;
        for (c, v) in row.iter().enumerate() {
            let x = left + cell * c as f64;
            let fill = match v {
                Some(v) if *v > 0.0 && v.is_finite() => ramp(t(*v)),
                _ => "#bbbbbb".into(),
            };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell}" height="{cell}" fill="{fill}"><title>{}</title></rect>"#,
                v.map(fmt_f).unwrap_or_else(|| "missing".into())
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + cell / 2.0 + 4.0,
            xml_escape(&y_labels[r])
        );
    }
    for (c, label) in x_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + cell * (c as f64 + 0.5),
            top + ph + 16.0,
            xml_escape(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        top + ph + 40.0,
        xml_escape(x_name)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        xml_escape(y_name)
    );
    // legend: color bar with min and max
    let lx = left + pw + 30.0;
    let _ = writeln!(
        s,
        r#"<defs><linearGradient id="bar" x1="0" y1="1" x2="0" y2="0">{}</linearGradient></defs>"#,
        (0..=4)
            .map(|k| format!(r#"<stop offset="{}" stop-color="{}"/>"#, k as f64 / 4.0, ramp(k as f64 / 4.0)))
            .collect::<String>()
    );
    let _ = writeln!(
        s,
        r#"<rect x="{lx}" y="{top}" width="18" height="{ph}" fill="url(#bar)" stroke="black"/>"#
    );
    let (max_txt, min_txt) = if finite.is_empty() {
        ("n/a".to_string(), "n/a".to_string())
    } else {
        (format!("max {hi:.3e}"), format!("min {lo:.3e}"))
    };
    let _ = writeln!(s, r#"<text x="{}" y="{}">{max_txt}</text>"#, lx + 24.0, top + 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{min_txt}</text>"#, lx + 24.0, top + ph);
    s.push_str("</svg>\n");
    s
}

/// Point or cell attribute of a VTK file (`ncomp` is 1 or 3).
pub struct VtkField {
    pub name: String,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

/// VTK cell types used here.
pub const VTK_TRIANGLE: u8 = 5;
pub const VTK_QUAD: u8 = 9;

fn write_fields(w: &mut impl Write, fields: &[VtkField]) -> io::Result<()> {
    for f in fields {
        match f.ncomp {
            1 => {
                writeln!(w, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name)?;
                for v in &f.values {
                    writeln!(w, "{v}")?;
                }
            }
            3 => {
                writeln!(w, "VECTORS {} double", f.name)?;
                for v in f.values.chunks(3) {
                    writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
                }
            }
            n => panic!("unsupported VTK field width {n}"),
        }
    }
    Ok(())
}

/// Legacy ASCII unstructured grid with cells of one type.
pub fn write_vtk(
    mut w: impl Write,
    title: &str,
    points: &[[f64; 2]],
    cells: &[Vec<usize>],
    cell_type: u8,
    point_data: &[VtkField],
    cell_data: &[VtkField],
) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(w, "CELLS {} {size}", cells.len())?;
    for c in cells {
        let ids: Vec<String> = c.iter().map(usize::to_string).collect();
        writeln!(w, "{} {}", c.len(), ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {}", cells.len())?;
    for _ in cells {
        writeln!(w, "{cell_type}")?;
    }
    if !point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", points.len())?;
        write_fields(&mut w, point_data)?;
    }
    if !cell_data.is_empty() {
        writeln!(w, "CELL_DATA {}", cells.len())?;
        write_fields(&mut w, cell_data)?;
    }
    Ok(())
}
