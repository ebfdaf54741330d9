//! CSV and SVG artifacts. Files are written to a temporary sibling and renamed
//! into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::geometry::GridFunction;

use super::CliError;

/// Numeric table with an optional log-log plot spec `(x column, y column)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    /// Missing cells are `NaN` and print empty.
    pub rows: Vec<Vec<f64>>,
    pub loglog: Option<(usize, usize)>,
}

impl Table {
    pub fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        Self {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            loglog: None,
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Artifact<'a> {
    Solution(&'a GridFunction),
    Table(&'a Table),
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source: std::io::Error| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

fn fmt_num(out: &mut String, v: f64, precision: usize) {
    if v.is_nan() {
        return;
    }
    let _ = write!(out, "{:.*e}", precision.clamp(1, 17) - 1, v);
}

/// Solution layout: `t,x,u` or `t,x,y,u`, time-major then node order.
/// Tables: header row then data rows.
pub fn emit_csv(artifact: Artifact<'_>, path: &Path, precision: usize) -> Result<(), CliError> {
    let mut out = String::new();
    match artifact {
        Artifact::Solution(u) => {
            let geom = u.geometry();
            let two_d = geom.dim() == 2;
            out.push_str(if two_d { "t,x,y,u\n" } else { "t,x,u\n" });
            for n in 0..u.time().len() {
                let t = u.time().node(n);
                for (node, v) in u.slice(n).iter().enumerate() {
                    let x = geom.coords(node);
                    fmt_num(&mut out, t, precision);
                    out.push(',');
                    fmt_num(&mut out, x[0], precision);
                    out.push(',');
                    if two_d {
                        fmt_num(&mut out, x[1], precision);
                        out.push(',');
                    }
                    fmt_num(&mut out, *v, precision);
                    out.push('\n');
                }
            }
        }
        Artifact::Table(table) => {
            if table.rows.is_empty() {
                return Err(CliError::EmptyArtifact(table.title.clone()));
            }
            out.push_str(&table.headers.join(","));
            out.push('\n');
            for row in &table.rows {
                for (k, v) in row.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    fmt_num(&mut out, *v, precision);
                }
                out.push('\n');
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 50.0]; // left, right, top, bottom
const COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
            if hi - lo > 0.0 {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (mut xs, mut ys) = (xs, ys);
        Self {
            x: span(&mut xs),
            y: span(&mut ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN[0] + (x - self.x.0) / (self.x.1 - self.x.0) * (W - MARGIN[0] - MARGIN[1])
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN[3] - (y - self.y.0) / (self.y.1 - self.y.0) * (H - MARGIN[2] - MARGIN[3])
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN[0], W - MARGIN[1], MARGIN[2], H - MARGIN[3]);
        let _ = writeln!(
            svg,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            r - l,
            b - t
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            (l + r) / 2.0,
            H - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(ylabel)
        );
        for k in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                self.px(fx),
                b + 14.0,
                tick(fx)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
                l - 4.0,
                self.py(fy) + 3.0,
                tick(fy)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn polyline(svg: &mut String, frame: &Frame, pts: &[(f64, f64)], color: &str) {
    let _ = write!(
        svg,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points=""#
    );
    for (x, y) in pts {
        let _ = write!(svg, "{:.2},{:.2} ", frame.px(*x), frame.py(*y));
    }
    svg.push_str("\"/>\n");
}

/// Least-squares slope of `y` against `x`.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Solutions: profiles `u(t_k, ·)` at six times (along the middle row in 2D).
/// Tables: log-log points of the designated columns with the fitted slope.
pub fn emit_plot(artifact: Artifact<'_>, path: &Path) -> Result<(), CliError> {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    match artifact {
        Artifact::Solution(u) => {
            let geom = u.geometry();
            let nodes: Vec<usize> = if geom.dim() == 1 {
                (0..geom.node_count()).collect()
            } else {
                let j = geom.cells(1) / 2;
                (0..=geom.cells(0)).map(|i| geom.index([i, j])).collect()
            };
            let steps = u.time().steps();
            let mut levels: Vec<usize> = (0..6)
                .map(|k| (k * steps + 2) / 5)
                .map(|n| n.min(steps))
                .collect();
            levels.dedup();
            let xs = nodes.iter().map(|&n| geom.coords(n)[0]);
            let ys = levels
                .iter()
                .flat_map(|&n| nodes.iter().map(move |&i| u.at(n, i)));
            let frame = Frame::new(xs, ys);
            let label = if geom.dim() == 1 {
                "u(t, x)".to_string()
            } else {
                format!("u(t, x, {:.3})", geom.coords(nodes[0])[1])
            };
            frame.axes(&mut svg, "solution profiles", "x", &label);
            for (k, &n) in levels.iter().enumerate() {
                let pts: Vec<(f64, f64)> = nodes
                    .iter()
                    .map(|&i| (geom.coords(i)[0], u.at(n, i)))
                    .collect();
                let color = COLORS[k % COLORS.len()];
                polyline(&mut svg, &frame, &pts, color);
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" font-size="11" fill="{color}">t = {}</text>"#,
                    W - MARGIN[1] - 90.0,
                    MARGIN[2] + 16.0 + 14.0 * k as f64,
                    tick(u.time().node(n))
                );
            }
        }
        Artifact::Table(table) => {
            let Some((cx, cy)) = table.loglog else {
                return Err(CliError::EmptyArtifact(format!(
                    "{}: no plot columns",
                    table.title
                )));
            };
            let pts: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r[cx] > 0.0 && r[cy] > 0.0)
                .map(|r| (r[cx].log10(), r[cy].log10()))
                .collect();
            if pts.is_empty() {
                return Err(CliError::EmptyArtifact(table.title.clone()));
            }
            let frame = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
            frame.axes(
                &mut svg,
                &table.title,
                &format!("log10 {}", table.headers[cx]),
                &format!("log10 {}", table.headers[cy]),
            );
            polyline(&mut svg, &frame, &pts, COLORS[0]);
            for (x, y) in &pts {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}"/>"#,
                    frame.px(*x),
                    frame.py(*y),
                    COLORS[0]
                );
            }
            if pts.len() >= 2 {
                let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" font-size="13">fitted order {:.3}</text>"#,
                    MARGIN[0] + 12.0,
                    MARGIN[2] + 20.0,
                    fitted_slope(&xs, &ys)
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::TimeGrid;
    use crate::geometry::DomainGeometry;

    #[test]
    fn zero_solution_rows() {
        let dir = tempfile::tempdir().unwrap();
        let geom = DomainGeometry::interval(1.0, 1).unwrap();
        let u = GridFunction::from_fn(TimeGrid::new(1.0, 1).unwrap(), geom, |_, _| 0.0);
        let path = dir.path().join("u.csv");
        emit_csv(Artifact::Solution(&u), &path, 17).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,u");
        assert_eq!(lines.len(), 5);
        assert!(lines[1..]
            .iter()
            .all(|l| l.ends_with(",0.0000000000000000e0")));
    }

    #[test]
    fn seventeen_digits_round_trip() {
        let mut out = String::new();
        let v = 0.1f64 + 0.2;
        fmt_num(&mut out, v, 17);
        assert_eq!(out.parse::<f64>().unwrap(), v);
    }

    #[test]
    fn empty_table_emits_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = Table::new("errors", &["h", "error"]);
        table.loglog = Some((0, 1));
        let path = dir.path().join("t.svg");
        assert!(emit_plot(Artifact::Table(&table), &path).is_err());
        assert!(emit_csv(Artifact::Table(&table), &dir.path().join("t.csv"), 17).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn unwritable_path_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let geom = DomainGeometry::interval(1.0, 2).unwrap();
        let u = GridFunction::from_fn(TimeGrid::new(1.0, 1).unwrap(), geom, |_, _| 0.0);
        let err = emit_csv(Artifact::Solution(&u), &blocker.join("u.csv"), 17).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }

    #[test]
    fn slope_annotation() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = Table::new("errors", &["h", "error"]);
        table.loglog = Some((0, 1));
        for h in [0.1f64, 0.05, 0.025] {
            table.push(vec![h, 3.0 * h * h]);
        }
        let path = dir.path().join("t.svg");
        emit_plot(Artifact::Table(&table), &path).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .contains("fitted order 2.000"));
    }
}
