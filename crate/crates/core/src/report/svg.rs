//! Minimal standalone SVG charts: line plots and grid heatmaps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlotKind {
    Line {
        series: Vec<Series>,
        log_x: bool,
        log_y: bool,
    },
    /// `grid[[row, col]]`; row 0 is drawn at the top.
    Heatmap {
        grid: Array2<f64>,
        x_range: (f64, f64),
        y_range: (f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub kind: PlotKind,
    pub path: PathBuf,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn num(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.3e}")
    } else {
        format!("{v:.3}")
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Result<Axis> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if log && v <= 0.0 {
                return Err(Error::domain("log axis needs positive values"));
            }
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        Ok(Axis { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, u: f64) -> String {
        let v = self.lo + u * (self.hi - self.lo);
        num(if self.log { 10f64.powf(v) } else { v })
    }
}

fn frame(out: &mut String, spec: &PlotSpec) {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        esc(&spec.title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + ph);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        esc(&spec.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&spec.y_label)
    );
}

fn ticks(out: &mut String, x: &Axis, y: &Axis) {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let px = LEFT + u * pw;
        let py = TOP + ph - u * ph;
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            x.label(u)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            y.label(u)
        );
    }
}

/// Renders the chart to an SVG document.
pub fn render_svg(spec: &PlotSpec) -> Result<String> {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let mut out = String::new();
    match &spec.kind {
        PlotKind::Line { series, log_x, log_y } => {
            if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
                return Err(Error::domain("line plot has an empty series"));
            }
            let all = || series.iter().flat_map(|s| s.points.iter().copied());
            if all().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(Error::domain("plot data must be finite"));
            }
            let x = Axis::fit(all().map(|p| p.0), *log_x)?;
            let y = Axis::fit(all().map(|p| p.1), *log_y)?;
            frame(&mut out, spec);
            ticks(&mut out, &x, &y);
            for (k, s) in series.iter().enumerate() {
                let color = PALETTE[k % PALETTE.len()];
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(a, b)| format!("{:.2},{:.2}", LEFT + x.unit(a) * pw, TOP + ph - y.unit(b) * ph))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
                let ly = TOP + 10.0 + 18.0 * k as f64;
                let lx = WIDTH - RIGHT + 10.0;
                let _ = writeln!(
                    out,
                    r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
                    lx + 20.0
                );
                let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, esc(&s.label));
            }
        }
        PlotKind::Heatmap { grid, x_range, y_range } => {
            if grid.is_empty() {
                return Err(Error::domain("heatmap grid is empty"));
            }
            if grid.iter().any(|v| !v.is_finite()) || ![x_range.0, x_range.1, y_range.0, y_range.1].iter().all(|v| v.is_finite()) {
                return Err(Error::domain("plot data must be finite"));
            }
            let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let x = Axis::fit([x_range.0, x_range.1].into_iter(), false)?;
            let y = Axis::fit([y_range.0, y_range.1].into_iter(), false)?;
            frame(&mut out, spec);
            ticks(&mut out, &x, &y);
            let (rows, cols) = grid.dim();
            let (cw, ch) = (pw / cols as f64, ph / rows as f64);
            for ((r, c), &v) in grid.indexed_iter() {
                let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    LEFT + c as f64 * cw,
                    TOP + r as f64 * ch,
                    cw + 0.05,
                    ch + 0.05,
                    color_ramp(u)
                );
            }
            let bx = WIDTH - RIGHT + 20.0;
            for i in 0..20 {
                let u = 1.0 - i as f64 / 19.0;
                let _ = writeln!(
                    out,
                    r#"<rect x="{bx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
                    TOP + i as f64 * ph / 20.0,
                    ph / 20.0 + 0.05,
                    color_ramp(u)
                );
            }
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, bx + 22.0, TOP + 10.0, num(hi));
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, bx + 22.0, TOP + ph, num(lo));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

// dark blue → teal → yellow
fn color_ramp(u: f64) -> String {
    let stops = [(68.0, 1.0, 84.0), (33.0, 145.0, 140.0), (253.0, 231.0, 37.0)];
    let u = u.clamp(0.0, 1.0) * 2.0;
    let i = (u.floor() as usize).min(1);
    let f = u - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Writes the chart to `spec.path`.
pub fn emit_svg(spec: &PlotSpec) -> Result<()> {
    let doc = render_svg(spec)?;
    write_file(&spec.path, doc.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
