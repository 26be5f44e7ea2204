//! Line plots of the CSV outputs as self-contained SVG. Nothing is computed
//! here beyond axis ranges.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// trace.csv: one panel per diagnostic against t.
    Timeseries,
    /// density.csv: ratio against radius, one line per lambda.
    DensityRatio,
    /// type_indicator.csv: indicator against t.
    TypeIndicator,
    /// psi_<k>.csv: psi against t.
    Psi,
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "timeseries" => Ok(PlotKind::Timeseries),
            "density_ratio" => Ok(PlotKind::DensityRatio),
            "type_indicator" => Ok(PlotKind::TypeIndicator),
            "psi" => Ok(PlotKind::Psi),
            _ => Err(format!(
                "unknown plot kind `{s}` (expected timeseries, density_ratio, type_indicator or psi)"
            )),
        }
    }
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Timeseries => "timeseries",
            PlotKind::DensityRatio => "density_ratio",
            PlotKind::TypeIndicator => "type_indicator",
            PlotKind::Psi => "psi",
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize, String> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("missing column `{name}`"))
    }

    /// Parsed values of a column; empty cells are None when allowed.
    fn values(&self, name: &str, allow_empty: bool) -> Result<Vec<Option<f64>>, String> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r[c].trim();
                if cell.is_empty() && allow_empty {
                    return Ok(None);
                }
                cell.parse::<f64>()
                    .map(Some)
                    .map_err(|_| format!("row {}: `{cell}` in column `{name}` is not a number", i + 2))
            })
            .collect()
    }
}

fn read_table(path: &Path) -> Result<Table, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(|h| h.trim().is_empty()) {
        return Err("no header".into());
    }
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| e.to_string())?;
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    Ok(Table { header, rows })
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Panel {
    title: String,
    x_label: String,
    series: Vec<Series>,
}

fn paired(x: &[Option<f64>], y: &[Option<f64>]) -> Vec<(f64, f64)> {
    x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some((a.filter(|v| v.is_finite())?, b.filter(|v| v.is_finite())?)))
        .collect()
}

fn panels(kind: PlotKind, table: &Table) -> Result<Vec<Panel>, String> {
    let single = |x: &str, y: &str, allow_empty: bool| -> Result<Vec<Panel>, String> {
        let xs = table.values(x, false)?;
        let ys = table.values(y, allow_empty)?;
        Ok(vec![Panel {
            title: y.to_string(),
            x_label: x.to_string(),
            series: vec![Series {
                label: y.to_string(),
                points: paired(&xs, &ys),
            }],
        }])
    };
    match kind {
        PlotKind::TypeIndicator => single("t", "indicator", false),
        PlotKind::Psi => single("t", "psi", true),
        PlotKind::Timeseries => {
            let t = table.values("t", false)?;
            ["volume", "max_A_sq", "min_cos_theta", "max_H"]
                .iter()
                .map(|y| {
                    Ok(Panel {
                        title: y.to_string(),
                        x_label: "t".into(),
                        series: vec![Series {
                            label: y.to_string(),
                            points: paired(&t, &table.values(y, false)?),
                        }],
                    })
                })
                .collect()
        }
        PlotKind::DensityRatio => {
            let lambda = table.values("lambda", false)?;
            let radius = table.values("radius", false)?;
            let ratio = table.values("ratio", true)?;
            let mut series: Vec<Series> = Vec::new();
            for ((l, r), q) in lambda.iter().zip(&radius).zip(&ratio) {
                let label = format!("lambda = {}", l.unwrap());
                let idx = match series.iter().position(|s| s.label == label) {
                    Some(i) => i,
                    None => {
                        series.push(Series {
                            label,
                            points: Vec::new(),
                        });
                        series.len() - 1
                    }
                };
                if let (Some(r), Some(q)) = (r, q) {
                    series[idx].points.push((*r, *q));
                }
            }
            Ok(vec![Panel {
                title: "density ratio".into(),
                x_label: "radius".into(),
                series,
            }])
        }
    }
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 45.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1e-300) {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.03 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{:.4}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.3e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(svg: &mut String, panel: &Panel, top: f64) {
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (top + MARGIN_TOP, top + PANEL_HEIGHT - MARGIN_BOTTOM);
    let pts = || panel.series.iter().flat_map(|s| s.points.iter());
    let (xa, xb) = range(pts().map(|p| p.0));
    let (ya, yb) = range(pts().map(|p| p.1));
    let sx = |x: f64| x0 + (x - xa) / (xb - xa) * (x1 - x0);
    let sy = |y: f64| y1 - (y - ya) / (yb - ya) * (y1 - y0);

    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"##,
        (x0 + x1) / 2.0,
        top + 20.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        x1 - x0,
        y1 - y0
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (xa + f * (xb - xa), ya + f * (yb - ya));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{y1:.1}" stroke="#ddd"/><text x="{px:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
            y1 + 15.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.1}" y1="{py:.1}" x2="{x1:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
            x0 - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"##,
        (x0 + x1) / 2.0,
        y1 + 35.0,
        escape(&panel.x_label)
    );
    for (i, s) in panel.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##,
            path.join(" ")
        );
        if s.points.len() <= 32 {
            for &(x, y) in &s.points {
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"##,
                    sx(x),
                    sy(y)
                );
            }
        }
        let ly = y0 + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"##,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 35.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
}

fn render(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"##
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (k, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, PANEL_HEIGHT * k as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Output path: the input with its extension replaced by `svg`.
pub fn svg_path(csv: &Path) -> PathBuf {
    csv.with_extension("svg")
}

/// Render `csv` as `kind` and return the SVG path.
pub fn plot_csv(csv: &Path, kind: PlotKind) -> Result<PathBuf, Failure> {
    let malformed = |e: String| Failure::usage(format!("malformed CSV {}: {e}", csv.display()));
    let table = read_table(csv).map_err(malformed)?;
    let panels = panels(kind, &table).map_err(malformed)?;
    if panels.iter().all(|p| p.series.iter().all(|s| s.points.is_empty())) {
        return Err(malformed("nothing to plot".into()));
    }
    let out = svg_path(csv);
    fs::write(&out, render(&panels))
        .map_err(|e| Failure::usage(format!("{}: {e}", out.display())))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(range([1.0, 1.0].into_iter()), (0.95, 1.05));
        assert_eq!(range([0.0].into_iter()), (-1.0, 1.0));
        assert_eq!(range(std::iter::empty()), (0.0, 1.0));
        let (a, b) = range([0.0, 10.0].into_iter());
        assert!(a < 0.0 && b > 10.0);
    }

    #[test]
    fn ticks() {
        assert_eq!(tick(0.5), "0.5");
        assert_eq!(tick(2.0), "2");
        assert_eq!(tick(1e-6), "1.000e-6");
    }

    #[test]
    fn kinds() {
        for k in ["timeseries", "density_ratio", "type_indicator", "psi"] {
            assert_eq!(k.parse::<PlotKind>().unwrap().name(), k);
        }
        assert!("histogram".parse::<PlotKind>().is_err());
    }
}
