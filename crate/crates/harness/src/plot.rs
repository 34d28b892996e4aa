//! Plot data from trace files: one `(sgrad_evals_cum, F_full)` series per
//! trace, as CSV plus a plain SVG line chart.
//!
//! The y axis is logarithmic when every plotted value is positive.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::experiment::read_trace;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(sgrad_evals_cum, F_full)` with nondecreasing x.
    pub points: Vec<(u64, f64)>,
}

fn label_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_prefix("trace_").map(str::to_string).unwrap_or(stem)
}

/// Loads one series per trace file matching `pattern`, in path order.
pub fn load_series(pattern: &str) -> Result<Vec<Series>> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| HarnessError::Config(format!("bad trace pattern `{pattern}`: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    if paths.is_empty() {
        return Err(HarnessError::Config(format!("no trace files match `{pattern}`")));
    }
    paths.iter().map(|p| series_from(p)).collect()
}

pub fn series_from(path: &Path) -> Result<Series> {
    let trace = read_trace(path)?;
    let points: Vec<(u64, f64)> = trace.iter().filter_map(|r| r.f_full.map(|f| (r.sgrad_evals_cum, f))).collect();
    if points.is_empty() {
        return Err(HarnessError::Runtime(format!(
            "{} has no F_full values; enable objective logging (run.log_every > 0 or --log-every)",
            path.display()
        )));
    }
    Ok(Series { label: label_of(path), points })
}

/// Long-format CSV with columns `series,sgrad_evals_cum,F_full`.
pub fn write_plot_data<W: Write>(w: W, series: &[Series]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(["series", "sgrad_evals_cum", "F_full"])?;
    for s in series {
        for &(x, y) in &s.points {
            wtr.write_record([s.label.clone(), x.to_string(), y.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the series as an SVG line chart.
pub fn render_svg(series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let log_y = all.clone().all(|&(_, y)| y > 0.0);
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        let (x, y) = (x as f64, ty(y));
        if y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x0.is_finite() && y0.is_finite()) {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_Y + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let y_label = |v: f64| if log_y { format!("1e{v:.1}") } else { format!("{v:.3e}") };
    for (v, anchor_y) in [(y1, MARGIN_Y), (y0, MARGIN_Y + plot_h)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            anchor_y + 4.0,
            y_label(v)
        );
    }
    for (v, anchor_x, anchor) in [(x0, MARGIN_LEFT, "start"), (x1, MARGIN_LEFT + plot_w, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor_x}" y="{}" text-anchor="{anchor}">{v:.0}</text>"#,
            MARGIN_Y + plot_h + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">stochastic gradient evaluations</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0,
        if log_y { "objective (log scale)" } else { "objective" }
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| (x as f64, ty(y)))
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = MARGIN_Y + 14.0 + 18.0 * k as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the plot data to `out` and the chart next to it with an `.svg`
/// extension. Returns the series and the chart path.
pub fn emit_plot(pattern: &str, out: &Path) -> Result<(Vec<Series>, PathBuf)> {
    let series = load_series(pattern)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_plot_data(std::io::BufWriter::new(std::fs::File::create(out)?), &series)?;
    let svg_path = if out.extension().is_some_and(|e| e == "svg") {
        out.with_extension("chart.svg")
    } else {
        out.with_extension("svg")
    };
    std::fs::write(&svg_path, render_svg(&series))?;
    Ok((series, svg_path))
}
