//! Minimal SVG line plots for sweep outputs.
//!
//! Output is deterministic text: fixed canvas, six-significant-digit
//! coordinates, no timestamps.

use std::fmt::Write as _;
use std::path::Path;

use scoreadv_core::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes one titled line plot of `points` sorted by x.
pub fn line_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::parameter("plot needs at least one point"));
    }
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (x_min, x_max) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (y_min, y_max) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let px = |x: f64| MARGIN_L + (x - x_min) / x_span * (W - MARGIN_L - MARGIN_R);
    let py = |y: f64| H - MARGIN_B - (y - y_min) / y_span * (H - MARGIN_T - MARGIN_B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"13\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    );
    // Axes.
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>",
        H - MARGIN_B
    );
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MARGIN_B,
        W - MARGIN_R,
        H - MARGIN_B
    );
    // Extremal tick labels.
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN_L}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        H - MARGIN_B + 18.0,
        fmt(x_min)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        W - MARGIN_R,
        H - MARGIN_B + 18.0,
        fmt(x_max)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        MARGIN_L - 6.0,
        H - MARGIN_B,
        fmt(y_min)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        MARGIN_L - 6.0,
        MARGIN_T + 6.0,
        fmt(y_max)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        (MARGIN_L + W - MARGIN_R) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        (MARGIN_T + H - MARGIN_B) / 2.0,
        (MARGIN_T + H - MARGIN_B) / 2.0
    );
    // Series.
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>",
        coords.join(" ")
    );
    for &(x, y) in &pts {
        let _ = writeln!(
            s,
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"steelblue\"/>",
            fmt(px(x)),
            fmt(py(y))
        );
    }
    let _ = writeln!(s, "</svg>");
    std::fs::write(path, s)?;
    Ok(())
}
