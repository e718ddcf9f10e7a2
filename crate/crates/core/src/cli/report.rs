//! CSV and SVG renderings of numeric series.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::storage::write_atomic;

/// Two-column CSV `step,<name>`.
pub fn series_csv(name: &str, values: &[f64]) -> String {
    let mut out = format!("step,{name}\n");
    for (k, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// A standalone SVG line plot of `values` against their index.
pub fn series_svg(title: &str, values: &[f64]) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let steps = (values.len().max(2) - 1) as f64;
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = pad + (w - 2.0 * pad) * k as f64 / steps;
            let y = h - pad - (h - 2.0 * pad) * (v - lo) / span;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{hi:.4}</text><text x="4" y="{}" font-family="sans-serif" font-size="10">{lo:.4}</text>"#,
        pad + 4.0,
        h - pad
    );
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, points.join(" "));
    svg.push_str("</svg>\n");
    svg
}

pub fn write_series(csv_path: &Path, svg_path: &Path, name: &str, values: &[f64]) -> Result<()> {
    write_atomic(csv_path, series_csv(name, values).as_bytes())?;
    write_atomic(svg_path, series_svg(name, values).as_bytes())
}
