use std::fmt::Write as _;
use std::path::Path;

use super::SummaryRow;

/// A labelled series of sweep rows.
#[derive(Debug, Clone, Copy)]
pub struct Curve<'a> {
    pub label: &'a str,
    pub rows: &'a [SummaryRow],
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 55.0;
const LEGEND_H: f64 = 18.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_max(v: f64) -> f64 {
    if !(v.is_finite() && v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&x| x >= v)
        .unwrap_or(10.0 * mag)
}

fn panel(
    out: &mut String,
    x0: f64,
    y0: f64,
    title: &str,
    y_label: &str,
    curves: &[Curve],
    value: fn(&SummaryRow) -> f64,
) {
    let pts = curves.iter().flat_map(|c| c.rows.iter());
    let x_max = nice_max(pts.clone().map(|r| f64::from(r.users)).fold(0.0, f64::max));
    let y_max = nice_max(pts.map(value).filter(|v| v.is_finite()).fold(0.0, f64::max));
    let (w, h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let (left, top) = (x0 + MARGIN, y0 + MARGIN);
    let sx = |x: f64| left + x / x_max * w;
    let sy = |y: f64| top + h - y / y_max * h;

    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        left + w / 2.0,
        y0 + MARGIN / 2.0,
        escape(title)
    );
    for i in 0..=4 {
        let fx = x_max * f64::from(i) / 4.0;
        let fy = y_max * f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#ddd"/>"##,
            sx(fx),
            top,
            top + h
        );
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#ddd"/>"##,
            left,
            sy(fy),
            left + w
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            sx(fx),
            top + h + 14.0,
            fx
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            left - 4.0,
            sy(fy) + 3.0,
            fy
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">users</text>"#,
        left + w / 2.0,
        top + h + 32.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11">{}</text>"#,
        x0 + 4.0,
        top - 8.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let mut d = String::new();
        for r in c.rows.iter().filter(|r| value(r).is_finite()) {
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.2},{:.2} ", sx(f64::from(r.users)), sy(value(r)));
        }
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                d.trim_end(),
                COLORS[i % COLORS.len()]
            );
        }
    }
}

/// Latency and throughput panels side by side, one line per curve.
pub fn render_svg(title: &str, curves: &[Curve]) -> String {
    let width = 2.0 * PANEL_W;
    let height = PANEL_H + 20.0 + LEGEND_H * curves.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#fff"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="16" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    panel(&mut out, 0.0, 10.0, "Response time", "mean ms", curves, |r| r.mean_ms);
    panel(&mut out, PANEL_W, 10.0, "Throughput", "req/s", curves, |r| r.rps);
    for (i, c) in curves.iter().enumerate() {
        let y = PANEL_H + 20.0 + LEGEND_H * i as f64;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/>"#,
            MARGIN,
            MARGIN + 24.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11">{}</text>"#,
            MARGIN + 30.0,
            y + 4.0,
            escape(c.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(title: &str, curves: &[Curve], path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, render_svg(title, curves))
}
