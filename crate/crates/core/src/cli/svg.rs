//! Standalone SVG plots of planar trajectories.

use std::fmt::Write;

const SIZE: f64 = 560.0;
const MARGIN: f64 = 48.0;
const MAX_POINTS: usize = 4000;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

/// Evenly thins a long path, always keeping both ends.
fn thin(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<[f64; 2]> = points.iter().step_by(stride).copied().collect();
    if let Some(&last) = points.last() {
        if out.last() != Some(&last) {
            out.push(last);
        }
    }
    out
}

/// Draws each series as a polyline with a dot at its start and a square at
/// its end, inside the box `[lower, upper]`.
pub fn render(series: &[Series], lower: [f64; 2], upper: [f64; 2], title: &str) -> String {
    let inner = SIZE - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - lower[0]) / (upper[0] - lower[0]) * inner;
    let sy = |y: f64| SIZE - MARGIN - (y - lower[1]) / (upper[1] - lower[1]) * inner;
    let legend_h = 18.0 * series.len() as f64;
    let height = SIZE + legend_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{height}" viewBox="0 0 {SIZE} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, SIZE / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="#444"/>"##
    );
    for (x, y, anchor, text) in
        [(MARGIN, SIZE - MARGIN + 16.0, "start", lower[0]), (SIZE - MARGIN, SIZE - MARGIN + 16.0, "end", upper[0])]
    {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{text}</text>"#);
    }
    for (y, text) in [(SIZE - MARGIN, lower[1]), (MARGIN + 10.0, upper[1])] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{text}</text>"#, MARGIN - 6.0);
    }

    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts = thin(&ser.points);
        if pts.is_empty() {
            continue;
        }
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let first = pts[0];
        let last = pts[pts.len() - 1];
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, sx(first[0]), sy(first[1]));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="7" height="7" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            sx(last[0]) - 3.5,
            sy(last[1]) - 3.5
        );
        let ly = SIZE + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            MARGIN + 24.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, MARGIN + 30.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
