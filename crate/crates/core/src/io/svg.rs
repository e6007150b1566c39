//! Standalone SVG scatter of log bias against log variance.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub correct: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

/// Segment of `y = slope·x + intercept` inside the frame, if any.
fn clip_line(f: &Frame, slope: f64, intercept: f64) -> Option<((f64, f64), (f64, f64))> {
    let mut pts = Vec::with_capacity(4);
    for x in [f.x0, f.x1] {
        let y = slope * x + intercept;
        if y >= f.y0 && y <= f.y1 {
            pts.push((x, y));
        }
    }
    if slope != 0.0 {
        for y in [f.y0, f.y1] {
            let x = (y - intercept) / slope;
            if x > f.x0 && x < f.x1 {
                pts.push((x, y));
            }
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    match (pts.first(), pts.last()) {
        (Some(&a), Some(&b)) if a != b => Some((a, b)),
        _ => None,
    }
}

/// Render the scatter as SVG text. Each point becomes one `<circle>`.
pub fn scatter_svg(points: &[ScatterPoint], line: Option<(f64, f64)>, x_label: &str, y_label: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFiniteInput("scatter point"));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&ScatterPoint) -> f64| points.iter().map(sel).fold(init, f);
    let (x0, x1) = padded(fold(f64::min, f64::INFINITY, |p| p.x), fold(f64::max, f64::NEG_INFINITY, |p| p.x));
    let (y0, y1) = padded(fold(f64::min, f64::INFINITY, |p| p.y), fold(f64::max, f64::NEG_INFINITY, |p| p.y));
    let f = Frame { x0, x1, y0, y1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    s.push_str(
        "<style>.correct{fill:#1f77b4;fill-opacity:0.6}.incorrect{fill:#d62728;fill-opacity:0.6}\
         .ref{stroke:#333;stroke-width:1.5;stroke-dasharray:6 4}.axis{stroke:#000}text{font:13px sans-serif}</style>\n",
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<line class="axis" x1="{l}" y1="{b}" x2="{r}" y2="{b}"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{l}" y1="{b}" x2="{l}" y2="{t}"/>"#);
    for (v, anchor_x, anchor_y) in [(x0, l, b + 18.0), (x1, r, b + 18.0)] {
        let _ = writeln!(s, r#"<text x="{anchor_x:.1}" y="{anchor_y:.1}" text-anchor="middle">{v:.2}</text>"#);
    }
    for (v, py) in [(y0, b), (y1, t)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{v:.2}</text>"#, l - 6.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for p in points {
        let class = if p.correct { "correct" } else { "incorrect" };
        let _ = writeln!(s, r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="2.5"/>"#, f.px(p.x), f.py(p.y));
    }
    if let Some((slope, intercept)) = line {
        if let Some(((ax, ay), (bx, by))) = clip_line(&f, slope, intercept) {
            let _ = writeln!(
                s,
                r#"<line class="ref" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                f.px(ax),
                f.py(ay),
                f.px(bx),
                f.py(by)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write the scatter with log bias² / log variance axis labels.
pub fn render_scatter(points: &[ScatterPoint], line: Option<(f64, f64)>, path: &Path) -> Result<()> {
    let svg = scatter_svg(points, line, "log bias²", "log variance")?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, correct: bool) -> ScatterPoint {
        ScatterPoint { x, y, correct }
    }

    #[test]
    fn one_point_one_marker() {
        let s = scatter_svg(&[pt(-3.0, -4.0, true)], None, "x", "y").unwrap();
        assert_eq!(s.matches("<circle").count(), 1);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(!s.contains("class=\"ref\""));
    }

    #[test]
    fn identity_line_is_drawn() {
        let pts = [pt(0.0, 0.0, true), pt(1.0, 1.0, false), pt(2.0, 1.5, true)];
        let s = scatter_svg(&pts, Some((1.0, 0.0)), "x", "y").unwrap();
        assert_eq!(s.matches("class=\"ref\"").count(), 1);
        assert_eq!(s.matches("class=\"incorrect\"").count(), 1);
    }

    #[test]
    fn line_outside_frame_is_dropped() {
        let pts = [pt(0.0, 0.0, true), pt(1.0, 1.0, true)];
        let s = scatter_svg(&pts, Some((0.0, 100.0)), "x", "y").unwrap();
        assert!(!s.contains("class=\"ref\""));
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(matches!(scatter_svg(&[], None, "x", "y"), Err(Error::EmptyInput)));
        assert!(matches!(
            scatter_svg(&[pt(f64::NAN, 0.0, true)], None, "x", "y"),
            Err(Error::NonFiniteInput(_))
        ));
    }
}
