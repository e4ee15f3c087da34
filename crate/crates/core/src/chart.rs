//! Static SVG rendering of an accuracy/rejection curve.

use std::fmt::Write;

use crate::engine::CurveTable;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

const ACCURACY_COLOR: &str = "#1f77b4";
const REJECTION_COLOR: &str = "#d62728";

struct Frame {
    x_min: f64,
    x_max: f64,
}

impl Frame {
    fn x(&self, threshold: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        MARGIN_LEFT + (threshold - self.x_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, percent: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - percent / 100.0 * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Polyline segments; a gap wherever the value is undefined.
fn segments(frame: &Frame, points: impl Iterator<Item = (f64, Option<f64>)>) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for (t, v) in points {
        match v {
            Some(v) => {
                if !current.is_empty() {
                    current.push(' ');
                }
                let _ = write!(current, "{:.2},{:.2}", frame.x(t), frame.y(v * 100.0));
            }
            None if !current.is_empty() => out.push(std::mem::take(&mut current)),
            None => {}
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Accuracy and rejection rate (percent) against the confidence threshold.
pub fn render_curve_svg(curve: &CurveTable, title: &str) -> String {
    let x_min = curve.points.first().map_or(0.0, |p| p.threshold);
    let x_max = curve.points.last().map_or(1.0, |p| p.threshold);
    let frame = Frame { x_min, x_max };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // grid and y ticks
    for pct in (0..=100).step_by(10) {
        let y = frame.y(pct as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            WIDTH - MARGIN_RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{pct}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    // x ticks
    for i in 0..=5 {
        let t = x_min + (x_max - x_min) * i as f64 / 5.0;
        let x = frame.x(t);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.2}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Confidence threshold</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">Percent</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let accuracy = segments(&frame, curve.points.iter().map(|p| (p.threshold, p.accuracy)));
    let rejection = segments(&frame, curve.points.iter().map(|p| (p.threshold, Some(p.rejection_rate))));
    for (series, color) in [(accuracy, ACCURACY_COLOR), (rejection, REJECTION_COLOR)] {
        for seg in series {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{seg}"/>"#
            );
        }
    }

    // legend
    let lx = MARGIN_LEFT + 12.0;
    for (i, (label, color)) in [("Accuracy", ACCURACY_COLOR), ("Rejection", REJECTION_COLOR)]
        .into_iter()
        .enumerate()
    {
        let ly = MARGIN_TOP + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, lx + 26.0, ly + 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EvalPoint;

    fn point(threshold: f64, accepted: usize, correct: usize) -> EvalPoint {
        let coverage = accepted as f64 / 4.0;
        EvalPoint {
            threshold,
            accepted_count: accepted,
            correct_count: correct,
            total_count: 4,
            accuracy: (accepted > 0).then(|| correct as f64 / accepted as f64),
            coverage,
            rejection_rate: 1.0 - coverage,
        }
    }

    #[test]
    fn two_series_with_gap_for_undefined_accuracy() {
        let curve = CurveTable {
            total_count: 4,
            points: vec![point(0.5, 4, 3), point(0.75, 2, 2), point(1.0, 0, 0)],
        };
        let svg = render_curve_svg(&curve, "a <b>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(ACCURACY_COLOR) && svg.contains(REJECTION_COLOR));
    }
}
