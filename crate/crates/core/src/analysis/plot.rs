//! Deterministic SVG 1.1 and CSV emission for projections and sweep curves.
//!
//! Output depends only on the input values: element order is stable, colors
//! come from a fixed palette keyed by sorted category names, and nothing
//! time- or path-dependent is written. An optional config hash is embedded
//! as a comment so artifacts stay traceable.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::report::fmt_sig6;

/// One projected task in a 2-D scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub task: String,
    pub category: String,
    pub ontology: String,
    /// Which side of the task split the vector came from (train/heldout).
    pub partition: String,
    pub x: f64,
    pub y: f64,
}

/// One labeled line in a curve chart, e.g. a method's score across `d_I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;

/// Fixed ten-color palette; categories are assigned colors in sorted order.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn tick_label(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.abs() >= 1e4 || x.abs() < 1e-3 {
        return format!("{x:.2e}");
    }
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Data range with padding; collapses to a unit box around constant data.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        // SVG y grows downward.
        HEIGHT - MARGIN_BOTTOM
            - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn svg_open(out: &mut String, title: &str, config_hash: Option<&str>) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if let Some(hash) = config_hash {
        let _ = writeln!(out, "<!-- config_hash={} -->", xml_escape(hash));
    }
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        xml_escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let left = MARGIN_LEFT;
    let right = WIDTH - MARGIN_RIGHT;
    let top = MARGIN_TOP;
    let bottom = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = frame.x_lo + f * (frame.x_hi - frame.x_lo);
        let y = frame.y_lo + f * (frame.y_hi - frame.y_lo);
        let px = frame.px(x);
        let py = frame.py(y);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{bottom}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            bottom + 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            bottom + 18.0,
            tick_label(x)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{left}\" y2=\"{py:.2}\" stroke=\"black\"/>",
            left - 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            left - 8.0,
            py + 4.0,
            tick_label(y)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        (left + right) / 2.0,
        HEIGHT - 10.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        xml_escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    let x = WIDTH - MARGIN_RIGHT + 16.0;
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 16.0 + i as f64 * 18.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            y - 9.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            x + 16.0,
            xml_escape(label)
        );
    }
}

/// Category-colored scatter of projected points. Train-partition points are
/// filled discs; all other partitions are hollow.
pub fn scatter_svg(points: &[ProjectedPoint], title: &str, config_hash: Option<&str>) -> String {
    let mut out = String::new();
    svg_open(&mut out, title, config_hash);
    let frame = Frame {
        x_lo: padded_range(points.iter().map(|p| p.x)).0,
        x_hi: padded_range(points.iter().map(|p| p.x)).1,
        y_lo: padded_range(points.iter().map(|p| p.y)).0,
        y_hi: padded_range(points.iter().map(|p| p.y)).1,
    };
    axes(&mut out, &frame, "component 1", "component 2");

    let mut color_of = BTreeMap::new();
    for p in points {
        let next = color_of.len();
        color_of.entry(p.category.clone()).or_insert(PALETTE[next % PALETTE.len()]);
    }
    // Re-key in sorted order so colors do not depend on input order.
    let categories: Vec<String> = color_of.keys().cloned().collect();
    let color_of: BTreeMap<String, &str> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), PALETTE[i % PALETTE.len()]))
        .collect();

    for p in points {
        let color = color_of[&p.category];
        let (fill, stroke) =
            if p.partition == "train" { (color, "none") } else { ("white", color) };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{fill}\" stroke=\"{stroke}\" stroke-width=\"1.5\"><title>{}</title></circle>",
            frame.px(p.x),
            frame.py(p.y),
            xml_escape(&p.task)
        );
    }
    let entries: Vec<(String, &str)> =
        categories.iter().map(|c| (c.clone(), color_of[c])).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Line chart of one or more series, e.g. relative score against `d_I`.
pub fn curves_svg(
    series: &[CurveSeries],
    x_label: &str,
    y_label: &str,
    title: &str,
    config_hash: Option<&str>,
) -> String {
    let mut out = String::new();
    svg_open(&mut out, title, config_hash);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (x_lo, x_hi) = padded_range(xs);
    let (y_lo, y_hi) = padded_range(ys);
    let frame = Frame { x_lo, x_hi, y_lo, y_hi };
    axes(&mut out, &frame, x_label, y_label);

    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        entries.push((s.label.clone(), color));
        if !s.points.is_empty() {
            let path: Vec<String> = s
                .points
                .iter()
                .enumerate()
                .map(|(j, &(x, y))| {
                    let cmd = if j == 0 { 'M' } else { 'L' };
                    format!("{cmd}{:.2} {:.2}", frame.px(x), frame.py(y))
                })
                .collect();
            let _ = writeln!(
                out,
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                path.join(" ")
            );
            for &(x, y) in &s.points {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                    frame.px(x),
                    frame.py(y)
                );
            }
        }
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

pub const POINTS_CSV_HEADER: &str = "task,category,ontology,partition,x,y";

/// Projected points as CSV, mirroring the score-table conventions.
pub fn points_csv(points: &[ProjectedPoint], config_hash: Option<&str>) -> Result<String> {
    let field = crate::eval::report::csv_field;
    let mut out = String::new();
    if let Some(hash) = config_hash {
        let _ = writeln!(out, "# config_hash={}", field(hash)?);
    }
    out.push_str(POINTS_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            field(&p.task)?,
            field(&p.category)?,
            field(&p.ontology)?,
            field(&p.partition)?,
            fmt_sig6(p.x),
            fmt_sig6(p.y),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(task: &str, category: &str, partition: &str, x: f64, y: f64) -> ProjectedPoint {
        ProjectedPoint {
            task: task.into(),
            category: category.into(),
            ontology: format!("{category}/other"),
            partition: partition.into(),
            x,
            y,
        }
    }

    #[test]
    fn empty_scatter_is_still_a_valid_document_with_axes() {
        let svg = scatter_svg(&[], "empty", Some("deadbeef"));
        assert!(svg.starts_with("<?xml version=\"1.0\""));
        assert!(svg.contains("<!-- config_hash=deadbeef -->"));
        assert!(svg.contains("version=\"1.1\""));
        assert!(svg.contains("<line")); // axes survive without data
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 0);
    }

    #[test]
    fn scatter_is_deterministic_and_category_colored() {
        let pts = vec![
            point("t0", "beta", "train", 0.0, 1.0),
            point("t1", "alpha", "heldout", 2.0, -1.0),
            point("t2", "alpha", "train", 1.0, 0.5),
        ];
        let a = scatter_svg(&pts, "proj", None);
        let b = scatter_svg(&pts, "proj", None);
        assert_eq!(a, b);
        // Colors key off the sorted category list, not first appearance:
        // "alpha" gets the first palette slot even though "beta" came first.
        let alpha_color = PALETTE[0];
        let beta_color = PALETTE[1];
        assert!(a.contains(&format!("fill=\"{beta_color}\"")));
        // The heldout alpha point is hollow: white fill, alpha stroke.
        assert!(a.contains(&format!("fill=\"white\" stroke=\"{alpha_color}\"")));
        assert_eq!(a.matches("<circle").count(), 3);
    }

    #[test]
    fn curves_render_one_path_per_series() {
        let series = vec![
            CurveSeries { label: "learned".into(), points: vec![(1.0, 0.5), (3.0, 0.9), (5.0, 0.95)] },
            CurveSeries { label: "random".into(), points: vec![(1.0, 0.2), (3.0, 0.4), (5.0, 0.5)] },
        ];
        let svg = curves_svg(&series, "d_I", "relative score", "sweep", None);
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("learned") && svg.contains("random"));
        assert!(svg.contains("d_I") && svg.contains("relative score"));
        assert_eq!(svg, curves_svg(&series, "d_I", "relative score", "sweep", None));
    }

    #[test]
    fn points_csv_round_trips_fields() {
        let pts = vec![point("t0", "alpha", "train", 1.0 / 3.0, -2.5)];
        let csv = points_csv(&pts, Some("cafe")).unwrap();
        assert_eq!(
            csv,
            "# config_hash=cafe\ntask,category,ontology,partition,x,y\nt0,alpha,alpha/other,train,0.333333,-2.50000\n"
        );
        let bad = vec![point("a,b", "c", "train", 0.0, 0.0)];
        assert!(points_csv(&bad, None).is_err());
    }
}
