//! CSV and SVG exports.

use std::fmt::Write;

use crate::eval::report::{MetricReport, PredictionRecord};

/// `cell,metric,value` rows for every report.
pub fn sweep_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("cell,metric,value\n");
    for r in reports {
        for (k, v) in r.flat() {
            let _ = writeln!(out, "{},{k},{v}", r.cell);
        }
    }
    out
}

const PANEL: f64 = 200.0;
const COLUMNS: usize = 4;

/// Predicted (red) and ground-truth (green) trajectories, one panel per
/// record, forward pointing up and left to the left.
pub fn trajectory_svg(records: &[PredictionRecord]) -> String {
    let rows = records.len().div_ceil(COLUMNS).max(1);
    let (w, h) = (PANEL * COLUMNS as f64, PANEL * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (k, r) in records.iter().enumerate() {
        let ox = PANEL * (k % COLUMNS) as f64;
        let oy = PANEL * (k / COLUMNS) as f64;
        let extent = r
            .modes
            .modes
            .iter()
            .flatten()
            .chain(r.ground_truth.iter())
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(5.0f64, f64::max);
        let s = 0.42 * PANEL / extent;
        let to_px = |p: [f64; 2]| (ox + PANEL / 2.0 - p[1] * s, oy + PANEL * 0.9 - p[0] * s * 0.9);
        let path = |pts: &[[f64; 2]]| {
            let mut d = String::new();
            let (x, y) = to_px([0.0, 0.0]);
            let _ = write!(d, "M{x:.1},{y:.1}");
            for p in pts {
                let (x, y) = to_px(*p);
                let _ = write!(d, " L{x:.1},{y:.1}");
            }
            d
        };
        let _ = writeln!(
            out,
            r#"<rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}" fill="none" stroke="lightgray"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" font-family="monospace">#{} {}</text>"#,
            ox + 4.0,
            oy + 12.0,
            r.id,
            r.answers.action
        );
        for (m, mode) in r.modes.modes.iter().enumerate() {
            let width = if m == r.best_mode { 2.0 } else { 1.0 };
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="red" stroke-width="{width}"/>"#,
                path(mode)
            );
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="green" stroke-width="2"/>"#,
            path(&r.ground_truth)
        );
    }
    out.push_str("</svg>\n");
    out
}
