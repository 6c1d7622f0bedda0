use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use xaidiag_core::diagnostics::{NormalizedProperties, PropertyReport};

use crate::error::Result;
use crate::pipeline::{read_json, write_atomic, Report, FIGURES_DIR, REPORT_DIR, REPORT_FILE};

pub const AXES: [&str; 5] = ["HA", "CI", "F", "RC", "DC"];

const SIZE: f64 = 480.0;
const CENTRE: f64 = 200.0;
const RADIUS: f64 = 150.0;
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

/// The five headline normalized properties in axis order; missing values
/// are drawn at the centre.
pub fn axis_values(n: &NormalizedProperties) -> [f64; 5] {
    [n.ha_map, n.ci_mae, n.f_auc_tp, n.rc_rho, n.dc_rho].map(|v| v.unwrap_or(0.0).clamp(0.0, 1.0))
}

/// Position of value `v` on axis `i`; axis 0 points straight up.
pub fn vertex(i: usize, v: f64) -> (f64, f64) {
    let angle = -PI / 2.0 + 2.0 * PI * i as f64 / AXES.len() as f64;
    (CENTRE + RADIUS * v * angle.cos(), CENTRE + RADIUS * v * angle.sin())
}

fn points(values: &[f64; 5]) -> String {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (x, y) = vertex(i, v);
            format!("{x:.3},{y:.3}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Radar chart of one (dataset, architecture) block, one polygon per
/// explainer in report order.
pub fn radar_svg(title: &str, rows: &[&PropertyReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<g id="grid" fill="none" stroke="#cccccc" stroke-width="1">"##);
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<polygon points="{}"/>"#, points(&[ring; 5]));
    }
    for i in 0..AXES.len() {
        let (x, y) = vertex(i, 1.0);
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{CENTRE:.3}" y1="{CENTRE:.3}" x2="{x:.3}" y2="{y:.3}"/>"#
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="labels" font-family="sans-serif" font-size="13" text-anchor="middle">"#);
    for (i, name) in AXES.iter().enumerate() {
        let (x, y) = vertex(i, 1.12);
        let _ = writeln!(s, r#"<text x="{x:.3}" y="{:.3}">{name}</text>"#, y + 4.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="explainers" fill-opacity="0.08" stroke-width="1.5">"#);
    for (j, r) in rows.iter().enumerate() {
        let colour = PALETTE[j % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polygon data-explainer="{}" points="{}" fill="{colour}" stroke="{colour}"/>"#,
            escape(&r.explainer),
            points(&axis_values(&r.normalized))
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="legend" font-family="sans-serif" font-size="11">"#);
    for (j, r) in rows.iter().enumerate() {
        let colour = PALETTE[j % PALETTE.len()];
        let y = 20.0 + 16.0 * j as f64;
        let _ = writeln!(s, r#"<rect x="380" y="{:.1}" width="10" height="10" fill="{colour}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="394" y="{y:.1}">{}</text>"#, escape(&r.explainer));
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Normalized headline properties, one row per report entry.
pub fn summary_csv(reports: &[PropertyReport]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("dataset,architecture,explainer,ha,ci,f,rc,dc,mean\n");
    for r in reports {
        let n = &r.normalized;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.architecture,
            r.explainer,
            fmt(n.ha_map),
            fmt(n.ci_mae),
            fmt(n.f_auc_tp),
            fmt(n.rc_rho),
            fmt(n.dc_rho),
            fmt(n.mean)
        );
    }
    s
}

/// Writes one SVG per (dataset, architecture) block and the summary CSV;
/// returns the written paths.
pub fn cmd_report(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report: Report = read_json(&out_dir.join(REPORT_DIR).join(REPORT_FILE))?;
    let mut blocks: BTreeMap<(&str, &str), Vec<&PropertyReport>> = BTreeMap::new();
    for r in &report.reports {
        blocks.entry((&r.dataset, &r.architecture)).or_default().push(r);
    }
    let dir = out_dir.join(FIGURES_DIR);
    let mut written = Vec::new();
    for ((dataset, arch), rows) in blocks {
        let path = dir.join(format!("{dataset}-{arch}.svg"));
        write_atomic(&path, radar_svg(&format!("{dataset} / {arch}"), &rows).as_bytes())?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    write_atomic(&path, summary_csv(&report.reports).as_bytes())?;
    written.push(path);
    Ok(written)
}
