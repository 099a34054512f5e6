//! Plots of `ln I` against `tau` and the summary table, rebuilt from the
//! files of an artifact directory alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::LabError;
use crate::output::{read_key_values, CONSTANTS, INDICATOR, MANIFEST, SLOPES, VERDICT};

#[derive(Debug, Clone, Default)]
struct Slopes {
    mode: String,
    slope_lo: f64,
    slope_hi: f64,
    slope_fit: f64,
    window_lo: Option<f64>,
    eps_sigma: f64,
    far: f64,
    touch: Option<f64>,
    class: String,
}

fn read_rows(path: &Path) -> Result<Option<Vec<BTreeMap<String, String>>>, LabError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(Some(out))
}

fn f(row: &BTreeMap<String, String>, key: &str) -> Option<f64> {
    row.get(key).and_then(|v| v.parse().ok())
}

fn s(row: &BTreeMap<String, String>, key: &str) -> String {
    row.get(key).cloned().unwrap_or_default()
}

/// Points `(tau, I)` of one curve and mode.
type Series = BTreeMap<(String, String), Vec<(f64, f64)>>;

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;

/// SVG of `ln I` against `tau`. Nonpositive samples are drawn as crosses
/// on the bottom axis. Threshold lines are slopes, drawn through the first
/// sample of the fit window.
fn plot(curve: &str, series: &[(String, Vec<(f64, f64)>)], slopes: Option<&Slopes>) -> String {
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">ln I vs tau, curve {curve}</text>"#, W / 2.0);
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if pts.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no samples</text>"#, W / 2.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }
    let pos: Vec<(f64, f64)> = pts.iter().filter(|p| p.1 > 0.0).map(|&(t, v)| (t, v.ln())).collect();
    let (t0, t1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !y0.is_finite() {
        (y0, y1) = (-1.0, 1.0);
    }
    if y1 - y0 < 1e-9 {
        (y0, y1) = (y0 - 1.0, y1 + 1.0);
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let span_t = if t1 > t0 { t1 - t0 } else { 1.0 };
    let sx = |t: f64| M + (t - t0) / span_t * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let _ = writeln!(svg, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(svg, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">tau</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(svg, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">ln I</text>"#, H / 2.0, H / 2.0);
    for k in 0..=4 {
        let t = t0 + span_t * k as f64 / 4.0;
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{t:.3}</text>"#, sx(t), H - M + 16.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, M - 4.0, sy(v) + 4.0);
    }
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd"];
    for (i, (mode, v)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let line: Vec<String> = v.iter().filter(|p| p.1 > 0.0).map(|&(t, x)| format!("{:.2},{:.2}", sx(t), sy(x.ln()))).collect();
        if line.len() > 1 {
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, line.join(" "));
        }
        for &(t, x) in v {
            if x > 0.0 {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, sx(t), sy(x.ln()));
            } else {
                let (cx, cy) = (sx(t), H - M);
                let _ = writeln!(svg, r#"<path d="M{:.2},{:.2} l6,6 m0,-6 l-6,6" stroke="{c}"/>"#, cx - 3.0, cy - 3.0);
            }
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" fill="{c}">{mode}</text>"#, W - M - 80.0, M + 14.0 * i as f64);
    }
    if let Some(sl) = slopes {
        let anchor = series.iter().find(|(m, _)| *m == sl.mode).and_then(|(_, v)| {
            let start = sl.window_lo.unwrap_or(f64::NEG_INFINITY);
            v.iter().find(|p| p.0 >= start && p.1 > 0.0).copied()
        });
        if let Some((ta, va)) = anchor {
            let lines = [("far", Some(sl.far), "#d62728"), ("touching", sl.touch, "#8c564b")];
            for (k, (label, slope, c)) in lines.into_iter().enumerate() {
                let Some(slope) = slope.filter(|x| x.is_finite()) else { continue };
                let end = |t: f64| va.ln() + slope * (t - ta);
                let (ya, yb) = (end(ta).clamp(y0, y1), end(t1).clamp(y0, y1));
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-dasharray="6 4"/>"#,
                    sx(ta),
                    sy(ya),
                    sx(t1),
                    sy(yb)
                );
                let _ = writeln!(svg, r#"<text x="{}" y="{}" fill="{c}">{label} slope {slope:.3}</text>"#, M + 8.0, M + 14.0 * k as f64);
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report_<curve>.svg` per curve and `summary.md`. Missing stages
/// are listed rather than treated as errors.
pub fn emit_report(dir: &Path) -> Result<Vec<String>, LabError> {
    if !dir.is_dir() {
        return Err(LabError::Missing(format!("artifact directory {}", dir.display())));
    }
    let mut missing = Vec::new();
    let mut written = Vec::new();
    let mut md = String::from("# Experiment summary\n\n");
    if let Ok(text) = fs::read_to_string(dir.join(MANIFEST)) {
        md.push_str("| key | value |\n|---|---|\n");
        for (k, v) in read_key_values(&text) {
            let _ = writeln!(md, "| {k} | {v} |");
        }
        md.push('\n');
    } else {
        missing.push("manifest");
    }
    if dir.join("FAILED").exists() {
        let _ = writeln!(md, "**The run failed**; see `FAILED`.\n");
    }

    let mut slopes: BTreeMap<String, Slopes> = BTreeMap::new();
    match read_rows(&dir.join(SLOPES))? {
        Some(rows) => {
            for r in rows {
                let sl = Slopes {
                    mode: s(&r, "mode"),
                    slope_lo: f(&r, "slope_lo").unwrap_or(f64::NAN),
                    slope_hi: f(&r, "slope_hi").unwrap_or(f64::NAN),
                    slope_fit: f(&r, "slope_fit").unwrap_or(f64::NAN),
                    window_lo: f(&r, "window_lo"),
                    eps_sigma: f(&r, "eps_sigma").unwrap_or(f64::NAN),
                    far: f(&r, "far_threshold").unwrap_or(f64::NAN),
                    touch: f(&r, "touch_threshold"),
                    class: s(&r, "class"),
                };
                slopes.insert(s(&r, "curve_id"), sl);
            }
        }
        None => missing.push("slopes"),
    }
    let mut series: Series = BTreeMap::new();
    match read_rows(&dir.join(INDICATOR))? {
        Some(rows) => {
            for r in rows {
                if let (Some(t), Some(v)) = (f(&r, "tau"), f(&r, "I")) {
                    series.entry((s(&r, "curve_id"), s(&r, "mode"))).or_default().push((t, v));
                }
            }
        }
        None => missing.push("indicator"),
    }
    let mut curves: Vec<String> = series.keys().map(|(c, _)| c.clone()).chain(slopes.keys().cloned()).collect();
    curves.dedup();
    curves.sort();
    curves.dedup();
    if curves.is_empty() {
        fs::write(dir.join("report.svg"), plot("-", &[], None))?;
        written.push("report.svg".to_string());
        md.push_str("## Indicator\n\nno samples\n\n");
    } else {
        md.push_str("## Indicator slopes\n\n| curve | mode | slope lo | slope hi | fit | eps_Sigma | far threshold | touch threshold | class |\n|---|---|---|---|---|---|---|---|---|\n");
        for c in &curves {
            let ser: Vec<(String, Vec<(f64, f64)>)> = series.iter().filter(|((k, _), _)| k == c).map(|((_, m), v)| (m.clone(), v.clone())).collect();
            let name = format!("report_{c}.svg");
            fs::write(dir.join(&name), plot(c, &ser, slopes.get(c)))?;
            written.push(name);
            if let Some(sl) = slopes.get(c) {
                let touch = sl.touch.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    md,
                    "| {c} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {touch} | {} |",
                    sl.mode, sl.slope_lo, sl.slope_hi, sl.slope_fit, sl.eps_sigma, sl.far, sl.class
                );
            }
        }
        md.push('\n');
    }
    match read_rows(&dir.join(CONSTANTS))? {
        Some(rows) if !rows.is_empty() => {
            md.push_str("## Constants\n\n| lemma | level | constant | samples | excluded | stability | pass |\n|---|---|---|---|---|---|---|\n");
            for r in rows {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    s(&r, "lemma_id"),
                    s(&r, "level"),
                    s(&r, "fitted_constant"),
                    s(&r, "samples"),
                    s(&r, "excluded"),
                    s(&r, "stability"),
                    s(&r, "pass")
                );
            }
            md.push('\n');
        }
        Some(_) => md.push_str("## Constants\n\nno samples\n\n"),
        None => missing.push("verify"),
    }
    match fs::read_to_string(dir.join(VERDICT)) {
        Ok(text) => {
            md.push_str("## Detection\n\n");
            for (k, v) in read_key_values(&text) {
                let _ = writeln!(md, "- {k}: {v}");
            }
            md.push('\n');
        }
        Err(_) => missing.push("detect"),
    }
    if !missing.is_empty() {
        let _ = writeln!(md, "## Absent stages\n\n{}", missing.join(", "));
    }
    fs::write(dir.join("summary.md"), &md)?;
    written.push("summary.md".into());
    Ok(written)
}
