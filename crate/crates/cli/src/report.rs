//! Summary report assembled from the JSON outputs of earlier stages, plus
//! two static SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;
use serde_json::{json, Map, Value};

use crate::manifest::StageOutputs;

fn read_json(out: &Path, name: &str) -> Option<Value> {
    let text = fs::read_to_string(out.join(name)).ok()?;
    serde_json::from_str(&text).ok()
}

fn mean_of(scores: &Value) -> Value {
    let g: Vec<f64> = scores
        .as_array()
        .map(|a| a.iter().filter_map(|s| s["G"].as_f64()).collect())
        .unwrap_or_default();
    if g.is_empty() {
        return Value::Null;
    }
    json!({ "n": g.len(), "mean_G": g.iter().sum::<f64>() / g.len() as f64 })
}

pub fn stage_report(out: &Path, outputs: &mut StageOutputs) -> Result<()> {
    let mut report = Map::new();
    if let Some(s) = read_json(out, "cluster_summary.json") {
        let assoc = read_json(out, "associations.json").unwrap_or(Value::Null);
        report.insert(
            "clusters".into(),
            json!({
                "detections_kept": s["detections_kept"],
                "n_clusters": s["n_clusters"],
                "noise": s["noise"],
                "largest_cluster_size": s["largest_cluster_size"],
                "site_cluster": assoc["site_cluster"],
                "largest_cluster_sites": assoc["largest_cluster_sites"],
            }),
        );
    }
    if let Some(idw) = read_json(out, "idw.json") {
        report.insert(
            "idw".into(),
            json!({
                "params": idw["params"],
                "sites": mean_of(&idw["sites"]),
                "controls_within": mean_of(&idw["controls_within"]),
                "controls_no_sites": mean_of(&idw["controls_no_sites"]),
            }),
        );
    }
    let bootstrap = read_json(out, "bootstrap.json");
    if let Some(b) = &bootstrap {
        report.insert("bootstrap".into(), json!({ "sets": b["sets"], "comparisons": b["comparisons"] }));
    }
    if let Some(g) = read_json(out, "grid_corr.json") {
        report.insert("grid_correlation".into(), json!({ "n_cells": g["n_cells"], "spearman": g["spearman"] }));
    }
    let elevation = read_json(out, "elevation.json");
    if let Some(e) = &elevation {
        report.insert(
            "elevation".into(),
            json!({
                "subsets": e["subsets"],
                "kruskal_wallis": e["kruskal_wallis"],
                "centroids": e["centroids"]["summary"],
            }),
        );
    }
    if let Some(d) = read_json(out, "deteval.json") {
        report.insert("detection_eval".into(), d);
    }
    if let Some(b) = &bootstrap {
        outputs.write_bytes("bootstrap_ci.svg", bootstrap_svg(b).as_bytes())?;
    }
    if let Some(e) = &elevation {
        outputs.write_bytes("elevation_box.svg", elevation_svg(e).as_bytes())?;
    }
    if report.is_empty() {
        outputs.warn("no stage outputs found to report on".into());
    }
    outputs.write_json("report.json", &Value::Object(report))?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Maps `[lo, hi]` onto `[a, b]`.
fn scale(lo: f64, hi: f64, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    move |v| a + (v - lo) / span * (b - a)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = if hi > lo { (hi - lo) * 0.08 } else { 1.0 };
    (lo - pad, hi + pad)
}

fn bootstrap_svg(b: &Value) -> String {
    let sets = b["sets"].as_array().cloned().unwrap_or_default();
    let rows: Vec<(String, f64, f64, f64)> = sets
        .iter()
        .filter_map(|s| {
            let r = &s["result"];
            Some((s["name"].as_str()?.to_string(), r["observed_mean"].as_f64()?, r["ci_low"].as_f64()?, r["ci_high"].as_f64()?))
        })
        .collect();
    let (w, left, right, top, step) = (720.0, 200.0, 690.0, 50.0, 40.0);
    let h = top + step * rows.len().max(1) as f64 + 40.0;
    let lo = rows.iter().map(|r| r.2.min(r.1)).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.3.max(r.1)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if rows.is_empty() { (0.0, 1.0) } else { padded(lo, hi) };
    let x = scale(lo, hi, left, right);
    let level = b["ci_level"].as_f64().unwrap_or(0.0) * 100.0;
    let mut s = svg_open(w, h);
    let _ = writeln!(s, "<text x=\"{left}\" y=\"24\" font-size=\"14\">Mean IDW score with {level:.0}% bootstrap interval</text>");
    let axis_y = h - 30.0;
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{axis_y}\" x2=\"{right}\" y2=\"{axis_y}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let xv = x(v);
        let _ = writeln!(s, "<line x1=\"{xv:.2}\" y1=\"{axis_y}\" x2=\"{xv:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", axis_y + 5.0);
        let _ = writeln!(s, "<text x=\"{xv:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.3}</text>", axis_y + 18.0);
    }
    for (i, (name, mean, low, high)) in rows.iter().enumerate() {
        let y = top + step * i as f64 + step / 2.0;
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", left - 10.0, y + 4.0, escape(name));
        let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#1f77b4\" stroke-width=\"3\"/>", x(*low), x(*high));
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"#d62728\"/>", x(*mean));
    }
    s.push_str("</svg>\n");
    s
}

fn elevation_svg(e: &Value) -> String {
    let boxes: Vec<(String, [f64; 5])> = e["subsets"]
        .as_array()
        .cloned()
        .unwrap_or_default()
        .iter()
        .filter_map(|sub| {
            let sm = &sub["summary"];
            Some((
                sub["subset"].as_str()?.to_string(),
                [sm["min"].as_f64()?, sm["q1"].as_f64()?, sm["median"].as_f64()?, sm["q3"].as_f64()?, sm["max"].as_f64()?],
            ))
        })
        .collect();
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 70.0, 700.0, 40.0, 360.0);
    let lo = boxes.iter().map(|b| b.1[0]).fold(f64::INFINITY, f64::min);
    let hi = boxes.iter().map(|b| b.1[4]).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if boxes.is_empty() { (0.0, 1.0) } else { padded(lo, hi) };
    let y = scale(lo, hi, bottom, top);
    let mut s = svg_open(w, h);
    let _ = writeln!(s, "<text x=\"{left}\" y=\"24\" font-size=\"14\">Elevation by subset (m)</text>");
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let yv = y(v);
        let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{yv:.2}\" x2=\"{left}\" y2=\"{yv:.2}\" stroke=\"black\"/>", left - 5.0);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.0}</text>", left - 8.0, yv + 4.0);
    }
    let slot = (right - left) / boxes.len().max(1) as f64;
    for (i, (name, [min, q1, med, q3, max])) in boxes.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(40.0);
        let _ = writeln!(s, "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", y(*min), y(*max));
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"black\"/>",
            cx - half,
            y(*q3),
            2.0 * half,
            (y(*q1) - y(*q3)).max(0.0)
        );
        let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>", cx - half, y(*med), cx + half, y(*med));
        let _ = writeln!(s, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", bottom + 20.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
