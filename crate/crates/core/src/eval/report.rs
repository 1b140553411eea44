use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use super::SweepReport;
use crate::error::Result;

/// Writes `sweep.csv`, `report.json` and `radar.svg` into `out_dir`.
/// Output depends only on the inputs, so re-runs are byte-identical.
pub fn emit_report(report: &SweepReport, config: &serde_json::Value, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    w.write_record(["bitmask", "dims", "score", "n"])?;
    for r in &report.rows {
        let dims: Vec<&str> = r.dims.iter().map(|d| d.name()).collect();
        w.write_record([
            r.bitmask.to_string(),
            dims.join("+"),
            format!("{:.6}", r.score),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;

    let doc = json!({
        "config": config,
        "dims": report.dims,
        "full_score": report.row(report.full_mask()).map(|r| r.score),
        "singletons": report.singletons.iter().map(|(d, s)| json!({"dim": d, "score": s})).collect::<Vec<_>>(),
        "rows": report.rows,
    });
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    fs::write(out_dir.join("radar.svg"), radar_svg(report))?;
    Ok(())
}

/// Radar chart of singleton scores, one axis per dimension in fixed order,
/// radius 0 at the centre and 1 at the rim.
pub fn radar_svg(report: &SweepReport) -> String {
    let (cx, cy, r) = (200.0, 200.0, 140.0);
    let n = report.singletons.len().max(1);
    let point = |i: usize, v: f64| {
        let angle = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        (cx + r * v * angle.cos(), cy + r * v * angle.sin())
    };
    let mut svg = String::new();
    svg.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n");
    svg.push_str("<rect width=\"400\" height=\"400\" fill=\"white\"/>\n");
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..n)
            .map(|i| {
                let (x, y) = point(i, ring);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(svg, "<polygon class=\"grid\" points=\"{}\" fill=\"none\" stroke=\"#ccc\"/>", pts.join(" "));
    }
    for (i, (dim, score)) in report.singletons.iter().enumerate() {
        let (x, y) = point(i, 1.0);
        let (lx, ly) = point(i, 1.18);
        let _ = writeln!(svg, "<line class=\"axis\" x1=\"{cx:.2}\" y1=\"{cy:.2}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#888\"/>");
        let _ = writeln!(
            svg,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" font-size=\"12\" text-anchor=\"middle\">{} {score:.3}</text>",
            dim.name()
        );
    }
    let pts: Vec<String> = report
        .singletons
        .iter()
        .enumerate()
        .map(|(i, (_, s))| {
            let (x, y) = point(i, s.clamp(0.0, 1.0));
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        svg,
        "<polygon class=\"scores\" points=\"{}\" fill=\"#4477aa55\" stroke=\"#4477aa\"/>",
        pts.join(" ")
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{dimension_sweep, EvalTriplet, Embeddings};
    use crate::similarity::Dimension;

    #[test]
    fn files_are_complete_and_stable() {
        let mut emb = Embeddings::new();
        for (i, id) in ["a", "b", "c", "d"].iter().enumerate() {
            emb.insert(id.to_string(), (0..12).map(|k| ((i * 7 + k * 3) % 5) as f64).collect());
        }
        let ts = vec![
            EvalTriplet {
                anchor_id: "a".into(),
                positive_id: "b".into(),
                negative_id: "c".into(),
                agreement: None,
            },
            EvalTriplet {
                anchor_id: "d".into(),
                positive_id: "a".into(),
                negative_id: "b".into(),
                agreement: None,
            },
        ];
        let report = dimension_sweep(&ts, &emb, Dimension::first(6).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = json!({"model": "test"});
        emit_report(&report, &cfg, dir.path()).unwrap();
        let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
        let first = (read("sweep.csv"), read("report.json"), read("radar.svg"));
        assert_eq!(String::from_utf8(first.0.clone()).unwrap().lines().count(), 64);
        let svg = String::from_utf8(first.2.clone()).unwrap();
        assert_eq!(svg.matches("class=\"axis\"").count(), 6);
        emit_report(&report, &cfg, dir.path()).unwrap();
        assert_eq!(first, (read("sweep.csv"), read("report.json"), read("radar.svg")));
    }
}
