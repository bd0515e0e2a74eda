//! CSV, JSON-lines and SVG emitters. Floats are written with fixed
//! precision so reruns produce byte-identical files.

use std::io::Write;

use super::{AggregateMetrics, ParetoPoint, StepRecord, VariabilityRow};

/// Column order of the comparison tables. `Var` and `VarTime` are
/// population standard deviations.
pub const TABLE_HEADER: [&str; 14] = [
    "policy",
    "Uti",
    "Var",
    "Num",
    "Time",
    "VarTime",
    "Top%",
    "Front%",
    "Left+Right%",
    "Back%",
    "Left%",
    "Right%",
    "ScalarReturn",
    "Episodes",
];

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn metric_fields(a: &AggregateMetrics) -> Vec<String> {
    vec![
        f4(a.uti_mean),
        f4(a.uti_std),
        f4(a.num_mean),
        f4(a.time_mean),
        f4(a.time_std),
        f4(a.face_pct.top),
        f4(a.face_pct.front),
        f4(a.left_right_pct),
        f4(a.face_pct.back),
        f4(a.face_pct.left),
        f4(a.face_pct.right),
        format!("{:.6}", a.scalar_return_mean),
        a.episodes.to_string(),
    ]
}

pub fn table_csv<W: Write>(rows: &[(String, AggregateMetrics)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for (name, agg) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(metric_fields(agg));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn pareto_csv<W: Write>(points: &[ParetoPoint], frontier: &[ParetoPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["w_space", "w_time", "Uti", "Time", "on_front"])?;
    for p in points {
        let on_front = frontier.contains(p);
        w.write_record([
            format!("{:.6}", p.omega.w_space),
            format!("{:.6}", p.omega.w_time),
            f4(p.uti_mean),
            f4(p.time_mean),
            (on_front as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn variability_csv<W: Write>(rows: &[VariabilityRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variable%"];
    header.extend(TABLE_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{:.2}", r.fraction), r.policy.clone()];
        rec.extend(metric_fields(&r.aggregate));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_jsonl<W: Write>(records: &[StepRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Scatter of operational time (x) against utilisation (y); frontier
/// points are filled and joined.
pub fn pareto_svg(points: &[ParetoPoint], frontier: &[ParetoPoint]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let xs = points.iter().map(|p| p.time_mean);
    let ys = points.iter().map(|p| p.uti_mean);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let sx = |v: f64| PAD + (v - x0) / span(x0, x1) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / span(y0, y1) * (H - 2.0 * PAD);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - PAD
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">operational time</text>\n",
        W / 2.0,
        H - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\" font-size=\"12\">utilization (%)</text>\n",
        H / 2.0,
        H / 2.0
    ));
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{v:.2}</text>\n",
            H - PAD + 14.0
        ));
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\" font-size=\"10\">{v:.2}</text>\n",
            PAD - 4.0
        ));
    }
    if frontier.len() > 1 {
        let mut by_time = frontier.to_vec();
        by_time.sort_by(|a, b| a.time_mean.total_cmp(&b.time_mean));
        let path: Vec<String> =
            by_time.iter().map(|p| format!("{:.2},{:.2}", sx(p.time_mean), sy(p.uti_mean))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"crimson\"/>\n",
            path.join(" ")
        ));
    }
    for p in points {
        let fill = if frontier.contains(p) { "crimson" } else { "none" };
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{fill}\" stroke=\"steelblue\"/>\n",
            sx(p.time_mean),
            sy(p.uti_mean)
        ));
    }
    s.push_str("</svg>\n");
    s
}
