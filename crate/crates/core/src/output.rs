//! Run artifacts: manifest, series CSV, summary JSON and an optional SVG plot.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::Resolved;
use crate::error::Result;
use crate::experiment::{ExperimentReport, SeriesRow};

pub const SERIES_HEADER: &str = "T,agent,mean_err,stderr,bound,disagreement,disagreement_bound";

/// Shortest round-trip formatting, switching to exponent form for very large or small values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for r in rows {
        let stderr = r.stderr.map(num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            r.agent,
            num(r.mean_err),
            stderr,
            num(r.bound),
            num(r.disagreement),
            num(r.disagreement_bound)
        );
    }
    out
}

pub fn manifest(r: &Resolved) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": r.config,
        "derived": r.derived,
    })
}

pub fn summary(r: &Resolved, report: &ExperimentReport) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    v["constants"] = serde_json::to_value(&r.constants)?;
    v["f_star"] = json!(r.derived.f_star);
    Ok(v)
}

/// Writes every artifact for one experiment into `dir`, creating it if needed.
pub fn write_run(dir: &Path, r: &Resolved, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest(r))? + "\n")?;
    fs::write(dir.join("series.csv"), series_csv(&report.rows))?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary(r, report)?)? + "\n")?;
    if r.config.plot {
        fs::write(dir.join("plot.svg"), svg_plot(&report.name, &report.rows))?;
    }
    Ok(())
}

/// One line per swept value.
pub fn comparison_csv(axis: &str, entries: &[(f64, Option<&ExperimentReport>)]) -> String {
    let mut out = format!("{axis},slope,r_squared,final_mean_err,final_bound,pass,status\n");
    for (value, rep) in entries {
        match rep {
            Some(rep) => {
                let (slope, r2) = rep
                    .fit
                    .map(|f| (num(f.slope), num(f.r_squared)))
                    .unwrap_or_default();
                let last_t = rep.rows.last().map(|r| r.t).unwrap_or(0);
                let last: Vec<&SeriesRow> = rep.rows.iter().filter(|r| r.t == last_t).collect();
                let mean = last.iter().map(|r| r.mean_err).sum::<f64>() / last.len().max(1) as f64;
                let bound = last.first().map(|r| r.bound).unwrap_or(f64::NAN);
                let _ = writeln!(out, "{},{slope},{r2},{},{},{},ok", num(*value), num(mean), num(bound), rep.pass);
            }
            None => {
                let _ = writeln!(out, "{},,,,,false,failed", num(*value));
            }
        }
    }
    out
}

/// Log-log plot of the agent-averaged mean error with the bound overlaid.
pub fn svg_plot(title: &str, rows: &[SeriesRow]) -> String {
    let mut ts: Vec<usize> = rows.iter().map(|r| r.t).collect();
    ts.dedup();
    let series: Vec<(f64, f64, f64)> = ts
        .iter()
        .map(|&t| {
            let at: Vec<&SeriesRow> = rows.iter().filter(|r| r.t == t).collect();
            let mean = at.iter().map(|r| r.mean_err).sum::<f64>() / at.len() as f64;
            (t as f64, mean, at[0].bound)
        })
        .filter(|&(t, _, _)| t > 0.0)
        .collect();
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"25\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    );
    let logs = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> {
        series.iter().map(f).filter(|v| *v > 0.0 && v.is_finite()).map(f64::log10).collect()
    };
    let xs = logs(|p| p.0);
    let mut ys = logs(|p| p.1);
    ys.extend(logs(|p| p.2));
    if xs.is_empty() || ys.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| pad + (x.log10() - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y.log10() - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(
        svg,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(
        svg,
        "<text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">log10 T in [{x0:.2}, {x1:.2}], log10 error in [{y0:.2}, {y1:.2}]</text>",
        h - 15.0
    );
    for (idx, color, label) in [(1usize, "#1f77b4", "mean error"), (2, "#d62728", "bound")] {
        let pts: Vec<String> = series
            .iter()
            .map(|p| (p.0, if idx == 1 { p.1 } else { p.2 }))
            .filter(|&(_, y)| y > 0.0 && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = if idx == 1 { 45.0 } else { 60.0 };
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>",
            w - pad - 80.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
