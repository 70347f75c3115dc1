//! Line charts of one metric against the round, written as plain SVG.

use std::fmt::Write;

use crate::aggregate::round_average;
use crate::archive::MetricsTable;
use crate::error::{CliError, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Per-round values of one method, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Option<f64>>,
}

/// Seed-mean of `metric` at every round. Unknown metrics are usage errors
/// that list the available columns.
pub fn seed_mean(label: &str, tables: &[MetricsTable], metric: &str) -> Result<Series> {
    let mut columns = Vec::with_capacity(tables.len());
    for t in tables {
        let c = t.column(metric).ok_or_else(|| {
            CliError::Usage(format!("unknown metric `{metric}`; available columns: {}", t.columns.join(", ")))
        })?;
        columns.push(c);
    }
    let rounds = columns.iter().map(Vec::len).max().unwrap_or(0);
    let points = (0..rounds)
        .map(|i| round_average(&columns.iter().map(|c| c.get(i).copied().flatten()).collect::<Vec<_>>()))
        .collect();
    Ok(Series { label: label.to_string(), points })
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the series as an SVG document. Fails when every value is absent.
pub fn render_svg(metric: &str, series: &[Series]) -> Result<String> {
    let values: Vec<f64> = series.iter().flat_map(|s| s.points.iter().flatten().copied()).collect();
    if values.is_empty() {
        return Err(CliError::Runtime(format!("metric `{metric}` has no values to plot")));
    }
    let rounds = series.iter().map(|s| s.points.len()).max().unwrap_or(1).max(1);
    let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |round: usize| {
        LEFT + if rounds == 1 { 0.5 * plot_w } else { (round - 1) as f64 / (rounds - 1) as f64 * plot_w }
    };
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ =
        writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0,
            tick_label(v)
        );
    }
    let step = (rounds / 7).max(1);
    for r in (1..=rounds).filter(|r| (r - 1) % step == 0 || *r == rounds) {
        let _ =
            writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#, x(r), TOP + plot_h + 18.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(svg, r#"<text x="{LEFT}" y="{:.2}">{}</text>"#, TOP - 10.0, escape(metric));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // Absent rounds break the line into separate segments.
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (j, p) in s.points.iter().enumerate() {
            match p {
                Some(v) => segments.last_mut().expect("nonempty").push((x(j + 1), y(*v))),
                None if !segments.last().expect("nonempty").is_empty() => segments.push(Vec::new()),
                None => {}
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            if seg.len() == 1 {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, seg[0].0, seg[0].1);
                continue;
            }
            let pts: Vec<String> = seg.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(col: &str, v: &[Option<f64>]) -> MetricsTable {
        MetricsTable { columns: vec![col.into()], rows: v.iter().map(|x| vec![*x]).collect() }
    }

    #[test]
    fn seed_mean_per_round() {
        let s = seed_mean("m", &[table("tar", &[Some(1.0), None]), table("tar", &[Some(3.0), None])], "tar").unwrap();
        assert_eq!(s.points, vec![Some(2.0), None]);
    }

    #[test]
    fn unknown_metric_lists_columns() {
        let err = seed_mean("m", &[table("tar", &[Some(1.0)])], "acc").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("tar"));
    }

    #[test]
    fn empty_column_is_an_error() {
        let s = Series { label: "m".into(), points: vec![None, None] };
        assert!(render_svg("ftr", &[s]).is_err());
    }

    #[test]
    fn one_polyline_vertex_per_round() {
        let s = Series { label: "a<b".into(), points: (0..70).map(|i| Some(i as f64)).collect() };
        let svg = render_svg("tar", std::slice::from_ref(&s)).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 70);
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg, render_svg("tar", &[s]).unwrap());
    }
}
