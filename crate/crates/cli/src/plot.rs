//! Rate-distortion plots: distortion on x, rate in bits per dimension on
//! y, one marker series per regime and an optional dashed oracle curve.
//! The CSV written next to the SVG lists exactly the plotted points.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::experiment::ResultRow;

pub const ORACLE_SERIES: &str = "oracle";

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub series: String,
    pub distortion: f64,
    pub rate: f64,
}

#[derive(Debug, serde::Deserialize)]
struct OracleRow {
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "R")]
    r: f64,
    provenance: String,
}

pub fn read_oracle(path: &Path) -> CliResult<Vec<PlotPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    let rows: Vec<OracleRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(path.display(), e))?;
    Ok(rows
        .into_iter()
        .map(|o| PlotPoint {
            series: format!("{ORACLE_SERIES} ({})", o.provenance),
            distortion: o.d,
            rate: o.r,
        })
        .collect())
}

pub fn trained_points(rows: &[ResultRow]) -> Vec<PlotPoint> {
    rows.iter()
        .map(|r| PlotPoint {
            series: r.regime.to_string(),
            distortion: r.mse,
            rate: r.bits_per_dim,
        })
        .collect()
}

pub fn points_csv(points: &[PlotPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "D", "R"]).expect("in-memory csv");
    for p in points {
        w.write_record([p.series.clone(), p.distortion.to_string(), p.rate.to_string()])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: [f64; 4] = [60.0, 150.0, 30.0, 50.0]; // left right top bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { 0.1 * lo.abs() } else { 1.0 };
            lo -= pad;
            hi += pad;
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            // rates and distortions are anchored at zero
            lo: if lo >= 0.0 { 0.0 } else { lo - pad },
            hi: hi + pad,
        }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=5).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0).collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG with one circle per trained point and a dashed polyline per oracle
/// series.
pub fn render_svg(points: &[PlotPoint]) -> CliResult<String> {
    if points.is_empty() {
        return Err(CliError::Usage("nothing to plot".into()));
    }
    let x = Axis::fit(points.iter().map(|p| p.distortion));
    let y = Axis::fit(points.iter().map(|p| p.rate));
    let (x0, x1) = (MARGIN[0], WIDTH - MARGIN[1]);
    let (y0, y1) = (HEIGHT - MARGIN[3], MARGIN[2]);
    let px = |v: f64| x.map(v, x0, x1);
    let py = |v: f64| y.map(v, y0, y1);

    let mut series: BTreeMap<&str, Vec<&PlotPoint>> = BTreeMap::new();
    for p in points {
        series.entry(p.series.as_str()).or_default().push(p);
    }

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    for t in x.ticks() {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{y0}" x2="{0:.2}" y2="{1}" stroke="black"/><text x="{0:.2}" y="{2}" text-anchor="middle">{3:.3}</text>"#,
            px(t),
            y0 + 5.0,
            y0 + 18.0,
            t
        );
    }
    for t in y.ticks() {
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="black"/><text x="{2}" y="{3:.2}" text-anchor="end">{4:.3}</text>"#,
            py(t),
            x0 - 5.0,
            x0 - 8.0,
            py(t) + 4.0,
            t
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">distortion (MSE)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">rate (bits/dim)</text>"#,
        (y0 + y1) / 2.0
    );

    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let oracle = name.starts_with(ORACLE_SERIES);
        let _ = writeln!(s, r#"<g class="series" data-series="{}">"#, escape(name));
        if oracle {
            let mut sorted = pts.clone();
            sorted.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
            let coords: Vec<String> = sorted
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.distortion), py(p.rate)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="curve" points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                coords.join(" ")
            );
        } else {
            for p in pts {
                let _ = writeln!(
                    s,
                    r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                    px(p.distortion),
                    py(p.rate)
                );
            }
        }
        let _ = writeln!(s, "</g>");
        let ly = MARGIN[2] + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN[1] + 15.0;
        if oracle {
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-dasharray="6 4"/>"#,
                lx + 20.0
            );
        } else {
            let _ = writeln!(s, r#"<circle cx="{}" cy="{ly}" r="4" fill="{color}"/>"#, lx + 10.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(series: &str, d: f64, r: f64) -> PlotPoint {
        PlotPoint {
            series: series.into(),
            distortion: d,
            rate: r,
        }
    }

    #[test]
    fn single_point_gives_one_marker() {
        let svg = render_svg(&[pt("fed", 1.0, 2.0)]).unwrap();
        assert_eq!(svg.matches(r#"class="point""#).count(), 1);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn oracle_is_dashed_polyline() {
        let pts = vec![pt("fed", 1.0, 2.0), pt("oracle (analytic)", 2.0, 0.5), pt("oracle (analytic)", 0.5, 1.5)];
        let svg = render_svg(&pts).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(points_csv(&pts).lines().count(), 4);
    }

    #[test]
    fn empty_input_is_a_usage_error() {
        assert!(matches!(render_svg(&[]), Err(CliError::Usage(_))));
    }
}
