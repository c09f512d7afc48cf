use std::fmt::Write;

use crate::error::CliError;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 50.0);
const COLOURS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Daily actual totals and per-model forecasts over the test period.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    pub dates: Vec<String>,
    pub actual: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
}

impl ForecastTable {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::MissingArtifact(format!("malformed forecast table: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
        if header.len() < 2 || header[0] != "date" || header[1] != "actual" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut table = ForecastTable {
            dates: Vec::new(),
            actual: Vec::new(),
            series: header[2..].iter().map(|l| (l.to_string(), Vec::new())).collect(),
        };
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(bad(format!("line {} has {} fields, expected {}", n + 2, fields.len(), header.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {s:?}: {e}", n + 2)));
            table.dates.push(fields[0].to_string());
            table.actual.push(num(fields[1])?);
            for (i, s) in table.series.iter_mut().enumerate() {
                s.1.push(num(fields[i + 2])?);
            }
        }
        Ok(table)
    }

    pub fn select(self, labels: &[String]) -> Result<Self, CliError> {
        let mut series = Vec::new();
        for l in labels {
            let s = self.series.iter().find(|(name, _)| name == l).ok_or_else(|| {
                CliError::MissingArtifact(format!("no forecasts for {l} in the evaluation report"))
            })?;
            series.push(s.clone());
        }
        Ok(Self { series, ..self })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,actual");
        for (l, _) in &self.series {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (i, d) in self.dates.iter().enumerate() {
            let _ = write!(out, "{d},{}", self.actual[i]);
            for (_, v) in &self.series {
                let _ = write!(out, ",{}", v[i]);
            }
            out.push('\n');
        }
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, values: &[f64], x: impl Fn(usize) -> f64, y: impl Fn(f64) -> f64, colour: &str, dash: bool) {
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
        .collect();
    let dash = if dash { r#" stroke-dasharray="5,3""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
        points.join(" ")
    );
}

/// Line chart of actual versus forecast totals.
pub fn render_svg(table: &ForecastTable, horizon: usize) -> String {
    let (left, right, top, bottom) = MARGIN;
    let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
    let n = table.dates.len();
    let all = table.actual.iter().chain(table.series.iter().flat_map(|(_, v)| v.iter()));
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let x = |i: usize| left + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { pw / 2.0 };
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">Total daily demand, {horizon}-day-ahead forecasts</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>"##
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.0}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    let ticks = n.min(6);
    for k in 0..ticks {
        let i = if ticks > 1 { k * (n - 1) / (ticks - 1) } else { 0 };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x(i),
            top + ph + 16.0,
            escape(&table.dates[i])
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">kWh</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    polyline(&mut out, &table.actual, x, y, "#000000", false);
    for (i, (_, v)) in table.series.iter().enumerate() {
        polyline(&mut out, v, x, y, COLOURS[i % COLOURS.len()], true);
    }
    let legend: Vec<(&str, &str)> = std::iter::once(("Actual", "#000000"))
        .chain(table.series.iter().enumerate().map(|(i, (l, _))| (l.as_str(), COLOURS[i % COLOURS.len()])))
        .collect();
    for (i, (label, colour)) in legend.iter().enumerate() {
        let ly = top + 12.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + 10.0,
            left + 30.0,
            left + 36.0,
            ly + 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
