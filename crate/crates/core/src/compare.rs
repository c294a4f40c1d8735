//! Side-by-side comparison of measure series from several competitions and
//! a static report (CSV tables, SVG line plots, an HTML index).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analyzer::{read_report_series, AnalyzerError, MeasureSeries};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("comparison needs ≥2 competitions, got {0}")]
    TooFewCompetitions(usize),
    #[error("measure names differ: {0} vs {1}")]
    MeasureMismatch(String, String),
    #[error("nothing to report")]
    Empty,
    #[error("reading {path}: {source}")]
    Input { path: PathBuf, source: AnalyzerError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<T> {
    pub first: T,
    pub last: T,
    pub min: T,
    pub max: T,
}

/// One measure across competitions, outer-joined on round.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable<T> {
    pub measure: String,
    pub competitions: Vec<String>,
    /// `(round, value per competition)`; absent points stay `None`.
    pub rows: Vec<(u32, Vec<Option<T>>)>,
    pub summary: Vec<Option<Summary<T>>>,
}

pub fn compare_series<T: Scalar>(
    series_by_competition: &BTreeMap<String, MeasureSeries<T>>,
) -> Result<ComparisonTable<T>, CompareError> {
    if series_by_competition.len() < 2 {
        return Err(CompareError::TooFewCompetitions(series_by_competition.len()));
    }
    let mut names = series_by_competition.values().map(|s| &s.name);
    let measure = names.next().expect("≥2 entries").clone();
    if let Some(other) = names.find(|n| **n != measure) {
        return Err(CompareError::MeasureMismatch(measure, other.clone()));
    }
    let competitions: Vec<String> = series_by_competition.keys().cloned().collect();
    let rounds: BTreeSet<u32> = series_by_competition
        .values()
        .flat_map(|s| s.points.iter().map(|p| p.round))
        .collect();
    let rows = rounds
        .into_iter()
        .map(|r| {
            let cells = series_by_competition.values().map(|s| s.value_at(r)).collect();
            (r, cells)
        })
        .collect();
    let summary = series_by_competition
        .values()
        .map(|s| {
            let first = s.points.first()?.value;
            let last = s.points.last()?.value;
            let (min, max) = s
                .points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.min(p.value), hi.max(p.value)));
            Some(Summary { first, last, min, max })
        })
        .collect();
    Ok(ComparisonTable { measure, competitions, rows, summary })
}

impl<T: Scalar> ComparisonTable<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round");
        for c in &self.competitions {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (round, cells) in &self.rows {
            out.push_str(&round.to_string());
            for cell in cells {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

/// Line plot, one curve per competition. Gaps in a series break its line.
pub fn render_svg<T: Scalar>(table: &ComparisonTable<T>) -> String {
    let values: Vec<f64> = table
        .rows
        .iter()
        .flat_map(|(_, c)| c.iter().flatten().map(|v| v.as_f64()))
        .collect();
    let (mut y_lo, mut y_hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let x_lo = table.rows.first().map_or(0.0, |r| r.0 as f64);
    let x_hi = table.rows.last().map_or(1.0, |r| r.0 as f64).max(x_lo + 1.0);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="18" font-size="13">{}</text>"#, xml_escape(&table.measure));
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"##,
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let x_ticks: Vec<u32> = {
        let span = (x_hi - x_lo) as u32;
        let step = (span / 10).max(1);
        (0..=span / step).map(|i| x_lo as u32 + i * step).collect()
    };
    for x in x_ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            px(x as f64),
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    );
    for (ci, name) in table.competitions.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (round, cells) in &table.rows {
            match cells[ci] {
                Some(v) => segments.last_mut().expect("non-empty").push((px(*round as f64), py(v.as_f64()))),
                None if !segments.last().expect("non-empty").is_empty() => segments.push(Vec::new()),
                None => {}
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let points: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            if seg.len() == 1 {
                let (x, y) = seg[0];
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
            } else {
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    points.join(" ")
                );
            }
        }
        let ly = TOP + 12.0 + ci as f64 * 16.0;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 24.0, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn file_stem(measure: &str) -> String {
    measure
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes `<measure>.csv`, `<measure>.svg` and `index.html` into `dir`.
pub fn render_report<T: Scalar>(tables: &[ComparisonTable<T>], dir: &Path) -> Result<(), CompareError> {
    if tables.is_empty() {
        return Err(CompareError::Empty);
    }
    fs::create_dir_all(dir)?;
    let mut html = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Competition comparison</title>\n\
         <style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:2px 8px}</style>\n\
         </head>\n<body>\n<h1>Competition comparison</h1>\n",
    );
    for table in tables {
        let stem = file_stem(&table.measure);
        let svg = render_svg(table);
        fs::write(dir.join(format!("{stem}.csv")), table.to_csv())?;
        fs::write(dir.join(format!("{stem}.svg")), &svg)?;
        let _ = writeln!(html, "<h2>{}</h2>", xml_escape(&table.measure));
        html.push_str(&svg);
        html.push_str("<table>\n<tr><th>competition</th><th>first</th><th>last</th><th>min</th><th>max</th></tr>\n");
        for (name, summary) in table.competitions.iter().zip(&table.summary) {
            let cells = match summary {
                Some(s) => format!(
                    "<td>{:.4}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td>",
                    s.first.as_f64(),
                    s.last.as_f64(),
                    s.min.as_f64(),
                    s.max.as_f64()
                ),
                None => "<td></td><td></td><td></td><td></td>".to_string(),
            };
            let _ = writeln!(html, "<tr><td>{}</td>{cells}</tr>", xml_escape(name));
        }
        html.push_str("</table>\n");
        let _ = writeln!(html, "<p><a href=\"{stem}.csv\">{stem}.csv</a></p>");
    }
    html.push_str("</body>\n</html>\n");
    fs::write(dir.join("index.html"), html)?;
    Ok(())
}

/// Tables for every measure shared by all analysis directories, and one
/// warning per measure that is missing somewhere.
pub fn compare_analyses<T: Scalar>(
    inputs: &BTreeMap<String, PathBuf>,
) -> Result<(Vec<ComparisonTable<T>>, Vec<String>), CompareError> {
    if inputs.len() < 2 {
        return Err(CompareError::TooFewCompetitions(inputs.len()));
    }
    let mut by_measure: BTreeMap<String, BTreeMap<String, MeasureSeries<T>>> = BTreeMap::new();
    for (name, dir) in inputs {
        let series = read_report_series::<T>(dir).map_err(|source| CompareError::Input {
            path: dir.clone(),
            source,
        })?;
        for s in series {
            by_measure.entry(s.name.clone()).or_default().insert(name.clone(), s);
        }
    }
    let mut tables = Vec::new();
    let mut warnings = Vec::new();
    for (measure, series) in by_measure {
        if series.len() == inputs.len() {
            tables.push(compare_series(&series)?);
        } else {
            let missing: Vec<&str> = inputs
                .keys()
                .filter(|k| !series.contains_key(*k))
                .map(String::as_str)
                .collect();
            warnings.push(format!("measure {measure} skipped: missing from {}", missing.join(", ")));
        }
    }
    Ok((tables, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::MeasurePoint;

    fn series(name: &str, values: &[(u32, f64)]) -> MeasureSeries<f64> {
        MeasureSeries {
            name: name.into(),
            points: values
                .iter()
                .map(|&(round, value)| MeasurePoint { round, value, n_games: 1 })
                .collect(),
        }
    }

    #[test]
    fn outer_join_leaves_gaps() {
        let human: Vec<_> = (1..=7).map(|r| (r, r as f64)).collect();
        let llm: Vec<_> = (1..=30).map(|r| (r, 0.5)).collect();
        let t = compare_series(&BTreeMap::from([
            ("human".to_string(), series("m", &human)),
            ("llm".to_string(), series("m", &llm)),
        ]))
        .unwrap();
        assert_eq!(t.rows.len(), 30);
        assert_eq!(t.rows[6].1, vec![Some(7.0), Some(0.5)]);
        assert_eq!(t.rows[7].1, vec![None, Some(0.5)]);
        assert_eq!(t.summary[0], Some(Summary { first: 1.0, last: 7.0, min: 1.0, max: 7.0 }));
        assert!(t.to_csv().lines().nth(8).unwrap() == "8,,0.5");
    }

    #[test]
    fn mismatched_names_and_single_input_fail() {
        let two = BTreeMap::from([
            ("a".to_string(), series("m", &[(1, 1.0)])),
            ("b".to_string(), series("n", &[(1, 1.0)])),
        ]);
        assert!(matches!(compare_series(&two), Err(CompareError::MeasureMismatch(..))));
        let one = BTreeMap::from([("a".to_string(), series("m", &[(1, 1.0)]))]);
        assert!(matches!(compare_series(&one), Err(CompareError::TooFewCompetitions(1))));
    }

    #[test]
    fn report_shape_and_determinism() {
        let t = compare_series(&BTreeMap::from([
            ("a".to_string(), series("m", &[(1, 1.0), (2, 0.5)])),
            ("b".to_string(), series("m", &[(1, 0.2), (3, 0.4)])),
        ]))
        .unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        render_report(&[t.clone()], d1.path()).unwrap();
        render_report(&[t], d2.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["index.html", "m.csv", "m.svg"]);
        for n in names {
            assert_eq!(fs::read(d1.path().join(&n)).unwrap(), fs::read(d2.path().join(&n)).unwrap());
        }
        assert!(render_report::<f64>(&[], d1.path()).is_err());
    }
}
