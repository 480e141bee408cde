//! Self-contained SVG rendering of cost-versus-error records on log-log
//! axes, one series per (method, schedule kind).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::sweep::ExperimentRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Points of one series, sorted by cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Groups plottable records (positive finite cost and error) by
/// `method algorithm`.
pub fn series(records: &[ExperimentRecord]) -> Vec<Series> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let (x, y) = (r.schedule_cost, r.error_mean);
        if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
            groups.entry(format!("{} {}", r.method, r.algorithm)).or_default().push((x, y));
        }
    }
    groups
        .into_iter()
        .map(|(label, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label, points }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct LogAxis {
    lo: i32,
    hi: i32,
}

impl LogAxis {
    fn spanning(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let l = v.log10();
            lo = lo.min(l);
            hi = hi.max(l);
        }
        let (mut lo, mut hi) = (lo.floor() as i32, hi.ceil() as i32);
        if lo == hi {
            lo -= 1;
            hi += 1;
        }
        Self { lo, hi }
    }

    fn fraction(&self, v: f64) -> f64 {
        (v.log10() - self.lo as f64) / (self.hi - self.lo) as f64
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn power_label(e: i32) -> String {
    format!(r#"10<tspan dy="-6" font-size="9">{e}</tspan>"#)
}

/// Renders the chart as an SVG document.
pub fn render_svg(records: &[ExperimentRecord]) -> String {
    let series = series(records);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xa = LogAxis::spanning(all().map(|p| p.0));
    let ya = LogAxis::spanning(all().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + xa.fraction(v) * pw;
    let py = |v: f64| TOP + (1.0 - ya.fraction(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );

    let _ = writeln!(s, r#"<g class="x-ticks">"#);
    for e in xa.lo..=xa.hi {
        let x = px(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text class="tick" x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 20.0,
            power_label(e)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="y-ticks">"#);
    for e in ya.lo..=ya.hi {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text class="tick" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 8.0,
            y + 4.0,
            power_label(e)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">computational cost</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">estimated error</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="series" data-label="{}">"#, escape(&ser.label));
        if ser.points.len() > 1 {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let _ = writeln!(s, "</g>");
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 25.0,
            lx + 32.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the chart to `path`. With nothing to plot it prints a warning,
/// writes nothing and returns `false`.
pub fn emit_plot(records: &[ExperimentRecord], path: &Path) -> Result<bool> {
    if series(records).is_empty() {
        eprintln!("warning: no plottable records; {} not written", path.display());
        return Ok(false);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, render_svg(records)).map_err(|e| HarnessError::io(path, e))?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(algorithm: &str, cost: f64, error: f64) -> ExperimentRecord {
        ExperimentRecord {
            method: "teki".into(),
            algorithm: algorithm.into(),
            epsilon: 0.1,
            k: 3,
            schedule_cost: cost,
            work_units: cost,
            error_mean: error,
            error_stderr: 0.0,
            replicates: 1,
            failures: 0,
            seed: 0,
        }
    }

    #[test]
    fn single_record_is_a_single_point() {
        let svg = render_svg(&[record("ml", 50.0, 0.02)]);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 0);
    }

    #[test]
    fn ticks_are_powers_of_ten() {
        let svg = render_svg(&[record("ml", 50.0, 0.02), record("ml", 5000.0, 0.0002)]);
        // cost decades 10^1..10^4, error decades 10^-4..10^-1
        for e in [1, 2, 3, 4, -4, -3, -2, -1] {
            assert!(svg.contains(&power_label(e)), "missing 10^{e}");
        }
        assert!(!svg.contains(&power_label(5)));
        assert_eq!(svg.matches(r#"class="tick""#).count(), 8);
    }

    #[test]
    fn two_series_get_two_lines_and_a_legend() {
        let recs = [
            record("ml", 10.0, 0.1),
            record("ml", 100.0, 0.01),
            record("sl", 20.0, 0.1),
            record("sl", 400.0, 0.01),
        ];
        let svg = render_svg(&recs);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.contains(">teki ml<") && svg.contains(">teki sl<"));
        let strokes: Vec<&str> = PALETTE[..2].to_vec();
        assert!(strokes.iter().all(|c| svg.contains(&format!(r#"stroke="{c}" stroke-width="1.5""#))));
    }

    #[test]
    fn empty_records_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.svg");
        assert!(!emit_plot(&[], &path).unwrap());
        assert!(!path.exists());
        let nan = record("ml", 10.0, f64::NAN);
        assert!(!emit_plot(&[nan], &path).unwrap());
        assert!(emit_plot(&[record("ml", 10.0, 0.5)], &path).unwrap());
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("<svg"));
    }
}
