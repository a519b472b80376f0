//! Line charts for `timeseries.csv`, written as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write;

use moralframe::analytics::CsvPoint;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Groups series by the part of their name before the first `/`.
pub fn group_series(points: &[CsvPoint]) -> BTreeMap<String, BTreeMap<String, Vec<&CsvPoint>>> {
    let mut out: BTreeMap<String, BTreeMap<String, Vec<&CsvPoint>>> = BTreeMap::new();
    for p in points {
        let group = p.series.split('/').next().unwrap_or(&p.series).to_string();
        out.entry(group).or_default().entry(p.series.clone()).or_default().push(p);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// One chart with a line per series; `raw` selects the unsmoothed values.
pub fn render(title: &str, series: &BTreeMap<String, Vec<&CsvPoint>>, raw: bool) -> String {
    let value = |p: &CsvPoint| if raw { p.raw } else { p.smoothed };
    let all: Vec<&CsvPoint> = series.values().flatten().copied().collect();
    let months: Vec<i64> = all.iter().map(|p| p.month.ordinal()).collect();
    let (x0, x1) = (*months.iter().min().unwrap_or(&0), *months.iter().max().unwrap_or(&1));
    let x1 = if x1 == x0 { x0 + 1 } else { x1 };
    let mut y0 = all.iter().map(|p| value(p)).fold(f64::INFINITY, f64::min).min(0.0);
    let mut y1 = all.iter().map(|p| value(p)).fold(f64::NEG_INFINITY, f64::max);
    if !y1.is_finite() || y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let step = nice_step(y1 - y0);
    y0 = (y0 / step).floor() * step;
    y1 = (y1 / step).ceil() * step;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |m: i64| LEFT + (m - x0) as f64 / (x1 - x0) as f64 * plot_w;
    let sy = |v: f64| TOP + (1.0 - (v - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, LEFT + plot_w / 2.0, escape(title));

    let mut v = y0;
    while v <= y1 + step / 2.0 {
        let y = sy(v);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + plot_w);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, format_tick(v, step));
        v += step;
    }
    let year_of = |m: i64| m.div_euclid(12);
    for year in year_of(x0)..=year_of(x1) {
        let m = year * 12;
        if m < x0 {
            continue;
        }
        let x = sx(m);
        let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#eee"/>"##, TOP + plot_h);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{year}</text>"#, TOP + plot_h + 18.0);
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.month.ordinal()), sy(value(p))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            path.join(" "),
            escape(name)
        );
        let ly = TOP + 10.0 + i as f64 * 18.0;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64, step: f64) -> String {
    if step >= 1.0 {
        format!("{v:.0}")
    } else {
        let digits = (-step.log10().floor()) as usize;
        format!("{v:.digits$}")
    }
}

/// File name for a group: alphanumerics kept, everything else replaced.
pub fn file_stem(group: &str) -> String {
    group
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}
