//! Minimal standalone SVG: log-log line plots and percentile-colored
//! scatter plots.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 56.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    if lo == hi {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64), log: bool) {
    let (x0, x1, y0, y1) = (MARGIN, W - 16.0, H - MARGIN, 32.0);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    let fmt = |v: f64| if log { format!("{:.3e}", 10f64.powf(v)) } else { format!("{v:.3}") };
    let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, y0 + 14.0, fmt(x.0));
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" font-size="10" text-anchor="end">{}</text>"#, y0 + 14.0, fmt(x.1));
    let _ = writeln!(s, r#"<text x="{}" y="{y0}" font-size="10" text-anchor="end">{}</text>"#, x0 - 4.0, fmt(y.0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, x0 - 4.0, y1 + 8.0, fmt(y.1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn project(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot with markers on log10 axes; non-positive points are dropped.
pub fn loglog(title: &str, xlabel: &str, ylabel: &str, series: &[Series<'_>]) -> String {
    let logs: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.x.iter().zip(s.y).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.log10(), y.log10())).collect())
        .collect();
    let mut s = header(title);
    let xr = range(logs.iter().flatten().map(|p| p.0));
    let yr = range(logs.iter().flatten().map(|p| p.1));
    if let (Some(xr), Some(yr)) = (xr, yr) {
        axes(&mut s, xlabel, ylabel, xr, yr, true);
        for (k, (pts, ser)) in logs.iter().zip(series).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", project(x, xr, MARGIN, W - 16.0), project(y, yr, H - MARGIN, 32.0)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, coords.join(" "));
            for c in &coords {
                let (cx, cy) = c.split_once(',').unwrap();
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
                W - 140.0,
                40.0 + 14.0 * k as f64,
                escape(ser.label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Points colored by the percentile rank of `values` (blue low, red high);
/// points not in `kept` are drawn hollow.
pub fn score_scatter(title: &str, x: &[f64], y: &[f64], values: &[f64], kept: Option<&[bool]>) -> String {
    let mut s = header(title);
    let n = x.len().min(y.len()).min(values.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut rank = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = if n > 1 { r as f64 / (n - 1) as f64 } else { 0.0 };
    }
    if let (Some(xr), Some(yr)) = (range(x[..n].iter().copied()), range(y[..n].iter().copied())) {
        axes(&mut s, "x0", "x1", xr, yr, false);
        for i in 0..n {
            let (cx, cy) = (project(x[i], xr, MARGIN, W - 16.0), project(y[i], yr, H - MARGIN, 32.0));
            let color = format!("rgb({},{},{})", (255.0 * rank[i]) as u8, 60, (255.0 * (1.0 - rank[i])) as u8);
            let filled = kept.is_none_or(|k| k[i]);
            if filled {
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{color}"/>"#);
            } else {
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="none" stroke="{color}"/>"#);
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
