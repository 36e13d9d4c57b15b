//! Static SVG figure: one panel per control channel with `uA`, `uB` and `v`
//! overlaid against time.

use std::fmt::Write;

use gapctl_core::ControlTrajectory;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const GAP: f64 = 30.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    dash: Option<&'a str>,
    data: &'a ControlTrajectory,
}

/// "Nice" tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.abs() >= 1e4 || x.abs() < 1e-3 {
        format!("{x:.1e}")
    } else {
        let s = format!("{x:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Points in pixel space reduced to first/min/max/last per pixel column.
fn decimate(points: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut bucket: Vec<(f64, f64)> = Vec::new();
    let mut column = i64::MIN;
    let flush = |bucket: &mut Vec<(f64, f64)>, out: &mut Vec<(f64, f64)>| {
        if bucket.is_empty() {
            return;
        }
        let first = bucket[0];
        let last = bucket[bucket.len() - 1];
        let lo = bucket
            .iter()
            .copied()
            .fold(first, |a, b| if b.1 < a.1 { b } else { a });
        let hi = bucket
            .iter()
            .copied()
            .fold(first, |a, b| if b.1 > a.1 { b } else { a });
        let mut keep = vec![first, lo, hi, last];
        keep.sort_by(|a, b| a.0.total_cmp(&b.0));
        for p in keep {
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        bucket.clear();
    };
    for p in points {
        let c = p.0.floor() as i64;
        if c != column {
            flush(&mut bucket, &mut out);
            column = c;
        }
        bucket.push(p);
    }
    flush(&mut bucket, &mut out);
    out
}

/// Renders the figure for trajectories on a common grid.
pub fn render(
    title: &str,
    ua: &ControlTrajectory,
    ub: &ControlTrajectory,
    v: &ControlTrajectory,
) -> String {
    let series = [
        Series {
            label: "uA",
            color: "#1f77b4",
            dash: None,
            data: ua,
        },
        Series {
            label: "uB",
            color: "#d62728",
            dash: None,
            data: ub,
        },
        Series {
            label: "v",
            color: "#2ca02c",
            dash: Some("6,4"),
            data: v,
        },
    ];
    let grid = ua.grid();
    let m = ua.channels();
    let (t0, tf) = (grid.t0(), grid.tf());
    let panel_h = (HEIGHT - TOP - BOTTOM - GAP * (m as f64 - 1.0)) / m as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for i in 0..m {
        let top = TOP + i as f64 * (panel_h + GAP);
        let (mut lo, mut hi) = series
            .iter()
            .flat_map(|sr| sr.data.channel(i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| {
                (l.min(x), h.max(x))
            });
        if !(lo.is_finite() && hi.is_finite()) {
            (lo, hi) = (-1.0, 1.0);
        }
        let pad = 0.05 * (hi - lo).max(1e-12 * (1.0 + hi.abs()));
        let (lo, hi) = (lo - pad, hi + pad);
        let px = |t: f64| LEFT + (t - t0) / (tf - t0) * plot_w;
        let py = |y: f64| top + panel_h - (y - lo) / (hi - lo) * panel_h;

        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{top:.2}" width="{plot_w}" height="{panel_h:.2}" fill="none" stroke="black"/>"#
        );
        for ty in ticks(lo, hi, 5) {
            let y = py(ty);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 5.0,
                y + 4.0,
                label(ty)
            );
        }
        for tx in ticks(t0, tf, 10) {
            let x = px(tx);
            let y0 = top + panel_h;
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                y0 + 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 + 15.0,
                label(tx)
            );
        }
        if lo < 0.0 && hi > 0.0 {
            let y = py(0.0);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#888"/>"##,
                LEFT + plot_w
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">channel {}</text>"#,
            top + panel_h / 2.0,
            top + panel_h / 2.0,
            i + 1
        );
        for sr in &series {
            let pts = decimate(
                sr.data
                    .channel(i)
                    .enumerate()
                    .map(|(k, y)| (px(grid.node(k)), py(y))),
            );
            let mut d = String::new();
            for (x, y) in pts {
                let _ = write!(d, "{x:.2},{y:.2} ");
            }
            let dash = sr
                .dash
                .map(|d| format!(r#" stroke-dasharray="{d}""#))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                sr.color,
                d.trim_end()
            );
        }
    }
    for (j, sr) in series.iter().enumerate() {
        let x = LEFT + 10.0 + j as f64 * 70.0;
        let y = HEIGHT - 8.0;
        let dash = sr
            .dash
            .map(|d| format!(r#" stroke-dasharray="{d}""#))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{y}">{}</text>"#,
            y - 4.0,
            x + 25.0,
            y - 4.0,
            sr.color,
            x + 30.0,
            sr.label
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">t</text>"#,
        WIDTH - RIGHT,
        HEIGHT - 8.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
