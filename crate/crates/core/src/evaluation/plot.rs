//! Minimal SVG charts: line panels and box plots.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

pub struct LinePanel<'a> {
    pub title: &'a str,
    pub series: Vec<Series<'a>>,
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn header(out: &mut String, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacked line panels sharing an x axis labelled by `x_labels`.
pub fn line_panels(x_labels: &[String], panels: &[LinePanel<'_>]) -> String {
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut out = String::new();
    header(&mut out, height);
    let n = x_labels.len().max(1);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let x = |i: usize| MARGIN + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };
    for (p, panel) in panels.iter().enumerate() {
        let top = p as f64 * PANEL_HEIGHT + 28.0;
        let bottom = (p + 1) as f64 * PANEL_HEIGHT - 36.0;
        let (lo, hi) = bounds(panel.series.iter().flat_map(|s| s.values.iter()));
        let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
        let _ = writeln!(out, r#"<text x="{MARGIN}" y="{}" font-size="13">{}</text>"#, top - 10.0, escape(panel.title));
        let _ = writeln!(
            out,
            r#"<path d="M{MARGIN} {top} V{bottom} H{}" stroke="black" fill="none"/>"#,
            WIDTH - MARGIN
        );
        for (v, anchor) in [(hi, top), (lo, bottom)] {
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.3e}</text>"#, MARGIN - 4.0, anchor + 4.0);
        }
        let step = (n / 8).max(1);
        for i in (0..x_labels.len()).step_by(step) {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                x(i),
                bottom + 16.0,
                escape(&x_labels[i])
            );
        }
        for (k, s) in panel.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for (i, &v) in s.values.iter().enumerate() {
                if !v.is_finite() {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.1} {:.1} ", if pen_down { "L" } else { "M" }, x(i), y(v));
                pen_down = true;
            }
            let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="1.6" fill="none"/>"#, d.trim_end());
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                WIDTH - MARGIN - 150.0,
                top + 14.0 * (k + 1) as f64,
                escape(s.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Five-number summary: min, lower quartile, median, upper quartile, max.
pub fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + f * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

/// One box per group.
pub fn box_plot(title: &str, groups: &[(String, Vec<f64>)]) -> String {
    let height = PANEL_HEIGHT + 40.0;
    let mut out = String::new();
    header(&mut out, height);
    let top = 40.0;
    let bottom = height - 48.0;
    let (lo, hi) = bounds(groups.iter().flat_map(|g| g.1.iter()));
    let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="22" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN} {top} V{bottom} H{}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN
    );
    for (v, anchor) in [(hi, top), (lo, bottom)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, MARGIN - 4.0, anchor + 4.0);
    }
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    for (k, (label, values)) in groups.iter().enumerate() {
        let cx = MARGIN + slot * (k as f64 + 0.5);
        let half = (slot * 0.3).min(30.0);
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#,
            bottom + 16.0,
            escape(label)
        );
        let Some([min, q1, med, q3, max]) = five_numbers(values) else {
            continue;
        };
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<path d="M{cx:.1} {:.1} V{:.1} M{cx:.1} {:.1} V{:.1}" stroke="{color}"/>"#,
            y(max),
            y(q3),
            y(q1),
            y(min)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" stroke="{color}" fill="none"/>"#,
            cx - half,
            y(q3),
            2.0 * half,
            (y(q1) - y(q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<path d="M{:.1} {:.1} H{:.1}" stroke="{color}" stroke-width="2"/>"#,
            cx - half,
            y(med),
            cx + half
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_small_sets() {
        assert_eq!(five_numbers(&[3.0, 1.0, 2.0]).unwrap(), [1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(five_numbers(&[4.0]).unwrap(), [4.0; 5]);
        assert!(five_numbers(&[f64::NAN]).is_none());
    }

    #[test]
    fn charts_are_well_formed() {
        let labels: Vec<String> = (0..5).map(|i| format!("w{i}")).collect();
        let a = [1.0, 2.0, f64::NAN, 4.0, 5.0];
        let svg = line_panels(
            &labels,
            &[LinePanel {
                title: "a < b",
                series: vec![Series { label: "s", values: &a }],
            }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        let svg = box_plot("t", &[("h1".into(), vec![1.0, 2.0, 3.0])]);
        assert!(svg.contains("<rect x="));
    }
}
