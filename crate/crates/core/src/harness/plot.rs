//! Static SVG plots of a metrics stream.

use std::fmt::Write as _;

use super::metrics::{Record, WindowRecord};

const W: f64 = 640.0;
const H: f64 = 240.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

/// Data range for an axis, widened when degenerate.
pub fn axis_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn panel(svg: &mut String, y0: f64, title: &str, series: &[Series<'_>]) {
    let xr = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
    let sy = |y: f64| y0 + TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph;
    let _ = writeln!(svg, r#"<g class="panel"><text x="{LEFT}" y="{:.1}" font-size="14">{title}</text>"#, y0 + 18.0);
    let _ = writeln!(
        svg,
        r##"<line class="x-axis" x1="{LEFT}" y1="{b:.1}" x2="{:.1}" y2="{b:.1}" stroke="#000"/><line class="y-axis" x1="{LEFT}" y1="{:.1}" x2="{LEFT}" y2="{b:.1}" stroke="#000"/>"##,
        LEFT + pw,
        y0 + TOP,
        b = y0 + TOP + ph,
    );
    let _ = writeln!(
        svg,
        r#"<text class="x-min" x="{LEFT}" y="{:.1}" font-size="10">{}</text><text class="x-max" x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
        y0 + TOP + ph + 14.0,
        xr.0,
        LEFT + pw,
        y0 + TOP + ph + 14.0,
        xr.1
    );
    let _ = writeln!(
        svg,
        r#"<text class="y-min" x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.4}</text><text class="y-max" x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.4}</text>"#,
        LEFT - 4.0,
        y0 + TOP + ph,
        yr.0,
        LEFT - 4.0,
        y0 + TOP + 10.0,
        yr.1
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.label,
            s.color,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{}">{}</text>"#,
            LEFT + pw - 120.0,
            y0 + TOP + 12.0 * (i as f64 + 1.0),
            s.color,
            s.label
        );
    }
    svg.push_str("</g>\n");
}

/// Reward against iteration, plus sequence length when the stream has it.
pub fn render_svg(records: &[Record]) -> String {
    let windows: Vec<&WindowRecord> = records
        .iter()
        .filter_map(|r| match r {
            Record::Window(w) => Some(w),
            _ => None,
        })
        .collect();
    let has_len = windows.iter().any(|w| w.required_len.is_some());
    let height = if has_len { 2.0 * H } else { H };
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}">"#);
    svg.push('\n');
    let reward = Series {
        label: "windowed reward",
        color: "#1f77b4",
        points: windows.iter().map(|w| (w.iteration as f64, w.mean_reward)).collect(),
    };
    panel(&mut svg, 0.0, "reward", &[reward]);
    if has_len {
        let len = |f: fn(&WindowRecord) -> Option<usize>| windows.iter().filter_map(|w| f(w).map(|v| (w.iteration as f64, v as f64))).collect();
        let series = [
            Series { label: "required length", color: "#ff7f0e", points: len(|w| w.required_len) },
            Series { label: "max solved length", color: "#2ca02c", points: len(|w| w.max_solved) },
        ];
        panel(&mut svg, H, "sequence length", &series);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(axis_range([1.0, 3.0, 2.0]), (1.0, 3.0));
        assert_eq!(axis_range(std::iter::empty()), (0.0, 1.0));
        let (lo, hi) = axis_range([0.5, 0.5]);
        assert!(lo < 0.5 && hi > 0.5);
    }

    #[test]
    fn empty_stream_has_axes() {
        let svg = render_svg(&[]);
        assert!(svg.contains("x-axis") && svg.contains("y-axis"));
        assert!(svg.starts_with("<svg"));
    }
}
