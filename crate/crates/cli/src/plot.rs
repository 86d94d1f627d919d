//! Self-contained SVG charts of the scaling summary.

use std::fmt::Write as _;

use qot_core::experiments::DimSummary;

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    /// Log-scale x over the dimensions, linear y.
    fn px(&self, d: f64) -> f64 {
        let t = if self.x_hi > self.x_lo {
            (d.ln() - self.x_lo.ln()) / (self.x_hi.ln() - self.x_lo.ln())
        } else {
            0.5
        };
        LEFT + t * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        let t = (v - self.y_lo) / (self.y_hi - self.y_lo);
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rounds a span to a 1-2-5 step giving about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-3 * hi.abs().max(1e-3));
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str, y_label: &str, frame: &Frame, dims: &[usize]) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#
    );
    for &d in dims {
        let x = frame.px(d as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#,
            y0 + 5.0,
            y0 + 20.0
        );
    }
    let step = tick_step(frame.y_hi - frame.y_lo);
    let mut v = (frame.y_lo / step).ceil() * step;
    while v <= frame.y_hi {
        let y = frame.py(v);
        let label = if v.abs() < step * 1e-9 { 0.0 } else { v };
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            format_tick(label, step)
        );
        v += step;
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">dimension d</text>
<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

fn frame_for(dims: &[usize], values: impl Iterator<Item = f64>) -> Frame {
    let x_lo = dims.iter().copied().min().unwrap_or(1) as f64;
    let x_hi = dims.iter().copied().max().unwrap_or(1) as f64;
    let (y_lo, y_hi) = y_range(values);
    Frame {
        x_lo,
        x_hi,
        y_lo,
        y_hi,
    }
}

/// Mean fitted exponent with ±1 standard deviation bars and the curve `1/(d+2)`.
pub fn beta_chart(summaries: &[DimSummary]) -> String {
    let dims: Vec<usize> = summaries.iter().map(|s| s.d).collect();
    let reference = |d: f64| 1.0 / (d + 2.0);
    let frame = frame_for(
        &dims,
        summaries
            .iter()
            .flat_map(|s| {
                let (m, sd) = (s.beta_mean.unwrap_or(f64::NAN), s.beta_std.unwrap_or(0.0));
                [m - sd, m + sd, reference(s.d as f64)]
            }),
    );
    let mut out = String::new();
    header(&mut out, "Fitted log-log slope", "beta", &frame, &dims);

    let mut path = String::new();
    let samples = 64;
    for k in 0..=samples {
        let d = if frame.x_hi > frame.x_lo {
            (frame.x_lo.ln() + (frame.x_hi.ln() - frame.x_lo.ln()) * k as f64 / samples as f64).exp()
        } else {
            frame.x_lo
        };
        let _ = write!(
            path,
            "{}{:.2},{:.2} ",
            if k == 0 { "M" } else { "L" },
            frame.px(d),
            frame.py(reference(d))
        );
    }
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#d62728" stroke-dasharray="6 4"/>"##,
        path.trim_end()
    );

    let points: Vec<(f64, f64, f64)> = summaries
        .iter()
        .filter_map(|s| Some((s.d as f64, s.beta_mean?, s.beta_std.unwrap_or(0.0))))
        .collect();
    let line: Vec<String> = points
        .iter()
        .map(|&(d, m, _)| format!("{:.2},{:.2}", frame.px(d), frame.py(m)))
        .collect();
    if line.len() > 1 {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4"/>"##,
            line.join(" ")
        );
    }
    for &(d, m, sd) in &points {
        let x = frame.px(d);
        let (lo, hi) = (frame.py(m - sd), frame.py(m + sd));
        let _ = writeln!(
            out,
            r##"<path d="M{x:.2},{lo:.2} V{hi:.2} M{:.2},{lo:.2} H{:.2} M{:.2},{hi:.2} H{:.2}" stroke="#1f77b4"/><circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="#1f77b4"/>"##,
            x - 4.0,
            x + 4.0,
            x - 4.0,
            x + 4.0,
            frame.py(m)
        );
    }
    legend(
        &mut out,
        &[("#1f77b4", "mean beta ± 1 std", false), ("#d62728", "1/(d+2)", true)],
    );
    out.push_str("</svg>\n");
    out
}

/// `RelErr(d) = (d+2)·mean β − 1`.
pub fn relerr_chart(summaries: &[DimSummary]) -> String {
    let dims: Vec<usize> = summaries.iter().map(|s| s.d).collect();
    let points: Vec<(f64, f64)> = summaries
        .iter()
        .filter_map(|s| Some((s.d as f64, s.rel_err?)))
        .collect();
    let frame = frame_for(&dims, points.iter().map(|p| p.1).chain([0.0]));
    let mut out = String::new();
    header(&mut out, "Relative error", "(d+2) beta - 1", &frame, &dims);
    let zero = frame.py(0.0);
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT:.1}" y1="{zero:.2}" x2="{:.1}" y2="{zero:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        WIDTH - RIGHT
    );
    let line: Vec<String> = points
        .iter()
        .map(|&(d, v)| format!("{:.2},{:.2}", frame.px(d), frame.py(v)))
        .collect();
    if line.len() > 1 {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#2ca02c"/>"##,
            line.join(" ")
        );
    }
    for &(d, v) in &points {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#2ca02c"/>"##,
            frame.px(d),
            frame.py(v)
        );
    }
    legend(&mut out, &[("#2ca02c", "RelErr(d)", false)]);
    out.push_str("</svg>\n");
    out
}

fn legend(out: &mut String, entries: &[(&str, &str, bool)]) {
    for (k, (color, label, dashed)) in entries.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT - 170.0;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(label)
        );
    }
}
