//! Hand-written SVG scatter plots. Output is plain text with fixed number
//! formatting, so identical inputs give identical files.

use std::fmt::Write;

use choroid_core::stats::{BlandAltman, LinearFit};

const W: f64 = 520.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Clone, Copy, Debug)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.05 };
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
    }
}

struct Frame {
    x: Range,
    y: Range,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (H - TOP - BOTTOM)
    }

    /// Line `y = a x + b` clipped to the horizontal extent.
    fn line(&self, out: &mut String, a: f64, b: f64, style: &str) {
        let (x0, x1) = (self.x.lo, self.x.hi);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            self.px(x0),
            self.py(a * x0 + b),
            self.px(x1),
            self.py(a * x1 + b)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64, span: f64) -> String {
    let decimals = if span >= 100.0 { 0 } else if span >= 1.0 { 2 } else { 4 };
    format!("{v:.decimals$}")
}

fn open(frame: &Frame, title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for t in frame.x.ticks() {
        let px = frame.px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 18.0,
            tick_label(t, frame.x.hi - frame.x.lo)
        );
    }
    for t in frame.y.ticks() {
        let py = frame.py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick_label(t, frame.y.hi - frame.y.lo)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    s
}

fn points(s: &mut String, frame: &Frame, xs: &[f64], ys: &[f64]) {
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4" fill-opacity="0.7"/>"##,
            frame.px(x),
            frame.py(y)
        );
    }
}

/// Method (`ys`) against reference (`xs`) with the identity line and the
/// least-squares fit.
pub fn correlation_plot(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], fit: &LinearFit) -> String {
    let r = Range::of(xs.iter().chain(ys).copied());
    let frame = Frame { x: r, y: r };
    let mut s = open(&frame, title, x_label, y_label);
    frame.line(&mut s, 1.0, 0.0, r#"stroke="gray" stroke-dasharray="6 4""#);
    points(&mut s, &frame, xs, ys);
    frame.line(&mut s, fit.slope, fit.intercept, r##"stroke="#d62728" stroke-width="1.5""##);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">y = {:.4} x + {:.4}</text>"#,
        LEFT + 8.0,
        TOP + 16.0,
        fit.slope,
        fit.intercept
    );
    s.push_str("</svg>\n");
    s
}

/// Differences `a - b` against pair means with mean-difference and
/// limits-of-agreement lines.
pub fn bland_altman_plot(title: &str, units: &str, a: &[f64], b: &[f64], ba: &BlandAltman) -> String {
    let means: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let frame = Frame {
        x: Range::of(means.iter().copied()),
        y: Range::of(diffs.iter().copied().chain([ba.loa_low, ba.loa_high, ba.mean_diff])),
    };
    let mut s = open(
        &frame,
        title,
        &format!("mean of methods ({units})"),
        &format!("difference ({units})"),
    );
    points(&mut s, &frame, &means, &diffs);
    frame.line(&mut s, 0.0, ba.mean_diff, r#"stroke="black" stroke-width="1.5""#);
    for loa in [ba.loa_low, ba.loa_high] {
        frame.line(&mut s, 0.0, loa, r##"stroke="#d62728" stroke-dasharray="6 4""##);
    }
    for (label, v) in [("mean", ba.mean_diff), ("-1.96 SD", ba.loa_low), ("+1.96 SD", ba.loa_high)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{label} {v:.4}</text>"#,
            W - RIGHT - 4.0,
            frame.py(v) - 3.0
        );
    }
    s.push_str("</svg>\n");
    s
}
