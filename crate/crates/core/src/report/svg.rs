use std::fmt::Write;

use super::format_number;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 45.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Linear map from a data range onto a pixel range.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
    pub px_lo: f64,
    pub px_hi: f64,
}

impl Scale {
    pub fn map(&self, v: f64) -> f64 {
        if self.hi == self.lo {
            return (self.px_lo + self.px_hi) / 2.0;
        }
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

/// Chart canvas with a plot area, axes and a legend column on the right.
pub struct Canvas {
    buf: String,
    legend: Vec<(String, &'static str)>,
}

impl Canvas {
    pub fn new(title: &str) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(buf, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
        let _ = writeln!(
            buf,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(title)
        );
        Canvas {
            buf,
            legend: Vec::new(),
        }
    }

    pub fn x_px() -> (f64, f64) {
        (LEFT, WIDTH - RIGHT)
    }

    pub fn y_px() -> (f64, f64) {
        (HEIGHT - BOTTOM, TOP)
    }

    pub fn raw(&mut self, s: &str) {
        self.buf.push_str(s);
        self.buf.push('\n');
    }

    /// Axes with tick labels. `x_ticks` are (value, label) pairs.
    pub fn axes(&mut self, x: Scale, y: Scale, x_ticks: &[(f64, String)], y_ticks: &[f64], x_label: &str, y_label: &str) {
        let (x0, x1) = Self::x_px();
        let (y0, y1) = Self::y_px();
        for &t in y_ticks {
            let py = y.map(t);
            let _ = writeln!(
                self.buf,
                r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#e0e0e0"/>"##
            );
            let _ = writeln!(
                self.buf,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                py + 4.0,
                format_number(t)
            );
        }
        for (v, label) in x_ticks {
            let px = x.map(*v);
            let _ = writeln!(
                self.buf,
                r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="#000000"/>"##,
                y0 + 5.0
            );
            let _ = writeln!(
                self.buf,
                r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 + 18.0,
                escape(label)
            );
        }
        let _ = writeln!(self.buf, r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#000000"/>"##);
        let _ = writeln!(self.buf, r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#000000"/>"##);
        let _ = writeln!(
            self.buf,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 18.0,
            escape(x_label)
        );
        let _ = writeln!(
            self.buf,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }

    pub fn legend_entry(&mut self, label: impl Into<String>, color: &'static str) {
        self.legend.push((label.into(), color));
    }

    pub fn finish(mut self) -> String {
        let lx = WIDTH - RIGHT + 20.0;
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let ly = TOP + 10.0 + i as f64 * 20.0;
            let _ = writeln!(
                self.buf,
                r#"<rect x="{lx}" y="{:.2}" width="12" height="12" fill="{color}"/>"#,
                ly - 10.0
            );
            let _ = writeln!(self.buf, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 18.0, escape(label));
        }
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

/// Ticks 0, step, 2*step, ... up to `max`.
pub fn ticks(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| (i as f64 * step * 1e9).round() / 1e9).collect()
}

/// Smallest multiple of 0.1 at or above `v` (at least 0.1).
pub fn nice_max(v: f64) -> f64 {
    ((v * 10.0 - 1e-9).ceil() / 10.0).max(0.1)
}
