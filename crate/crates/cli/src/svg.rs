//! Minimal SVG plots: curve traces in the disk and x/y charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn head(w: f64, h: f64) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Curves in the unit disk, one color per curve.
pub fn disk(curves: &[Vec<(f64, f64)>], title: &str) -> String {
    let s = 480.0;
    let c = s / 2.0;
    let r = s / 2.0 - 20.0;
    let mut out = head(s, s);
    let _ = writeln!(out, "<circle cx=\"{c}\" cy=\"{c}\" r=\"{r}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>");
    let _ = writeln!(out, "<circle cx=\"{c}\" cy=\"{c}\" r=\"2\" fill=\"black\"/>");
    for (j, pts) in curves.iter().enumerate() {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, c + r * x, c - r * y);
        }
        let _ = writeln!(out, "<path d=\"{d}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>", COLORS[j % COLORS.len()]);
    }
    let _ = writeln!(out, "<text x=\"10\" y=\"16\" font-size=\"13\" font-family=\"sans-serif\">{}</text>", esc(title));
    out.push_str("</svg>\n");
    out
}

pub enum Style {
    Points,
    Line,
    Dashed,
}

pub struct Series {
    pub label: String,
    pub pts: Vec<(f64, f64)>,
    /// Symmetric error bars, one per point.
    pub err: Option<Vec<f64>>,
    pub style: Style,
}

impl Series {
    pub fn points(label: &str, pts: Vec<(f64, f64)>, err: Option<Vec<f64>>) -> Self {
        Self { label: label.into(), pts, err, style: Style::Points }
    }

    pub fn line(label: &str, pts: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), pts, err: None, style: Style::Line }
    }

    pub fn dashed(label: &str, pts: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), pts, err: None, style: Style::Dashed }
    }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Chart of several series on shared linear axes.
pub fn chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (i, (x, y)) in s.pts.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            xs.push(*x);
            let e = s.err.as_ref().map_or(0.0, |e| e[i]);
            ys.push(y - e);
            ys.push(y + e);
        }
    }
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, x| (a.0.min(*x), a.1.max(*x)));
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, y| (a.0.min(*y), a.1.max(*y)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let m = 0.05 * (y1 - y0);
    y0 -= m;
    y1 += m;
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut out = head(W, H);
    let _ = writeln!(out, "<g font-family=\"sans-serif\" font-size=\"11\">");
    let _ = writeln!(out, "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", W - 2.0 * PAD, H - 2.0 * PAD);
    for t in nice_ticks(x0, x1) {
        let _ = writeln!(out, "<line x1=\"{0:.2}\" y1=\"{1}\" x2=\"{0:.2}\" y2=\"{2}\" stroke=\"black\"/><text x=\"{0:.2}\" y=\"{3}\" text-anchor=\"middle\">{4}</text>", px(t), H - PAD, H - PAD + 5.0, H - PAD + 18.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let _ = writeln!(out, "<line x1=\"{0}\" y1=\"{1:.2}\" x2=\"{2}\" y2=\"{1:.2}\" stroke=\"black\"/><text x=\"{3}\" y=\"{4:.2}\" text-anchor=\"end\">{5}</text>", PAD - 5.0, py(t), PAD, PAD - 8.0, py(t) + 4.0, fmt_tick(t));
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 15.0, esc(xlabel));
    let _ = writeln!(out, "<text x=\"15\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {0})\">{1}</text>", H / 2.0, esc(ylabel));
    let _ = writeln!(out, "<text x=\"{PAD}\" y=\"30\" font-size=\"14\">{}</text>", esc(title));
    for (k, s) in series.iter().enumerate() {
        let col = COLORS[k % COLORS.len()];
        match s.style {
            Style::Points => {
                for (i, (x, y)) in s.pts.iter().enumerate() {
                    if !(x.is_finite() && y.is_finite()) {
                        continue;
                    }
                    if let Some(e) = &s.err {
                        let _ = writeln!(out, "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"{col}\"/>", px(*x), py(y - e[i]), py(y + e[i]));
                    }
                    let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{col}\"/>", px(*x), py(*y));
                }
            }
            Style::Line | Style::Dashed => {
                let d: Vec<String> = s.pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
                let dash = if matches!(s.style, Style::Dashed) { " stroke-dasharray=\"6 4\"" } else { "" };
                let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{col}\" stroke-width=\"1.5\"{dash}/>", d.join(" "));
            }
        }
        let ly = PAD + 16.0 + 16.0 * k as f64;
        let _ = writeln!(out, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{col}\"/><text x=\"{}\" y=\"{}\">{}</text>", W - PAD - 150.0, ly - 9.0, W - PAD - 135.0, ly, esc(&s.label));
    }
    out.push_str("</g>\n</svg>\n");
    out
}

fn fmt_tick(t: f64) -> String {
    if t != 0.0 && (t.abs() < 1e-3 || t.abs() >= 1e4) {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Line `a + b x` sampled at the ends of `xs`.
pub fn fit_line(xs: &[f64], a: f64, b: f64) -> Vec<(f64, f64)> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    vec![(lo, a + b * lo), (hi, a + b * hi)]
}
