//! Small hand-written SVG charts: dataset statistics panels and per-question
//! grounding timelines. Output is plain text with fixed number formatting, so
//! identical inputs give identical bytes.

use std::fmt::Write as _;

use crate::annotations::DatasetStats;
use crate::gaussian::GaussianMask;
use crate::temporal::TemporalSegment;

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

/// Vertical bars with the value printed above each one, drawn inside the box
/// at `(x, y)` of size `w x h`.
fn bars_into(out: &mut String, title: &str, bars: &[(String, f64)], x: f64, y: f64, w: f64, h: f64) {
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#, x + w / 2.0, y + 14.0, escape(title));
    let top = y + 30.0;
    let base = y + h - 20.0;
    let _ = writeln!(out, r#"<line x1="{x:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#, x + w);
    if bars.is_empty() {
        return;
    }
    let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12);
    let slot = w / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let bh = (base - top - 14.0) * v / max;
        let bx = x + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let _ = writeln!(out, r#"<rect x="{bx:.1}" y="{:.1}" width="{bw:.1}" height="{bh:.1}" fill="{}"/>"#, base - bh, PALETTE[0]);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}%</text>"#, bx + bw / 2.0, base - bh - 3.0, 100.0 * v);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, bx + bw / 2.0, base + 14.0, escape(label));
    }
}

fn pie_into(out: &mut String, title: &str, slices: &[(String, f64)], cx: f64, cy: f64, r: f64) {
    let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#, cy - r - 12.0, escape(title));
    let total: f64 = slices.iter().map(|s| s.1).sum();
    if total <= 0.0 {
        return;
    }
    let mut angle = -std::f64::consts::FRAC_PI_2;
    for (i, (label, v)) in slices.iter().enumerate() {
        let frac = v / total;
        let color = PALETTE[i % PALETTE.len()];
        let sweep = frac * std::f64::consts::TAU;
        if frac >= 1.0 - 1e-12 {
            let _ = writeln!(out, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="{r:.1}" fill="{color}"/>"#);
        } else if frac > 0.0 {
            let (x0, y0) = (cx + r * angle.cos(), cy + r * angle.sin());
            let (x1, y1) = (cx + r * (angle + sweep).cos(), cy + r * (angle + sweep).sin());
            let large = if sweep > std::f64::consts::PI { 1 } else { 0 };
            let _ = writeln!(out, r#"<path d="M{cx:.1},{cy:.1} L{x0:.2},{y0:.2} A{r:.1},{r:.1} 0 {large} 1 {x1:.2},{y1:.2} Z" fill="{color}"/>"#);
        }
        let mid = angle + sweep / 2.0;
        let (lx, ly) = (cx + 0.65 * r * mid.cos(), cy + 0.65 * r * mid.sin());
        if frac > 0.0 {
            let _ = writeln!(out, r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" fill="white">{} {:.1}%</text>"#, escape(label), 100.0 * frac);
        }
        angle += sweep;
    }
}

/// Standalone bar chart.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let mut out = String::new();
    let w = (60.0 * bars.len() as f64).max(240.0);
    open(&mut out, w + 20.0, 240.0);
    bars_into(&mut out, title, bars, 10.0, 0.0, w, 240.0);
    out.push_str("</svg>\n");
    out
}

/// Standalone pie chart.
pub fn pie_chart(title: &str, slices: &[(String, f64)]) -> String {
    let mut out = String::new();
    open(&mut out, 260.0, 260.0);
    pie_into(&mut out, title, slices, 130.0, 140.0, 100.0);
    out.push_str("</svg>\n");
    out
}

/// Numeric order for bin keys such as `"5"`, `"25+"` or `"0.3"`.
fn sorted_bins(m: &std::collections::BTreeMap<String, f64>) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = m.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let key = |s: &str| s.trim_end_matches('+').parse::<f64>().unwrap_or(f64::INFINITY);
    v.sort_by(|a, b| key(&a.0).total_cmp(&key(&b.0)));
    v
}

/// Five-panel summary of the annotation statistics.
pub fn stats_figure(stats: &DatasetStats) -> String {
    let mut out = String::new();
    open(&mut out, 1300.0, 300.0);
    let p = &stats.position_hist;
    let pos = vec![("left".to_string(), p.left), ("middle".to_string(), p.middle), ("right".to_string(), p.right)];
    pie_into(&mut out, "segment position", &pos, 130.0, 160.0, 100.0);
    let count_bars = |m: &std::collections::BTreeMap<usize, f64>| m.iter().map(|(k, v)| (k.to_string(), *v)).collect::<Vec<_>>();
    bars_into(&mut out, "segments per question", &count_bars(&stats.segs_per_qa_hist), 270.0, 20.0, 230.0, 270.0);
    bars_into(&mut out, "questions per moment", &count_bars(&stats.qas_per_seg_hist), 520.0, 20.0, 230.0, 270.0);
    bars_into(&mut out, "segment duration (s)", &sorted_bins(&stats.seg_dur_hist), 770.0, 20.0, 250.0, 270.0);
    bars_into(&mut out, "segment / video ratio", &sorted_bins(&stats.ratio_hist), 1040.0, 20.0, 250.0, 270.0);
    out.push_str("</svg>\n");
    out
}

/// What a timeline shows for one question.
pub struct TimelineInput<'a> {
    pub question_id: &'a str,
    pub duration: f64,
    pub mask: Option<&'a GaussianMask<f64>>,
    /// Per-frame attention trace (sums to 1).
    pub trace: &'a [f64],
    pub ground_truth: &'a [TemporalSegment<f64>],
    pub prediction: Option<TemporalSegment<f64>>,
}

/// Mask curve, attention trace and ground-truth moment on a shared time axis.
pub fn timeline(input: &TimelineInput<'_>) -> String {
    let (w, h) = (640.0, 220.0);
    let (x0, x1, top, base) = (40.0, w - 20.0, 30.0, h - 40.0);
    let d = input.duration;
    let sx = |t: f64| x0 + (x1 - x0) * (t / d);
    let sy = |v: f64| base - (base - top) * v;
    let mut out = String::new();
    open(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="{:.1}" y="16" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(input.question_id));
    for gt in input.ground_truth {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{top:.1}" width="{:.2}" height="{:.1}" fill="#59a14f" fill-opacity="0.25"/>"##,
            sx(gt.start()),
            sx(gt.end()) - sx(gt.start()),
            base - top
        );
    }
    if let Some(p) = input.prediction {
        let _ = writeln!(out, r##"<rect x="{:.2}" y="{:.1}" width="{:.2}" height="6" fill="#e15759"/>"##, sx(p.start()), base + 4.0, sx(p.end()) - sx(p.start()));
    }
    let n = input.trace.len();
    if n > 0 {
        let peak = input.trace.iter().copied().fold(0.0f64, f64::max).max(1e-12);
        let bw = (x1 - x0) / n as f64;
        for (i, &v) in input.trace.iter().enumerate() {
            let bh = (base - top) * v / peak;
            let _ = writeln!(out, r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#f28e2b" fill-opacity="0.6"/>"##, x0 + bw * i as f64, base - bh, bw * 0.9);
        }
    }
    if let Some(m) = input.mask {
        let mut path = String::new();
        for k in 0..=200 {
            let x = k as f64 / 200.0;
            let _ = write!(path, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, sx(x * d), sy(m.weight_at(x)));
        }
        let _ = writeln!(out, r##"<path d="{path}" fill="none" stroke="#4e79a7" stroke-width="2"/>"##);
    }
    let _ = writeln!(out, r#"<line x1="{x0:.1}" y1="{base:.1}" x2="{x1:.1}" y2="{base:.1}" stroke="black"/>"#);
    for k in 0..=4 {
        let t = d * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.1}s</text>"#, sx(t), base + 24.0);
    }
    let legend = [("#4e79a7", "gaussian mask"), ("#f28e2b", "attention"), ("#59a14f", "ground truth"), ("#e15759", "prediction")];
    for (i, (c, label)) in legend.iter().enumerate() {
        let lx = x0 + 130.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{c}"/><text x="{:.1}" y="{:.1}">{label}</text>"#, h - 12.0, lx + 14.0, h - 3.0);
    }
    out.push_str("</svg>\n");
    out
}
