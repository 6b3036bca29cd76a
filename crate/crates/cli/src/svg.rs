//! Minimal SVG 1.1 bar chart of baseline/fast wall-time ratios.

use std::fmt::Write;

/// One bar: a label under the axis and its height.
pub struct Bar {
    pub label: String,
    pub value: f64,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders bars left to right with a dashed reference line at 1.
pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let finite_max = bars.iter().map(|b| b.value).filter(|v| v.is_finite()).fold(1.0_f64, f64::max);
    let top = finite_max * 1.1;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y_of = |v: f64| HEIGHT - MARGIN - plot_h * (v / top);
    let slot = plot_w / bars.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#, HEIGHT - MARGIN);
    let one = y_of(1.0);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{one:.2}" x2="{}" y2="{one:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        WIDTH - MARGIN
    );

    for (i, bar) in bars.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let w = slot * 0.7;
        let v = if bar.value.is_finite() { bar.value.max(0.0) } else { 0.0 };
        let y = y_of(v);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="steelblue"><title>{}: {:.3}</title></rect>"#,
            HEIGHT - MARGIN - y,
            escape(&bar.label),
            bar.value
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{:.2}</text>"#,
            x + w / 2.0,
            y - 4.0,
            bar.value
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            x + w / 2.0,
            HEIGHT - MARGIN + 16.0,
            escape(&bar.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
