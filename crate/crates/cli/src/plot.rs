//! Bar chart of a sweep as a standalone SVG.

use std::fmt::Write;

use rum_core::experiment::SweepRow;

const W: f64 = 720.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const BOTTOM: f64 = 80.0;
const TOP: f64 = 30.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One bar per row showing `rate ± se`; `first_try` picks which rate.
pub fn sweep_svg(title: &str, rows: &[SweepRow], first_try: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let plot_h = H - BOTTOM - TOP;
    let y = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"##,
            W - 10.0,
            LEFT - 6.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    let n = rows.len().max(1) as f64;
    let slot = (W - LEFT - 10.0) / n;
    for (i, r) in rows.iter().enumerate() {
        let (rate, se) = if first_try { (r.first_try_rate, r.first_try_se) } else { (r.success_rate, r.success_se) };
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="#4a78b5"/>"##,
            y(rate),
            y(0.0) - y(rate)
        );
        let cx = x + bw / 2.0;
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"##,
            y(rate - se),
            y(rate + se)
        );
        let label = format!("{} {}", r.task, r.condition);
        let _ = writeln!(
            s,
            r#"<text transform="translate({cx:.1},{:.1}) rotate(30)" font-family="sans-serif" font-size="11">{}</text>"#,
            y(0.0) + 14.0,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    s
}
