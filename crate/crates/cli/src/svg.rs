//! Minimal SVG line plots of ensemble std curves. Cosmetic only.

use std::fmt::Write as _;
use std::path::Path;

use msglab::fqe::UncertaintyCurve;

const W: f64 = 720.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One polyline of `std_q` against state per labelled curve, with the data
/// gap shaded when `gap` is a proper interval.
pub fn render_std_curves(path: &Path, curves: &[(String, &UncertaintyCurve)], gap: Option<(f64, f64)>) -> std::io::Result<()> {
    let xs = curves.iter().flat_map(|(_, c)| c.states.iter().copied());
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let y_hi = curves
        .iter()
        .flat_map(|(_, c)| c.std_q.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let sx = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / y_hi * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if let Some((lo, hi)) = gap.filter(|(lo, hi)| lo < hi) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{PAD}" width="{:.2}" height="{:.2}" fill="#eeeeee"/>"##,
            sx(lo),
            sx(hi) - sx(lo),
            H - 2.0 * PAD
        );
    }
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">state</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">ensemble std</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{x_lo}</text>"#, H - PAD + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_hi}</text>"#, W - PAD, H - PAD + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y_hi:.3}</text>"#, PAD - 4.0, PAD + 4.0);
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c
            .states
            .iter()
            .zip(&c.std_q)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{label}</text>"#, W - PAD - 150.0);
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}
