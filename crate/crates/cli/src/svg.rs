//! Self-contained SVG line plot of `h(rho_1)` on a logarithmic `rho_1` axis.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// Signed log scale `sign(v) log10(1 + |v|)`, finite through zero.
fn symlog(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p() / std::f64::consts::LN_10
}

fn inv_symlog(s: f64) -> f64 {
    s.signum() * (10f64.powf(s.abs()) - 1.0)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

pub fn h_curve(curve: &[(f64, f64)], roots: &[f64], log_y: bool) -> String {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(x, y)| *x > 0.0 && y.is_finite())
        .map(|&(x, y)| (x.log10(), if log_y { symlog(y) } else { y }))
        .collect();
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" style=\"fill:#ffffff\"/>\n"
    );
    if pts.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (x0, x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (mut y0, mut y1) = pts.iter().fold((0.0f64, 0.0f64), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    if y1 - y0 <= 0.0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (x1, x0) = if x1 > x0 { (x1, x0) } else { (x0 + 1.0, x0) };
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * (H - TOP - BOTTOM);
    let axis = "stroke:#333333;stroke-width:1";
    let label = "font-family:sans-serif;font-size:11px;fill:#333333";
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" style=\"{axis}\"/>",
        LEFT,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT:.2}\" y1=\"{TOP:.2}\" x2=\"{LEFT:.2}\" y2=\"{:.2}\" style=\"{axis}\"/>",
        H - BOTTOM
    );
    for e in (x0.floor() as i32)..=(x1.ceil() as i32) {
        let x = f64::from(e);
        if x < x0 || x > x1 {
            continue;
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" style=\"{label};text-anchor:middle\">1e{e}</text>",
            px(x),
            H - BOTTOM + 16.0
        );
    }
    let ticks: Vec<f64> = if log_y {
        (y0.ceil() as i32..=y1.floor() as i32).map(f64::from).collect()
    } else {
        (0..=5).map(|i| y0 + (y1 - y0) * f64::from(i) / 5.0).collect()
    };
    for t in ticks {
        let shown = if log_y { inv_symlog(t) } else { t };
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" style=\"{label};text-anchor:end\">{}</text>",
            LEFT - 6.0,
            py(t) + 4.0,
            fmt_tick(shown)
        );
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT:.2}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" style=\"stroke:#999999;stroke-dasharray:4 3\"/>",
            py(0.0),
            W - RIGHT
        );
    }
    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" style=\"fill:none;stroke:#1f5fa8;stroke-width:1.5\"/>",
        path.join(" ")
    );
    for r in roots.iter().filter(|r| **r > 0.0) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" style=\"fill:#c0392b\"/>",
            px(r.log10()),
            py(0.0)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" style=\"{label};text-anchor:middle\">rho_1</text>",
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.2}\" style=\"{label};text-anchor:middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        H / 2.0,
        H / 2.0,
        if log_y { "h (signed log)" } else { "h" }
    );
    s.push_str("</svg>\n");
    s
}
