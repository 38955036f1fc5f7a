//! Static SVG plots: the decay curve and the inequality slack panel.

use std::fmt::Write;

use ufd_core::verify::InequalityReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        out,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0
    );
}

/// `log10 L2sq` against `t`, with the fitted line when given.
pub fn decay_plot(t: &[f64], l2sq: &[f64], fit: Option<(f64, f64)>) -> String {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(l2sq)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.log10()))
        .collect();
    let mut out = String::new();
    header(&mut out, "log10 L2 gap");
    if pts.len() >= 2 {
        let t_max = pts.iter().map(|p| p.0).fold(f64::MIN, f64::max).max(1e-300);
        let y_lo = pts.iter().map(|p| p.1).fold(f64::MAX, f64::min).floor();
        let y_hi = pts
            .iter()
            .map(|p| p.1)
            .fold(f64::MIN, f64::max)
            .ceil()
            .max(y_lo + 1.0);
        let sx = |t: f64| MARGIN + t / t_max * (W - 1.5 * MARGIN);
        let sy = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);
        let path: Vec<String> = pts
            .iter()
            .map(|&(t, y)| format!("{:.2},{:.2}", sx(t), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        if let Some((amp, rate)) = fit {
            let line = |t: f64| (amp.ln() - rate * t) / std::f64::consts::LN_10;
            let (t0, t1) = (0.25 * t_max, t_max);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="4 3"/>"#,
                sx(t0),
                sy(line(t0)),
                sx(t1),
                sy(line(t1))
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="44" text-anchor="end" fill="firebrick">rate {rate:.4}</text>"#,
                W - MARGIN
            );
        }
        for k in [y_lo, y_hi] {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{k}</text>"#,
                MARGIN - 6.0,
                sy(k) + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">t = {t_max}</text>"#,
            sx(t_max),
            H - MARGIN + 18.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Relative slack per report, clipped to `[-1, 1]`; failures in red.
pub fn slack_panel(reports: &[InequalityReport]) -> String {
    let mut out = String::new();
    header(&mut out, "relative slack (rhs - lhs) / |rhs|");
    let n = reports.len().max(1) as f64;
    let band = (W - 1.5 * MARGIN) / n;
    let zero = H / 2.0;
    let half = H / 2.0 - MARGIN;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{zero}" x2="{}" y2="{zero}" stroke="gray"/>"#,
        W - MARGIN / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let s = r.relative_slack().clamp(-1.0, 1.0);
        let s = if s.is_nan() { -1.0 } else { s };
        let x = MARGIN + i as f64 * band + 0.15 * band;
        let (y, h) = if s >= 0.0 {
            (zero - s * half, s * half)
        } else {
            (zero, -s * half)
        };
        let colour = if r.pass { "seagreen" } else { "firebrick" };
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{colour}"><title>{} {:.3e}</title></rect>"#,
            0.7 * band,
            r.name,
            r.relative_slack()
        );
    }
    out.push_str("</svg>\n");
    out
}
