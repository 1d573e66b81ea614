//! Minimal SVG rendering of effect curves and heatmaps.

use std::fmt::Write as _;

use nalgebra::DMatrix;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

/// One labelled curve: continuous part as a polyline, atoms as dots.
pub struct Curve {
    pub label: String,
    pub grid: Vec<(f64, f64)>,
    pub atoms: Vec<(f64, f64)>,
}

pub fn curves(title: &str, curves: &[Curve]) -> String {
    let xs = range(curves.iter().flat_map(|c| c.grid.iter().chain(&c.atoms).map(|p| p.0)));
    let ys = range(curves.iter().flat_map(|c| c.grid.iter().chain(&c.atoms).map(|p| p.1)));
    let sx = |x: f64| PAD + (x - xs.0) / (xs.1 - xs.0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - ys.0) / (ys.1 - ys.0) * (H - 2.0 * PAD);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    )
    .unwrap();
    if ys.0 < 0.0 && ys.1 > 0.0 {
        writeln!(
            s,
            r##"<line x1="{PAD}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            W - PAD,
            y = sy(0.0)
        )
        .unwrap();
    }
    for (lbl, v, x, y, anchor) in [
        ("", xs.0, sx(xs.0), H - PAD + 16.0, "start"),
        ("", xs.1, sx(xs.1), H - PAD + 16.0, "end"),
        ("", ys.0, PAD - 4.0, sy(ys.0), "end"),
        ("", ys.1, PAD - 4.0, sy(ys.1), "end"),
    ] {
        writeln!(s, r#"<text x="{x:.2}" y="{y:.2}" font-size="10" text-anchor="{anchor}">{lbl}{v:.3}</text>"#).unwrap();
    }
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if !c.grid.is_empty() {
            let pts: Vec<String> = c.grid.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        }
        for &(x, y) in &c.atoms {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, sx(x), sy(y)).unwrap();
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            W - PAD + 4.0,
            PAD + 12.0 * (k as f64 + 1.0),
            escape(&c.label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Diverging colour for `v` in `[-1, 1]`: blue below zero, red above.
fn colour(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if v >= 0.0 {
        format!("rgb(255,{0},{0})", fade(v))
    } else {
        format!("rgb({0},{0},255)", fade(v))
    }
}

/// Square heatmap; `labels` name rows and columns alike.
pub fn heatmap(title: &str, labels: &[String], values: &DMatrix<f64>) -> String {
    let n = values.nrows().max(1);
    let side = (H - 2.0 * PAD).min(W - 2.0 * PAD);
    let cell = side / n as f64;
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{} (max |log odds| {scale:.3})</text>"#,
        W / 2.0,
        escape(title)
    )
    .unwrap();
    for i in 0..values.nrows() {
        for j in 0..values.ncols() {
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                PAD + j as f64 * cell,
                PAD + i as f64 * cell,
                cell,
                cell,
                colour(values[(i, j)] / scale)
            )
            .unwrap();
        }
    }
    let step = (labels.len() / 10).max(1);
    for (k, l) in labels.iter().enumerate().step_by(step) {
        let c = PAD + (k as f64 + 0.5) * cell;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{}</text>"#,
            PAD - 3.0,
            c + 3.0,
            escape(l)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{c:.2}" y="{:.2}" font-size="9" text-anchor="middle">{}</text>"#,
            PAD + side + 12.0,
            escape(l)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
