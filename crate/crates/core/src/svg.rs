//! Minimal self-contained SVG scatter plots. No external renderer; output
//! is plain markup suitable for diffing and embedding.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Square,
    Triangle,
    Cross,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub marker: Marker,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 56.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(series: &[Series], pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for p in &s.points {
            let v = pick(p);
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.06;
    (lo - pad, hi + pad)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn marker_markup(marker: Marker, x: f64, y: f64, color: &str) -> String {
    match marker {
        Marker::Circle => format!(
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="4.5" fill="{color}" fill-opacity="0.85"/>"#
        ),
        Marker::Square => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="9" height="9" fill="{color}" fill-opacity="0.85"/>"#,
            x - 4.5,
            y - 4.5
        ),
        Marker::Triangle => format!(
            r#"<path d="M {x:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="{color}" fill-opacity="0.85"/>"#,
            y - 5.5,
            x - 5.0,
            y + 4.5,
            x + 5.0,
            y + 4.5
        ),
        Marker::Cross => format!(
            concat!(
                r#"<path d="M {x0:.2} {y0:.2} L {x1:.2} {y1:.2} M {x0:.2} {y1:.2} L {x1:.2} {y0:.2}" "#,
                r#"stroke="{color}" stroke-width="2" fill="none"/>"#
            ),
            x0 = x - 4.5,
            y0 = y - 4.5,
            x1 = x + 4.5,
            y1 = y + 4.5,
            color = color
        ),
    }
}

/// Renders series as a scatter plot with axes, ticks, and a legend listing
/// each series once.
pub fn scatter(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi) = bounds(series, |p| p.0);
    let (y_lo, y_hi) = bounds(series, |p| p.1);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_x = |v: f64| MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w;
    let to_y = |v: f64| MARGIN_TOP + plot_h - (v - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    let _ = write!(
        out,
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" "#,
            r#"viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            "\n"
        ),
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(
        out,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );

    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_lo + f * (y_hi - y_lo);
        let xp = to_x(xv);
        let yp = to_y(yv);
        let _ = writeln!(
            out,
            r##"<line x1="{xp:.1}" y1="{:.1}" x2="{xp:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{yp:.1}" x2="{:.1}" y2="{yp:.1}" stroke="#dddddd"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            out,
            r##"<text x="{xp:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            MARGIN_TOP + plot_h + 18.0,
            format_tick(xv)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            MARGIN_LEFT - 8.0,
            yp + 4.0,
            format_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#333333"/>"##,
        MARGIN_LEFT, MARGIN_TOP
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r##"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"##,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(out, "{}", marker_markup(s.marker, to_x(x), to_y(y), color));
            }
        }
    }

    let legend_x = MARGIN_LEFT + plot_w - 130.0;
    let mut legend_y = MARGIN_TOP + 14.0;
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="126" height="{}" fill="#ffffff" fill-opacity="0.85" stroke="#999999"/>"##,
        legend_x - 6.0,
        legend_y - 12.0,
        series.len() * 18 + 8
    );
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let _ = writeln!(out, "{}", marker_markup(s.marker, legend_x + 6.0, legend_y, color));
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}">{}</text>"##,
            legend_x + 18.0,
            legend_y + 4.0,
            escape(&s.label)
        );
        legend_y += 18.0;
    }
    out.push_str("</svg>\n");
    out
}
