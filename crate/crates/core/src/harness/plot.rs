//! Minimal SVG rendering: median markers with interquartile bars on a
//! log-scale y axis, one series per optimizer.

use std::fmt::Write;

use super::sweep::{Aggregate, Axis, Optimizer};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
/// Floor for non-positive values on the log axis.
const LOG_FLOOR: f64 = 1e-12;

fn color(o: Optimizer) -> &'static str {
    match o {
        Optimizer::Gnc => "#d62728",
        Optimizer::Gd => "#1f77b4",
        Optimizer::Prior => "#7f7f7f",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders aggregates as an SVG document. Optimizers without any defined
/// value are left out and listed in the legend as omitted.
pub fn render_svg(axis: Axis, title: &str, aggregates: &[Aggregate]) -> String {
    let mut xs: Vec<usize> = aggregates.iter().map(|a| a.axis_value).collect();
    xs.sort_unstable();
    xs.dedup();
    let ys: Vec<f64> = aggregates
        .iter()
        .filter_map(|a| a.quartiles)
        .flat_map(|q| [q.q25, q.median, q.q75])
        .map(|v| v.max(LOG_FLOOR).log10())
        .collect();
    let (mut ylo, mut yhi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !ylo.is_finite() {
        (ylo, yhi) = (-3.0, 0.0);
    }
    ylo = ylo.floor();
    yhi = yhi.ceil().max(ylo + 1.0);

    // Width grids are roughly geometric, depth grids linear.
    let xmap = |v: f64| if axis == Axis::Width { v.max(1.0).ln() } else { v };
    let (xlo, xhi) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if a != b => (xmap(a as f64), xmap(b as f64)),
        (Some(&a), _) => (xmap(a as f64) - 1.0, xmap(a as f64) + 1.0),
        _ => (0.0, 1.0),
    };
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let px = |v: f64| LEFT + 0.05 * plot_w + 0.9 * plot_w * (xmap(v) - xlo) / (xhi - xlo);
    let py = |v: f64| TOP + plot_h * (yhi - v.max(LOG_FLOOR).log10()) / (yhi - ylo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    for e in (ylo as i32)..=(yhi as i32) {
        let y = py(10f64.powi(e));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + plot_w);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, LEFT - 6.0, y + 4.0);
    }
    for &x in &xs {
        let x_px = px(x as f64);
        let _ = writeln!(s, r#"<text x="{x_px:.2}" y="{}" text-anchor="middle">{x}</text>"#, TOP + plot_h + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + plot_w / 2.0, H - 14.0, axis.name());
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">generalization loss</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    let present: Vec<Optimizer> = Optimizer::ALL.into_iter().filter(|o| aggregates.iter().any(|a| a.optimizer == *o)).collect();
    let mut legend_y = TOP + 10.0;
    let legend_x = W - RIGHT + 14.0;
    for (i, &o) in present.iter().enumerate() {
        let points: Vec<&Aggregate> = aggregates.iter().filter(|a| a.optimizer == o && a.quartiles.is_some()).collect();
        if points.is_empty() {
            let _ = writeln!(s, r##"<text x="{legend_x}" y="{legend_y:.2}" fill="#555555">{} omitted (no defined values)</text>"##, escape(o.label()));
            legend_y += 18.0;
            continue;
        }
        let shift = (i as f64 - (present.len() as f64 - 1.0) / 2.0) * 6.0;
        let c = color(o);
        let _ = writeln!(s, r#"<g class="series" data-optimizer="{}">"#, o.name());
        let mut path = String::new();
        for a in &points {
            let q = a.quartiles.unwrap();
            let x = px(a.axis_value as f64) + shift;
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}" stroke-width="1.5"/>"#, py(q.q25), py(q.q75));
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="4" fill="{c}"/>"#, py(q.median));
            let _ = write!(path, "{}{x:.2},{:.2}", if path.is_empty() { "M" } else { " L" }, py(q.median));
        }
        let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="{c}" stroke-opacity="0.5"/>"#);
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<circle cx="{legend_x}" cy="{:.2}" r="4" fill="{c}"/>"#, legend_y - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{legend_y:.2}">{}</text>"#, legend_x + 10.0, escape(o.label()));
        legend_y += 18.0;
    }
    s.push_str("</svg>\n");
    s
}
