//! Minimal static SVG line plots: series, quantile bands and regime
//! shading, with no plotting dependency. Every figure written by the CLI
//! has a CSV sidecar carrying the exact plotted values.

/// One plotted line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: String,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: &str, x: Vec<f64>, y: Vec<f64>, color: &str, dashed: bool) -> Self {
        Series {
            label: label.to_string(),
            x,
            y,
            color: color.to_string(),
            dashed,
        }
    }
}

/// Shaded band between two curves (quantile envelopes).
#[derive(Debug, Clone)]
pub struct Band {
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub fill: String,
}

/// Vertical shading over an x-interval (tax regime bands).
#[derive(Debug, Clone, Copy)]
pub struct Span {
    pub from: f64,
    pub to: f64,
}

/// A single panel.
#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    pub spans: Vec<Span>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            ..Default::default()
        }
    }

    fn data_range(&self) -> (f64, f64, f64, f64) {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        let mut take = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        };
        for s in &self.series {
            for (&x, &y) in s.x.iter().zip(&s.y) {
                take(x, y);
            }
        }
        for b in &self.bands {
            for i in 0..b.x.len() {
                take(b.x[i], b.lo[i]);
                take(b.x[i], b.hi[i]);
            }
        }
        if !x_min.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if (x_max - x_min).abs() < 1e-12 {
            x_max = x_min + 1.0;
        }
        if (y_max - y_min).abs() < 1e-12 {
            y_max = y_min + 1.0;
        }
        let pad = 0.05 * (y_max - y_min);
        (x_min, x_max, y_min - pad, y_max + pad)
    }
}

/// Tick positions at "nice" multiples covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(0.01..1000.0).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 360.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 46.0;

fn render_panel(plot: &LinePlot, out: &mut String, y_offset: f64) {
    use std::fmt::Write;
    let (x_min, x_max, y_min, y_max) = plot.data_range();
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| y_offset + MARGIN_T + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let top = y_offset + MARGIN_T;
    let bottom = y_offset + MARGIN_T + plot_h;

    // regime shading behind everything else
    for span in &plot.spans {
        let a = sx(span.from.clamp(x_min, x_max));
        let b = sx(span.to.clamp(x_min, x_max));
        if b > a {
            let _ = write!(
                out,
                r##"<rect x="{a:.2}" y="{top:.2}" width="{:.2}" height="{plot_h:.2}" fill="#d9d9d9" opacity="0.55"/>"##,
                b - a
            );
        }
    }
    for band in &plot.bands {
        let mut d = String::new();
        for (i, (&x, &y)) in band.x.iter().zip(&band.hi).enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if i == 0 { "M" } else { "L" },
                sx(x),
                sy(y)
            );
        }
        for (&x, &y) in band.x.iter().rev().zip(band.lo.iter().rev()) {
            let _ = write!(d, "L{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = write!(
            out,
            r##"<path d="{}Z" fill="{}" opacity="0.35" stroke="none"/>"##,
            d, band.fill
        );
    }

    // axes
    let _ = write!(
        out,
        r##"<rect x="{MARGIN_L:.2}" y="{top:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#333" stroke-width="1"/>"##
    );
    for t in ticks(x_min, x_max, 6) {
        let px = sx(t);
        let _ = write!(
            out,
            r##"<line x1="{px:.2}" y1="{bottom:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333" stroke-width="1"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle" fill="#333">{}</text>"##,
            bottom + 4.0,
            bottom + 17.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y_min, y_max, 5) {
        let py = sy(t);
        let _ = write!(
            out,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_L:.2}" y2="{py:.2}" stroke="#333" stroke-width="1"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" fill="#333">{}</text>"##,
            MARGIN_L - 4.0,
            MARGIN_L - 7.0,
            py + 3.5,
            fmt_tick(t)
        );
    }

    for s in &plot.series {
        let mut d = String::new();
        let mut pen_down = false;
        for (&x, &y) in s.x.iter().zip(&s.y) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if pen_down { "L" } else { "M" },
                    sx(x),
                    sy(y)
                );
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = write!(
            out,
            r##"<path d="{d}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"##,
            s.color
        );
    }

    // title, axis labels, legend
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="13" font-weight="bold" text-anchor="middle" fill="#111">{}</text>"##,
        MARGIN_L + plot_w / 2.0,
        y_offset + 18.0,
        xml_escape(&plot.title)
    );
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" fill="#111">{}</text>"##,
        MARGIN_L + plot_w / 2.0,
        bottom + 34.0,
        xml_escape(&plot.x_label)
    );
    let _ = write!(
        out,
        r##"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" fill="#111" transform="rotate(-90 14 {:.2})">{}</text>"##,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        xml_escape(&plot.y_label)
    );
    let mut ly = top + 14.0;
    for s in &plot.series {
        let dash = if s.dashed {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = write!(
            out,
            r##"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="1.8"{dash}/><text x="{:.2}" y="{:.2}" font-size="11" fill="#111">{}</text>"##,
            MARGIN_L + 8.0,
            MARGIN_L + 34.0,
            s.color,
            MARGIN_L + 39.0,
            ly + 3.5,
            xml_escape(&s.label)
        );
        ly += 15.0;
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders panels stacked vertically into one standalone SVG document.
pub fn render_figure(panels: &[LinePlot]) -> String {
    let total_h = PANEL_H * panels.len() as f64;
    let mut out = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{total_h}" viewBox="0 0 {PANEL_W} {total_h}"><rect width="100%" height="100%" fill="white"/>"##
    );
    for (i, p) in panels.iter().enumerate() {
        render_panel(p, &mut out, i as f64 * PANEL_H);
    }
    out.push_str("</svg>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_wellformed_svg() {
        let mut p = LinePlot::new("test", "t", "value");
        p.series.push(Series::new(
            "a",
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 0.5],
            "#c0392b",
            false,
        ));
        p.spans.push(Span { from: 0.5, to: 1.5 });
        p.bands.push(Band {
            x: vec![0.0, 1.0, 2.0],
            lo: vec![-0.1, 0.4, 0.2],
            hi: vec![0.4, 1.4, 0.9],
            fill: "#888888".into(),
        });
        let svg = render_figure(std::slice::from_ref(&p));
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
        assert!(!svg.contains("stroke-dasharray"));
        assert!(svg.matches("<path").count() >= 2);
        // two stacked panels double the height
        let two = render_figure(&[p.clone(), p]);
        assert!(two.contains(&format!(r#"height="{}""#, 2.0 * PANEL_H)));
    }

    #[test]
    fn tick_selection_covers_range() {
        let t = ticks(0.0, 15.0, 6);
        assert!(t.first().copied().unwrap() >= 0.0);
        assert!(t.last().copied().unwrap() <= 15.0 + 1e-9);
        assert!(t.len() >= 4 && t.len() <= 10);
        let t = ticks(-0.034, 0.051, 5);
        assert!(t.contains(&0.0));
    }
}
