//! Hand-written SVG charts. Every chart ships with the CSV it was drawn from.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860"];

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn header(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

/// Finite `[lo, hi]` with a little padding; degenerate ranges widen to ±1.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn draw(&self, svg: &mut String, x_label: &str, y_label: &str, x_ticks: bool) {
        let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
        let _ = writeln!(
            svg,
            "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\
             <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\"/>\
             <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\"/></g>"
        );
        for i in 0..=4 {
            let v = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
                x0 - 6.0,
                y + 3.0,
                fmt_tick(v)
            );
            if x_ticks {
                let xv = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
                let _ = writeln!(
                    svg,
                    "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
                    self.px(xv),
                    y0 + 16.0,
                    fmt_tick(xv)
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            svg,
            "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub svg: String,
    pub csv: String,
}

/// Scatter plot of `(x, y)` points, with an optional horizontal zero line.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], zero_line: bool) -> Chart {
    let axes = Axes {
        x: padded_range(points.iter().map(|p| p.0)),
        y: padded_range(points.iter().map(|p| p.1).chain(zero_line.then_some(0.0))),
    };
    let mut svg = header(title);
    axes.draw(&mut svg, x_label, y_label, true);
    if zero_line {
        let y = axes.py(0.0);
        let _ = writeln!(
            svg,
            "<line class=\"zero\" x1=\"{MARGIN_LEFT}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
            WIDTH - MARGIN_RIGHT
        );
    }
    svg.push_str("<g class=\"points\" fill=\"#4C72B0\" fill-opacity=\"0.6\">\n");
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\"/>", axes.px(x), axes.py(y));
    }
    svg.push_str("</g>\n</svg>\n");

    let mut csv = format!("{},{}\n", csv_field(x_label), csv_field(y_label));
    for (x, y) in points {
        let _ = writeln!(csv, "{x},{y}");
    }
    Chart { svg, csv }
}

/// Grouped bars: one `<g class="group">` per group with one bar per series.
pub fn grouped_bars(title: &str, y_label: &str, series: &[String], groups: &[(String, Vec<f64>)]) -> Chart {
    let axes = Axes {
        x: (0.0, groups.len().max(1) as f64),
        y: {
            let (lo, hi) = padded_range(groups.iter().flat_map(|g| g.1.iter().copied()).chain([0.0]));
            (lo.min(0.0), hi.max(0.0))
        },
    };
    let mut svg = header(title);
    axes.draw(&mut svg, "", y_label, false);
    let slot = 1.0 / (series.len().max(1) as f64 + 1.0);
    let base = axes.py(0.0);
    for (gi, (name, values)) in groups.iter().enumerate() {
        let _ = writeln!(svg, "<g class=\"group\" data-name=\"{}\">", escape(name));
        for (si, v) in values.iter().enumerate() {
            let x0 = axes.px(gi as f64 + slot * (si as f64 + 0.5));
            let x1 = axes.px(gi as f64 + slot * (si as f64 + 1.5));
            let top = if v.is_finite() { axes.py(*v) } else { base };
            let _ = writeln!(
                svg,
                "<rect class=\"bar\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{}: {}</title></rect>",
                x0,
                top.min(base),
                (x1 - x0).max(0.0),
                (top - base).abs(),
                PALETTE[si % PALETTE.len()],
                escape(series.get(si).map(String::as_str).unwrap_or("")),
                v
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n</g>",
            axes.px(gi as f64 + 0.5),
            HEIGHT - MARGIN_BOTTOM + 16.0,
            escape(name)
        );
    }
    svg.push_str("<g class=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n");
    for (si, s) in series.iter().enumerate() {
        let x = MARGIN_LEFT + 10.0 + 130.0 * si as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            HEIGHT - 36.0,
            PALETTE[si % PALETTE.len()],
            x + 14.0,
            HEIGHT - 27.0,
            escape(s)
        );
    }
    svg.push_str("</g>\n</svg>\n");

    let mut csv = String::from("group");
    for s in series {
        csv.push(',');
        csv.push_str(&csv_field(s));
    }
    csv.push('\n');
    for (name, values) in groups {
        csv.push_str(&csv_field(name));
        for v in values {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    Chart { svg, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_layout() {
        let series = vec!["with".to_string(), "without".to_string()];
        let groups: Vec<(String, Vec<f64>)> = ["a", "b", "c"]
            .iter()
            .map(|n| (n.to_string(), vec![1.0, 2.0]))
            .collect();
        let c = grouped_bars("MSE", "mse", &series, &groups);
        assert_eq!(c.svg.matches("<g class=\"group\"").count(), 3);
        assert_eq!(c.svg.matches("<rect class=\"bar\"").count(), 6);
        assert_eq!(c.csv.lines().count(), 4);
    }

    #[test]
    fn escaping() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
        let c = scatter("R&D", "x", "y", &[(0.0, 1.0), (1.0, f64::NAN)], true);
        assert!(c.svg.contains("R&amp;D"));
        assert_eq!(c.svg.matches("<circle").count(), 1);
    }
}
