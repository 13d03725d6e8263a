//! Minimal static SVG plots: stacked panels of bar and line series.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 36.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Bars,
    Line,
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self { label: label.into(), points, style }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new() }
    }

    pub fn with(mut self, series: Series) -> Self {
        self.series.push(series);
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1 + 0.05 * (y1 - y0))
}

fn render_panel(out: &mut String, panel: &Panel, top: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + MARGIN_TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let _ = writeln!(out, "<g class=\"panel\">");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"14\" font-weight=\"bold\">{}</text>",
        MARGIN_LEFT,
        top + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444\"/>",
        MARGIN_LEFT,
        top + MARGIN_TOP,
        plot_w,
        plot_h
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            sx(fx),
            top + MARGIN_TOP + plot_h + 14.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 4.0,
            sy(fy) + 3.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        top + PANEL_HEIGHT - 6.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"12\" y=\"{:.1}\" font-size=\"11\" transform=\"rotate(-90 12 {:.1})\" text-anchor=\"middle\">{}</text>",
        top + MARGIN_TOP + plot_h / 2.0,
        top + MARGIN_TOP + plot_h / 2.0,
        escape(&panel.y_label)
    );

    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        match s.style {
            Style::Bars => {
                let bar_w = if pts.len() > 1 { plot_w / pts.len() as f64 * 0.8 } else { plot_w * 0.1 };
                for &(x, y) in &pts {
                    let (ya, yb) = (sy(y.max(y0)), sy(y0));
                    let _ = writeln!(
                        out,
                        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.45\"/>",
                        sx(x) - bar_w / 2.0,
                        ya,
                        bar_w,
                        (yb - ya).max(0.0)
                    );
                }
            }
            Style::Line => {
                let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    path.join(" ")
                );
            }
            Style::Points => {
                for &(x, y) in &pts {
                    let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"/>", sx(x), sy(y));
                }
            }
        }
        let ly = top + MARGIN_TOP + 12.0 + 14.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT - 180.0;
        let _ =
            writeln!(out, "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", lx, ly - 9.0);
        let _ =
            writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{}</text>", lx + 14.0, ly, escape(&s.label));
    }
    let _ = writeln!(out, "</g>");
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Panels stacked vertically in one document. Output depends only on the
/// input values, so identical inputs give identical bytes.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH:.0} {height:.0}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    if panels.is_empty() {
        let _ = writeln!(out, "<text x=\"20\" y=\"40\" font-size=\"14\">no results</text>");
    }
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_HEIGHT * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_group_per_panel() {
        let p = Panel::new("a", "t", "p").with(Series::new("s", vec![(0.0, 1.0), (1.0, 2.0)], Style::Line));
        let svg = render(&[p.clone(), p]);
        assert_eq!(svg.matches("<g class=\"panel\">").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_input_is_valid() {
        let svg = render(&[]);
        assert!(svg.contains("no results"));
        let p = Panel::new("empty", "t", "p");
        assert!(render(&[p]).contains("empty"));
    }

    #[test]
    fn labels_are_escaped() {
        let p = Panel::new("a<b", "t", "p").with(Series::new("x&y", vec![(0.0, 0.0)], Style::Points));
        let svg = render(&[p]);
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
