//! Minimal deterministic SVG line charts: fixed layout, fixed float
//! formatting, no external dependencies, so identical inputs render
//! byte-identical files.

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub width: f64,
    /// Marker radius; 0 disables markers.
    pub marker: f64,
    pub dash: Option<&'static str>,
}

/// Filled band between a lower and an upper curve (shared x grid).
pub struct Band {
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub color: &'static str,
    pub opacity: f64,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub band: Option<Band>,
}

pub const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

const W: f64 = 720.0;
const H: f64 = 480.0;
const ML: f64 = 80.0;
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 56.0;

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

impl Chart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for (x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    xs.push(*x);
                    ys.push(*y);
                }
            }
        }
        if let Some(b) = &self.band {
            xs.extend_from_slice(&b.x);
            ys.extend_from_slice(&b.lo);
            ys.extend_from_slice(&b.hi);
        }
        let (mut x0, mut x1) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(*v), b.max(*v))
            });
        let (mut y0, mut y1) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(*v), b.max(*v))
            });
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-300 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-300 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad_y = 0.05 * (y1 - y0);
        (x0, x1, y0 - pad_y, y1 + pad_y)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            W / 2.0,
            xml_escape(&self.title)
        ));

        // Axes box and ticks.
        out.push_str(&format!(
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            W - ML - MR,
            H - MT - MB
        ));
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            out.push_str(&format!(
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
                fmt(sx(fx)),
                fmt(H - MB),
                fmt(H - MB + 5.0)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                fmt(sx(fx)),
                fmt(H - MB + 18.0),
                tick_label(fx)
            ));
            out.push_str(&format!(
                "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"black\"/>\n",
                fmt(sy(fy)),
                fmt(ML - 5.0),
                fmt(ML)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                fmt(ML - 8.0),
                fmt(sy(fy) + 4.0),
                tick_label(fy)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            W / 2.0,
            H - 12.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            H / 2.0,
            H / 2.0,
            xml_escape(&self.y_label)
        ));

        if let Some(b) = &self.band {
            let mut d = String::from("M");
            for (x, y) in b.x.iter().zip(&b.lo) {
                d.push_str(&format!("{},{} ", fmt(sx(*x)), fmt(sy(*y))));
            }
            for (x, y) in b.x.iter().rev().zip(b.hi.iter().rev()) {
                d.push_str(&format!("{},{} ", fmt(sx(*x)), fmt(sy(*y))));
            }
            d.push('Z');
            out.push_str(&format!(
                "<path d=\"{}\" fill=\"{}\" fill-opacity=\"{}\" stroke=\"none\"/>\n",
                d.trim(),
                b.color,
                b.opacity
            ));
        }

        for s in &self.series {
            if s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|(x, y)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y))))
                    .collect();
                let dash = s
                    .dash
                    .map(|d| format!(" stroke-dasharray=\"{d}\""))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"{}/>\n",
                    pts.join(" "),
                    s.color,
                    s.width,
                    dash
                ));
            }
            if s.marker > 0.0 {
                for (x, y) in &s.points {
                    out.push_str(&format!(
                        "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"/>\n",
                        fmt(sx(*x)),
                        fmt(sy(*y)),
                        s.marker,
                        s.color
                    ));
                }
            }
        }

        // Legend.
        let mut ly = MT + 14.0;
        for s in &self.series {
            if s.label.is_empty() {
                continue;
            }
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                fmt(ML + 10.0),
                fmt(ly - 4.0),
                fmt(ML + 34.0),
                fmt(ly - 4.0),
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                fmt(ML + 40.0),
                fmt(ly),
                xml_escape(&s.label)
            ));
            ly += 16.0;
        }

        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
