//! Minimal SVG line charts for quick visual checks.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Shaded region between `lower` and `upper`.
pub struct Band<'a> {
    pub x: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
    pub bands: Vec<Band<'a>>,
}

impl Chart<'_> {
    pub fn render(&self) -> String {
        let finite = |v: &&f64| v.is_finite();
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.x.iter())
            .chain(self.bands.iter().flat_map(|b| b.x.iter()))
            .filter(finite);
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.y.iter())
            .chain(self.bands.iter().flat_map(|b| b.lower.iter().chain(b.upper.iter())))
            .filter(finite);
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(self.title)
        );
        let _ = writeln!(
            out,
            r##"<path d="M{PAD} {PAD} V{b} H{r}" fill="none" stroke="#333"/>"##,
            b = H - PAD,
            r = W - PAD
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 10.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(self.y_label)
        );
        for (v, anchor_y) in [(y0, H - PAD), (y1, PAD)] {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                PAD - 4.0,
                anchor_y + 4.0,
                tick(v)
            );
        }
        for (v, anchor_x) in [(x0, PAD), (x1, W - PAD)] {
            let _ = writeln!(
                out,
                r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{}</text>"#,
                H - PAD + 16.0,
                tick(v)
            );
        }
        for (k, b) in self.bands.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut d = String::new();
            for (i, (x, u)) in b.x.iter().zip(b.upper).enumerate() {
                let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { 'M' } else { 'L' }, px(*x), py(*u));
            }
            for (x, l) in b.x.iter().zip(b.lower).rev() {
                let _ = write!(d, "L{:.2} {:.2} ", px(*x), py(*l));
            }
            let _ = writeln!(
                out,
                r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                d
            );
        }
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> =
                s.x.iter()
                    .zip(s.y)
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                    .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
            let ly = PAD + 16.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                W - PAD - 120.0,
                W - PAD - 100.0,
                W - PAD - 94.0,
                ly + 4.0,
                escape(s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn span<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_bands() {
        let x = [0.0, 1.0, 2.0];
        let chart = Chart {
            title: "a < b",
            x_label: "s",
            y_label: "x",
            series: vec![Series {
                label: "mean",
                x: &x,
                y: &[1.0, 2.0, f64::NAN],
            }],
            bands: vec![Band {
                x: &x,
                lower: &[0.0, 1.0, 1.0],
                upper: &[2.0, 3.0, 3.0],
            }],
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn flat_data_gets_a_nonzero_span() {
        assert_eq!(span([2.0, 2.0].iter()), (1.5, 2.5));
        assert_eq!(span([].iter()), (0.0, 1.0));
    }
}
