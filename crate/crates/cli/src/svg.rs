//! Minimal SVG builder for the report stage.
//!
//! Plots are plain shapes and text; machine-readable values travel in
//! `data-*` attributes so a consumer never has to parse coordinates.

use std::fmt::Write as _;

pub struct Svg {
    body: String,
    width: f64,
    height: f64,
    open_groups: usize,
}

fn fmt_num(v: f64) -> String {
    format!("{v:.3}")
}

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

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg { body: String::new(), width, height, open_groups: 0 }
    }

    pub fn group(&mut self, attrs: &[(&str, String)]) {
        self.body.push_str("  <g");
        for (key, value) in attrs {
            let _ = write!(self.body, " {key}=\"{}\"", escape(value));
        }
        self.body.push_str(">\n");
        self.open_groups += 1;
    }

    pub fn end_group(&mut self) {
        assert!(self.open_groups > 0, "unbalanced </g>");
        self.body.push_str("  </g>\n");
        self.open_groups -= 1;
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"{stroke}\"/>",
            fmt_num(x),
            fmt_num(y),
            fmt_num(w),
            fmt_num(h),
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"{}\"/>",
            fmt_num(x1),
            fmt_num(y1),
            fmt_num(x2),
            fmt_num(y2),
            fmt_num(width),
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        let coords: Vec<String> =
            points.iter().map(|(x, y)| format!("{},{}", fmt_num(*x), fmt_num(*y))).collect();
        let _ = writeln!(
            self.body,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1\"/>",
            coords.join(" "),
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "  <text x=\"{}\" y=\"{}\" font-size=\"{}\" font-family=\"monospace\" text-anchor=\"{anchor}\">{}</text>",
            fmt_num(x),
            fmt_num(y),
            fmt_num(size),
            escape(content),
        );
    }

    pub fn finish(self) -> String {
        assert_eq!(self.open_groups, 0, "unclosed <g> at finish");
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n{}</svg>\n",
            fmt_num(self.width),
            fmt_num(self.height),
            fmt_num(self.width),
            fmt_num(self.height),
            self.body,
        )
    }
}

/// Linear scale from a data range to a pixel range.
pub struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    pub fn new(d0: f64, d1: f64, p0: f64, p1: f64) -> Self {
        Scale { d0, d1, p0, p1 }
    }

    pub fn at(&self, v: f64) -> f64 {
        if self.d1 == self.d0 {
            return (self.p0 + self.p1) / 2.0;
        }
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup_characters() {
        assert_eq!(escape("a<b&\"c\""), "a&lt;b&amp;&quot;c&quot;");
    }

    #[test]
    fn finished_document_is_balanced() {
        let mut svg = Svg::new(100.0, 50.0);
        svg.group(&[("data-q1", "0.25".into())]);
        svg.rect(1.0, 2.0, 3.0, 4.0, "none", "black");
        svg.end_group();
        let doc = svg.finish();
        assert!(doc.starts_with("<svg "));
        assert!(doc.trim_end().ends_with("</svg>"));
        assert!(doc.contains("data-q1=\"0.25\""));
        assert_eq!(doc.matches("<g").count(), doc.matches("</g>").count());
    }

    #[test]
    fn degenerate_scale_maps_to_midpoint() {
        let s = Scale::new(5.0, 5.0, 0.0, 100.0);
        assert_eq!(s.at(5.0), 50.0);
    }
}
