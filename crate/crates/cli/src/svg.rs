//! Minimal static bar charts for metrics in [0, 1].

const BAR_W: f64 = 36.0;
const GAP: f64 = 12.0;
const PLOT_H: f64 = 240.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let width = 2.0 * MARGIN + bars.len() as f64 * (BAR_W + GAP);
    let height = PLOT_H + 2.0 * MARGIN;
    let base = MARGIN + PLOT_H;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s += &format!("<text x=\"{MARGIN}\" y=\"{}\" font-size=\"14\">{}</text>\n", MARGIN / 2.0, escape(title));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = base - tick * PLOT_H;
        s += &format!(
            "<line x1=\"{MARGIN}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"#ddd\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick:.2}</text>\n",
            width - MARGIN,
            MARGIN - 4.0,
            y + 4.0
        );
    }
    for (i, (label, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let x = MARGIN + GAP / 2.0 + i as f64 * (BAR_W + GAP);
        let h = v * PLOT_H;
        s += &format!(
            "<rect x=\"{x}\" y=\"{}\" width=\"{BAR_W}\" height=\"{h}\" fill=\"#4a7fb5\"><title>{} {v:.3}</title></rect>\n",
            base - h,
            escape(label)
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x + BAR_W / 2.0,
            base + 14.0,
            escape(label)
        );
    }
    s += "</svg>\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_bar() {
        let doc = bar_chart("t", &[("E3".into(), 0.5), ("SE2".into(), 1.2)]);
        assert_eq!(doc.matches("<rect").count(), 2);
        assert!(doc.contains(&format!("height=\"{}\"", PLOT_H)));
        assert!(doc.ends_with("</svg>\n"));
    }
}
