//! Hand-rolled SVG line plots. No plotting dependency: the output is a plain
//! string, fully determined by its inputs, so tests can compare bytes.

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 55.0;
const RIGHT: f64 = 1050.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 318.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn x_of(i: usize, n: usize) -> f64 {
    LEFT + (i as f64 + 0.5) * (RIGHT - LEFT) / n as f64
}

fn y_of(v: f64) -> f64 {
    BOTTOM - v.clamp(0.0, 1.0) * (BOTTOM - TOP)
}

/// Hop-wise F1 plot: one polyline per series (a language's mean F1 across
/// its categories), x ticks labeled with each hop's training combo, dashed
/// vertical markers on hops where the collapse detector fired.
pub fn render_plot(
    title: &str,
    hop_labels: &[String],
    series: &[(String, Vec<f64>)],
    collapsed: &[bool],
) -> String {
    let n = hop_labels.len().max(1);
    let mut s = String::with_capacity(16 * 1024);
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"16\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        escape(title)
    ));

    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        s.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{tick:.2}</text>\n",
            LEFT - 6.0,
            y + 3.5
        ));
    }

    for (i, label) in hop_labels.iter().enumerate() {
        let x = x_of(i, n);
        s.push_str(&format!(
            "<line class=\"x-tick\" x1=\"{x:.2}\" y1=\"{BOTTOM}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#333333\" stroke-width=\"1\"/>\n",
            BOTTOM + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"9\" text-anchor=\"end\" \
             transform=\"rotate(-55 {x:.2} {:.2})\">{}</text>\n",
            BOTTOM + 16.0,
            BOTTOM + 16.0,
            escape(label)
        ));
    }

    for (i, &flag) in collapsed.iter().enumerate() {
        if flag {
            let x = x_of(i, n);
            s.push_str(&format!(
                "<line class=\"collapse-marker\" x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" \
                 y2=\"{BOTTOM}\" stroke=\"#d62728\" stroke-width=\"1\" \
                 stroke-dasharray=\"4,3\"/>\n"
            ));
        }
    }

    for (si, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i, n), y_of(v)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        for (i, &v) in values.iter().enumerate() {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"/>\n",
                x_of(i, n),
                y_of(v)
            ));
        }
        let ly = 40.0 + 16.0 * si as f64;
        s.push_str(&format!(
            "<line x1=\"1062\" y1=\"{ly:.2}\" x2=\"1082\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"1088\" y=\"{:.2}\" font-size=\"10\">{}</text>\n",
            ly + 3.5,
            escape(name)
        ));
    }

    s.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"#333333\" \
         stroke-width=\"1\"/>\n\
         <line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"#333333\" \
         stroke-width=\"1\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"394\" font-size=\"11\" text-anchor=\"middle\">hop \
         (language-category)</text>\n",
        (LEFT + RIGHT) / 2.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {:.2})\">macro F1</text>\n",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    ));
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
