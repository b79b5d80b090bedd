//! Self-contained SVG 1.1 figures.

use std::fmt::Write as _;

use tcan_core::trainer::ConfusionMatrix;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

pub struct Series<'a> {
    pub name: &'a str,
    /// (x, y) points; `None` marks a failed run and breaks the line.
    pub points: Vec<(f64, Option<f64>)>,
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot with y fixed to [0, 1].
pub fn accuracy_plot(title: &str, x_label: &str, series: &[Series]) -> String {
    let (w, h) = (560.0, 380.0);
    let (left, right, top, bottom) = (64.0, 24.0, 40.0, 56.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - y) * ph;

    let mut s = open_svg(w, h);
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", w / 2.0, escape(title));
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>\n<text x=\"{2}\" y=\"{3:.1}\" text-anchor=\"end\" font-size=\"11\">{y:.1}</text>",
            sy(y),
            left + pw,
            left - 6.0,
            sy(y) + 4.0
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{x}</text>",
            sx(x),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {})\">accuracy</text>",
        left + pw / 2.0,
        h - 14.0,
        escape(x_label),
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, s: &mut String| {
            if run.len() > 1 {
                let _ = writeln!(s, "<polyline class=\"series\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>", run.join(" "));
            }
            run.clear();
        };
        for &(x, y) in &ser.points {
            match y {
                Some(y) => {
                    run.push(format!("{:.1},{:.1}", sx(x), sy(y)));
                    let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{colour}\"/>", sx(x), sy(y));
                }
                None => flush(&mut run, &mut s),
            }
        }
        flush(&mut run, &mut s);
        let ly = top + 16.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{colour}\" stroke-width=\"2\"/>\n<text x=\"{2}\" y=\"{3}\" font-size=\"11\">{4}</text>",
            left + 12.0,
            left + 32.0,
            left + 38.0,
            ly + 4.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heatmap shaded by row-normalized counts, one `rect.cell` per entry.
pub fn confusion_heatmap(cm: &ConfusionMatrix, title: &str) -> String {
    let n = cm.size();
    let cell = 56.0;
    let (left, top) = (72.0, 64.0);
    let (w, h) = (left + cell * n as f64 + 24.0, top + cell * n as f64 + 48.0);
    let rows = cm.row_sums();
    let mut s = open_svg(w, h);
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"46\" text-anchor=\"middle\" font-size=\"12\">predicted</text>\n<text x=\"18\" y=\"{1}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 {1})\">true</text>",
        left + cell * n as f64 / 2.0,
        top + cell * n as f64 / 2.0
    );
    for i in 0..n {
        let name = format!("C{}", i + 1);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{name}</text>\n<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"12\">{name}</text>",
            left + cell * (i as f64 + 0.5),
            top + cell * n as f64 + 18.0,
            left - 8.0,
            top + cell * (i as f64 + 0.5) + 4.0
        );
    }
    for r in 0..n {
        for c in 0..n {
            let count = cm.get(r, c);
            let frac = if rows[r] == 0 { 0.0 } else { count as f64 / rows[r] as f64 };
            // White to dark blue.
            let shade = |full: f64| (255.0 - (255.0 - full) * frac).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(8.0), shade(48.0), shade(107.0));
            let text = if frac > 0.5 { "white" } else { "black" };
            let (x, y) = (left + cell * c as f64, top + cell * r as f64);
            let _ = writeln!(
                s,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"#888\"><title>C{} as C{}: {count}</title></rect>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" fill=\"{text}\">{count}</text>",
                r + 1,
                c + 1,
                x + cell / 2.0,
                y + cell / 2.0 + 5.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
