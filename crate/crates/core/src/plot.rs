//! Target-vs-predicted strain history as a standalone SVG line chart.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::predictions::PredictionSet;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 64.0;
const TICKS: usize = 5;

const TARGET_COLOR: &str = "#1f77b4";
const PREDICTED_COLOR: &str = "#d62728";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn polyline(points: &[(f64, f64)], color: &str, dashed: bool, out: &mut String) {
    let _ = write!(
        out,
        "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{} points=\"",
        if dashed { " stroke-dasharray=\"6 3\"" } else { "" }
    );
    for (k, (x, y)) in points.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:.2},{y:.2}");
    }
    out.push_str("\"/>\n");
}

/// Renders both series over time. Requires a target column.
pub fn render_svg(set: &PredictionSet, title: &str) -> Result<String> {
    if set.is_empty() {
        return Err(Error::Data("cannot plot an empty prediction set".into()));
    }
    let target = set.targets()?;
    let predicted = set.predicted();
    let times: Vec<f64> = set.rows.iter().map(|r| r.time_s).collect();

    let (t0, t1) = range(times.iter().copied());
    let (y0, y1) = range(target.iter().chain(predicted.iter()).copied());
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |t: f64| LEFT + (t - t0) / (t1 - t0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"28\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );

    // axes
    let _ = writeln!(
        out,
        "  <rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for k in 0..=TICKS {
        let f = k as f64 / TICKS as f64;
        let t = t0 + f * (t1 - t0);
        let y = y0 + f * (y1 - y0);
        let (px, py) = (sx(t), sy(y));
        let _ = writeln!(
            out,
            "  <line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>",
            TOP + plot_h,
            TOP + plot_h + 5.0
        );
        let _ = writeln!(
            out,
            "  <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{t:.2}</text>",
            TOP + plot_h + 18.0
        );
        let _ = writeln!(
            out,
            "  <line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{LEFT:.2}\" y2=\"{py:.2}\" stroke=\"#444\"/>",
            LEFT - 5.0
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{y:.1}</text>",
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">time (s)</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">strain (microstrain)</text>",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    let pts = |ys: &crate::math::Vector| -> Vec<(f64, f64)> {
        times.iter().zip(ys.iter()).map(|(&t, &y)| (sx(t), sy(y))).collect()
    };
    polyline(&pts(&target), TARGET_COLOR, false, &mut out);
    polyline(&pts(&predicted), PREDICTED_COLOR, true, &mut out);

    // legend
    let lx = LEFT + plot_w - 130.0;
    let ly = TOP + 16.0;
    for (k, (label, color, dash)) in [
        ("Target", TARGET_COLOR, ""),
        ("Predicted", PREDICTED_COLOR, " stroke-dasharray=\"6 3\""),
    ]
    .into_iter()
    .enumerate()
    {
        let y = ly + 18.0 * k as f64;
        let _ = writeln!(
            out,
            "  <line x1=\"{lx:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            lx + 28.0
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\">{label}</text>",
            lx + 36.0,
            y + 4.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// One row per prediction: `index,time_s,target_microstrain,predicted_microstrain`.
pub fn render_table(set: &PredictionSet) -> Result<String> {
    if set.is_empty() {
        return Err(Error::Data("cannot tabulate an empty prediction set".into()));
    }
    let target = set.targets()?;
    let mut out = String::from("index,time_s,target_microstrain,predicted_microstrain\n");
    for (r, t) in set.rows.iter().zip(target.iter()) {
        let _ = writeln!(out, "{},{},{},{}", r.index, r.time_s, t, r.predicted);
    }
    Ok(out)
}
