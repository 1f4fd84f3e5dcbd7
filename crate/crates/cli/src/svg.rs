//! Minimal self-contained SVG rendering of selection rates against the
//! observation count — no plotting dependency, just shapes and text.

use pqla_core::{Method, StudyReport};
use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 600.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 340.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

/// Renders under/over/exact selection rates for the preferred estimator
/// (penalized if present, otherwise the first configured one). Returns
/// `None` when the report holds no selection data at all.
pub fn selection_chart(report: &StudyReport) -> Option<String> {
    let estimators = &report.config.estimators;
    let method = if estimators.contains(&Method::Penalized) {
        Method::Penalized
    } else {
        *estimators.first()?
    };
    let ns: Vec<usize> = report.config.n_grid.clone();
    let mut under = Vec::new();
    let mut over = Vec::new();
    let mut exact = Vec::new();
    for &n in &ns {
        let rates = report
            .per_n
            .get(&n)
            .and_then(|s| s.estimators.get(&method))
            .and_then(|e| e.selection.as_ref())?;
        under.push(rates.under);
        over.push(rates.over);
        exact.push(rates.exact);
    }
    let series = [
        Series {
            label: "exact",
            color: "#2ca02c",
            values: exact,
        },
        Series {
            label: "under",
            color: "#1f77b4",
            values: under,
        },
        Series {
            label: "over",
            color: "#ff7f0e",
            values: over,
        },
    ];
    // Categorical x positions: evenly spaced grid points.
    let x_of = |idx: usize| -> f64 {
        if ns.len() == 1 {
            (LEFT + RIGHT) / 2.0
        } else {
            LEFT + (RIGHT - LEFT) * idx as f64 / (ns.len() - 1) as f64
        }
    };
    let y_of = |rate: f64| -> f64 { BOTTOM - (BOTTOM - TOP) * rate.clamp(0.0, 1.0) };

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(
        svg,
        "<desc>schema_version={} master_seed={}</desc>\n",
        crate::config::SCHEMA_VERSION,
        report.config.master_seed
    );
    let _ = write!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    );
    let _ = write!(
        svg,
        "<text x=\"{LEFT}\" y=\"24\" font-size=\"15\">Model-selection rates ({method}, seed {})</text>\n",
        report.config.master_seed
    );
    // Horizontal gridlines and y labels.
    for k in 0..=4 {
        let rate = k as f64 / 4.0;
        let y = y_of(rate);
        let _ = write!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{rate:.2}</text>\n",
            LEFT - 8.0,
            y + 4.0
        );
    }
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n\
         <line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    );
    // X tick labels.
    for (idx, &n) in ns.iter().enumerate() {
        let x = x_of(idx);
        let _ = write!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{BOTTOM}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
             <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">n={n}</text>\n",
            BOTTOM + 5.0,
            BOTTOM + 20.0
        );
    }
    // Series polylines, markers, legend.
    for (rank, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| format!("{:.2},{:.2}", x_of(idx), y_of(v)))
            .collect();
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            s.color,
            points.join(" ")
        );
        for (idx, &v) in s.values.iter().enumerate() {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                x_of(idx),
                y_of(v),
                s.color
            );
        }
        let ly = TOP + 8.0 + 18.0 * rank as f64;
        let _ = write!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            RIGHT - 110.0,
            RIGHT - 86.0,
            s.color,
            RIGHT - 80.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}
