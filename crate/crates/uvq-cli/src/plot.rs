//! Static SVG line plots and slope fits for experiment records.
//!
//! Output is fixed-geometry (640x480), versioned, and fully deterministic:
//! identical records produce identical SVG bytes.  Plots are drawn log-log
//! whenever every plotted value is positive, falling back to linear axes
//! otherwise.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{CfgResult, ConfigError};
use crate::records::ExperimentRecord;

pub const PLOT_SCHEMA_LINE: &str = "<!-- uvq plot schema v1 -->";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 616.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 424.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

// ---------------------------------------------------------------------------
// Slope fits
// ---------------------------------------------------------------------------

/// Least-squares slope of `y` on `x`; `None` without two distinct abscissas.
fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    if sxx < 1e-24 {
        return None;
    }
    Some(sxy / sxx)
}

/// Slope of `log value` against `log n`; requires positive coordinates.
pub fn fit_log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let transformed: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if transformed.len() < points.len() {
        return None;
    }
    least_squares_slope(&transformed)
}

/// The identification scaling regressor `sqrt(log n / n)`.
pub fn identification_regressor(n: f64) -> Option<f64> {
    (n > 1.0).then(|| (n.ln() / n).sqrt())
}

/// Slope of `log value` against `log sqrt(log n / n)` — the scaling-law fit
/// for the mean identification error.  A slope of one matches the predicted
/// decay rate exactly.
pub fn fit_identification_slope(points: &[(f64, f64)]) -> Option<f64> {
    let transformed: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|&(n, y)| {
            let x = identification_regressor(n)?;
            (y > 0.0).then(|| (x.ln(), y.ln()))
        })
        .collect();
    if transformed.len() < points.len() {
        return None;
    }
    least_squares_slope(&transformed)
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Three-significant-digit tick label.
fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..=5).contains(&exp) {
        let prec = (2 - exp).max(0) as usize;
        let s = format!("{v:.prec$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.2e}")
    }
}

fn span_padded(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.1;
        (lo - pad, hi + pad)
    } else {
        (lo - 0.05 * span, hi + 0.05 * span)
    }
}

/// Render a fixed-size plot of the series, with annotation lines drawn
/// inside the plot area.
pub fn render(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    annotations: &[String],
) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let log_scale = !all.is_empty() && all.iter().all(|(x, y)| *x > 0.0 && *y > 0.0);
    let tx = |v: f64| if log_scale { v.ln() } else { v };
    let xs: Vec<f64> = all.iter().map(|p| tx(p.0)).collect();
    let ys: Vec<f64> = all.iter().map(|p| tx(p.1)).collect();
    let (xmin, xmax) = span_padded(&xs);
    let (ymin, ymax) = span_padded(&ys);
    let sx = |v: f64| LEFT + (tx(v) - xmin) / (xmax - xmin) * (RIGHT - LEFT);
    let sy = |v: f64| BOTTOM - (tx(v) - ymin) / (ymax - ymin) * (BOTTOM - TOP);

    let mut svg = String::new();
    let _ = writeln!(svg, "{PLOT_SCHEMA_LINE}");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-size=\"16\" fill=\"#222222\">{}</text>",
        (LEFT + RIGHT) / 2.0,
        xml_escape(title)
    );

    // Gridlines and tick labels: five ticks per axis in scale space.
    for i in 0..5 {
        let f = i as f64 / 4.0;
        let gx = xmin + f * (xmax - xmin);
        let gy = ymin + f * (ymax - ymin);
        let px = LEFT + f * (RIGHT - LEFT);
        let py = BOTTOM - f * (BOTTOM - TOP);
        let x_value = if log_scale { gx.exp() } else { gx };
        let y_value = if log_scale { gy.exp() } else { gy };
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{TOP}\" x2=\"{px:.2}\" y2=\"{BOTTOM}\" stroke=\"#dddddd\" stroke-width=\"1\"/>"
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{py:.2}\" x2=\"{RIGHT}\" y2=\"{py:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" fill=\"#444444\">{}</text>",
            BOTTOM + 18.0,
            xml_escape(&fmt_sig(x_value))
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\" fill=\"#444444\">{}</text>",
            LEFT - 8.0,
            py + 4.0,
            xml_escape(&fmt_sig(y_value))
        );
    }

    // Frame and axis titles.
    let _ = writeln!(
        svg,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>",
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" fill=\"#222222\">{}{}</text>",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 42.0,
        xml_escape(x_label),
        if log_scale { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        svg,
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" fill=\"#222222\" transform=\"rotate(-90 20 {})\">{}{}</text>",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0,
        xml_escape(y_label),
        if log_scale { " (log scale)" } else { "" }
    );

    // Series: polyline plus point markers.
    for (s, series) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let path: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if path.len() > 1 {
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                path.join(" ")
            );
        }
        for &(x, y) in &series.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{color}\"/>",
                sx(x),
                sy(y)
            );
        }
        // Legend entry, top-right inside the frame.
        let ly = TOP + 18.0 + 18.0 * s as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            RIGHT - 170.0,
            RIGHT - 146.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" fill=\"#222222\">{}</text>",
            RIGHT - 140.0,
            ly + 4.0,
            xml_escape(&series.label)
        );
    }

    for (a, line) in annotations.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" fill=\"#333333\">{}</text>",
            LEFT + 10.0,
            TOP + 18.0 + 16.0 * a as f64,
            xml_escape(line)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Records to plots
// ---------------------------------------------------------------------------

/// One (experiment, metric) group: where its plot went and what slopes fit.
pub struct PlotSummary {
    pub experiment: String,
    pub metric: String,
    /// File name inside the plot directory; `None` when the group has too
    /// few distinct block lengths to draw a line.
    pub file: Option<String>,
    pub points: usize,
    pub log_log_slope: Option<f64>,
    /// Slope against `sqrt(log n / n)`, fitted for mean identification
    /// error records.
    pub regressor_slope: Option<f64>,
}

fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Render one SVG per (experiment, metric) group with at least two distinct
/// block lengths, writing into `dir`; groups appear in record order.
pub fn plot_records(records: &[ExperimentRecord], dir: &Path) -> CfgResult<Vec<PlotSummary>> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: std::collections::BTreeMap<(String, String), Vec<(f64, f64)>> =
        std::collections::BTreeMap::new();
    for record in records {
        let key = (record.experiment.clone(), record.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((record.n as f64, record.value));
    }

    let mut summaries = Vec::new();
    for key in order {
        let mut points = groups.remove(&key).expect("group recorded");
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (experiment, metric) = key;
        let mut distinct = points.iter().map(|p| p.0 as u64).collect::<Vec<_>>();
        distinct.dedup();
        if distinct.len() < 2 {
            summaries.push(PlotSummary {
                experiment,
                metric,
                file: None,
                points: points.len(),
                log_log_slope: None,
                regressor_slope: None,
            });
            continue;
        }
        let log_log_slope = fit_log_log_slope(&points);
        let regressor_slope = if metric == "d_V mean" {
            fit_identification_slope(&points)
        } else {
            None
        };
        let mut annotations = Vec::new();
        if let Some(s) = log_log_slope {
            annotations.push(format!("log-log slope = {s:.4}"));
        }
        if let Some(s) = regressor_slope {
            annotations.push(format!("slope vs sqrt(log n / n) = {s:.4}"));
        }
        let svg = render(
            &format!("{experiment}: {metric}"),
            "block length n",
            &metric,
            &[Series { label: metric.clone(), points: points.clone() }],
            &annotations,
        );
        let file = format!("{}_{}.svg", slug(&experiment), slug(&metric));
        let path = dir.join(&file);
        std::fs::write(&path, svg).map_err(|e| {
            ConfigError::new("plots", format!("cannot write `{}`: {e}", path.display()))
        })?;
        summaries.push(PlotSummary {
            experiment,
            metric,
            file: Some(file),
            points: points.len(),
            log_log_slope,
            regressor_slope,
        });
    }
    Ok(summaries)
}
