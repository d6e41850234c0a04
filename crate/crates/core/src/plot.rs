//! Minimal SVG line charts.
//!
//! Hand-rolled emission keeps the figures dependency-free and structurally
//! predictable: exactly one `<path>` element per data series (axes and ticks
//! are `<line>`s, confidence bands are `<polygon>`s), deterministic colors
//! and ordering.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::finetune::CurvePoint;
use crate::intervene::{HypothesisKind, TargetKind};
use crate::report::{AggregateRow, MetricKind};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 52.0;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    /// (step, value) points, sorted by step.
    pub points: Vec<(f64, f64)>,
    /// Optional (step, lower, upper) confidence band.
    pub band: Option<Vec<(f64, f64, f64)>>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-style x transform that tolerates step 0.
fn x_transform(step: f64) -> f64 {
    (step + 1.0).log10()
}

/// Render a chart with a log-scaled step axis.
pub fn line_chart(title: &str, y_label: &str, series: &[Series], path: &Path) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument(format!("chart `{title}` has no data")));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x_transform(x));
            ys.push(y);
        }
        if let Some(band) = &s.band {
            for &(_, lo, hi) in band {
                ys.push(lo);
                ys.push(hi);
            }
        }
    }
    let (x_min, x_max) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let (y_min, y_max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let x_span = (x_max - x_min).max(1e-9);
    let y_pad = ((y_max - y_min) * 0.08).max(1e-9);
    let (y_lo, y_hi) = (y_min - y_pad, y_max + y_pad);
    let y_span = y_hi - y_lo;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x_transform(x) - x_min) / x_span * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - (y - y_lo) / y_span) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // axes
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));

    // x ticks at each distinct step of the first series (thinned)
    let mut steps: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, _)| x))
        .collect();
    steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    steps.dedup();
    let stride = (steps.len() / 7).max(1);
    for (i, &step) in steps.iter().enumerate() {
        if i % stride != 0 && i != steps.len() - 1 {
            continue;
        }
        let x = px(step);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            step as u64
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">pre-training step (log scale)</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0
    ));

    // y ticks: 5 evenly spaced
    for i in 0..=4 {
        let v = y_lo + y_span * i as f64 / 4.0;
        let y = py(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.3}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));

    // confidence bands first so lines draw over them
    for s in series {
        if let Some(band) = &s.band {
            if band.is_empty() {
                continue;
            }
            let mut pts = String::new();
            for &(x, lo, _) in band {
                pts.push_str(&format!("{:.2},{:.2} ", px(x), py(lo)));
            }
            for &(x, _, hi) in band.iter().rev() {
                pts.push_str(&format!("{:.2},{:.2} ", px(x), py(hi)));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n",
                pts.trim_end(),
                s.color
            ));
        }
    }

    // one path per series
    for s in series {
        let mut d = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            d.push_str(&format!("{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, px(x), py(y)));
        }
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            d.trim_end(),
            s.color
        ));
    }

    // legend
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n",
            x1 - 110.0,
            y - 4.0,
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            x1 - 100.0,
            y,
            escape(&s.name)
        ));
    }

    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

const CORRECT_COLOR: &str = "#2066a8";
const CONTROL_COLOR: &str = "#c23b23";

/// One chart per (hypothesis, metric) with correct/control series and
/// shaded intervals, plus a fine-tune accuracy chart when a curve is given.
/// Returns the emitted file paths.
pub fn emit_plots(
    aggregates: &[AggregateRow],
    finetune_curve: Option<&[CurvePoint]>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if aggregates.is_empty() && finetune_curve.is_none() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut emitted = Vec::new();

    let hypotheses =
        [HypothesisKind::Super, HypothesisKind::Sub, HypothesisKind::Relation];
    for hypothesis in hypotheses {
        for metric in MetricKind::ALL {
            let select = |target: TargetKind| -> Vec<&AggregateRow> {
                let mut rows: Vec<&AggregateRow> = aggregates
                    .iter()
                    .filter(|r| {
                        r.hypothesis == hypothesis && r.metric == metric && r.target == target
                    })
                    .collect();
                rows.sort_by_key(|r| r.checkpoint_step);
                rows
            };
            let correct = select(TargetKind::Correct);
            let control = select(TargetKind::Control);
            if correct.is_empty() && control.is_empty() {
                continue;
            }
            let to_series = |rows: &[&AggregateRow], name: &str, color: &'static str| Series {
                name: name.to_string(),
                color,
                points: rows.iter().map(|r| (r.checkpoint_step as f64, r.mean)).collect(),
                band: Some(
                    rows.iter()
                        .map(|r| (r.checkpoint_step as f64, r.lower, r.upper))
                        .collect(),
                ),
            };
            let series = vec![
                to_series(&correct, "correct", CORRECT_COLOR),
                to_series(&control, "control", CONTROL_COLOR),
            ];
            let file = out_dir.join(format!("{}_{}.svg", hypothesis.as_str(), metric.as_str()));
            line_chart(
                &format!("{} hypothesis: {}", hypothesis.as_str(), metric.as_str()),
                metric.as_str(),
                &series,
                &file,
            )?;
            emitted.push(file);
        }
    }

    if let Some(curve) = finetune_curve {
        if !curve.is_empty() {
            let series = vec![
                Series {
                    name: "implicit".into(),
                    color: CORRECT_COLOR,
                    points: curve.iter().map(|p| (p.step as f64, p.implicit_accuracy)).collect(),
                    band: None,
                },
                Series {
                    name: "explicit".into(),
                    color: "#3fa34d",
                    points: curve.iter().map(|p| (p.step as f64, p.explicit_accuracy)).collect(),
                    band: None,
                },
            ];
            let file = out_dir.join("finetune_accuracy.svg");
            line_chart("fine-tuned reasoning accuracy", "accuracy", &series, &file)?;
            emitted.push(file);
        }
    }

    Ok(emitted)
}

/// Structural well-formedness check used by tests and the acceptance suite:
/// tags balance and the number of `<path>` elements matches expectations.
pub fn check_svg_structure(path: &Path) -> Result<SvgStructure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    if !text.starts_with("<svg") {
        return Err(Error::InvalidArgument("not an svg document".into()));
    }
    let mut stack: Vec<String> = Vec::new();
    let mut paths = 0usize;
    let mut polygons = 0usize;
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let end = text[i..].find('>').map(|j| i + j).ok_or_else(|| {
            Error::InvalidArgument("unterminated tag".into())
        })?;
        let tag = &text[i + 1..end];
        if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().ok_or_else(|| {
                Error::InvalidArgument(format!("closing </{name}> without opener"))
            })?;
            if open != name {
                return Err(Error::InvalidArgument(format!(
                    "mismatched tags <{open}> vs </{name}>"
                )));
            }
        } else {
            let name: String =
                tag.split([' ', '\t', '\n']).next().unwrap_or("").to_string();
            if name == "path" {
                paths += 1;
            }
            if name == "polygon" {
                polygons += 1;
            }
            if !tag.ends_with('/') {
                stack.push(name);
            }
        }
        i = end + 1;
    }
    if !stack.is_empty() {
        return Err(Error::InvalidArgument(format!("unclosed tags: {stack:?}")));
    }
    Ok(SvgStructure { paths, polygons })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvgStructure {
    pub paths: usize,
    pub polygons: usize,
}
