//! Dependency-free SVG charts read back from a run directory.
//!
//! Every data series is a `<polyline class="series">` or `<rect class="bar">`
//! carrying its raw values in `data-*` attributes, so tests and scripts can
//! check a chart without rasterising it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiment::{HISTORY, LAYER_USAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Test accuracy on every task against epoch.
    Curves,
    /// Remaining weight ratio against epoch.
    KeepRatio,
    /// Used fraction per maskable layer after each dataset.
    LayerUsage,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "curves" => Ok(PlotKind::Curves),
            "keep_ratio" => Ok(PlotKind::KeepRatio),
            "layer_usage" => Ok(PlotKind::LayerUsage),
            other => Err(Error::Config(format!("what: unknown plot `{other}`; expected curves, keep_ratio or layer_usage"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HistoryRow {
    pub dataset_idx: usize,
    pub epoch: usize,
    pub task_idx: usize,
    pub test_accuracy: f64,
    pub remaining_ratio: f64,
    pub train_loss: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct UsageRow {
    pub dataset_idx: usize,
    pub layer: usize,
    pub used: usize,
    pub total: usize,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    })?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(path.display().to_string(), e.to_string())))
        .collect()
}

pub fn read_history(dir: &Path) -> Result<Vec<HistoryRow>> {
    let rows: Vec<HistoryRow> = read_csv(&dir.join(HISTORY))?;
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: history is empty", dir.join(HISTORY).display())));
    }
    Ok(rows)
}

pub fn read_layer_usage(dir: &Path) -> Result<Vec<UsageRow>> {
    read_csv(&dir.join(LAYER_USAGE))
}

/// Last epoch of every dataset but the final one.
pub fn dataset_boundaries(rows: &[HistoryRow]) -> Vec<usize> {
    let datasets = rows.iter().map(|r| r.dataset_idx).max().map_or(0, |d| d + 1);
    (0..datasets.saturating_sub(1))
        .filter_map(|d| rows.iter().filter(|r| r.dataset_idx == d).map(|r| r.epoch).max())
        .collect()
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x.1 - self.x.0).max(f64::EPSILON);
        LEFT + (x - self.x.0) / span * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y.1 - self.y.0).max(f64::EPSILON);
        H - BOTTOM - (y - self.y.0) / span * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text transform=\"translate(16,{}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
        (LEFT + W - RIGHT) / 2.0,
        escape(title),
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label),
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label),
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[f64], y_ticks: &[f64]) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, "<g class=\"axes\" stroke=\"black\"><line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\"/><line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\"/></g>");
    for &t in x_ticks {
        let x = f.px(t);
        let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", y0 + 16.0, fmt_tick(t));
    }
    for &t in y_ticks {
        let y = f.py(t);
        let _ = writeln!(
            out,
            "<line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{x1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn legend(out: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 14.0;
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"3\"/><text x=\"{}\" y=\"{}\">{}</text>",
            x + 18.0,
            PALETTE[i % PALETTE.len()],
            x + 24.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn epoch_ticks(max_epoch: usize) -> Vec<f64> {
    let step = (max_epoch / 10).max(1);
    (0..=max_epoch).step_by(step).map(|e| e as f64).collect()
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn line_chart(title: &str, y_label: &str, y_range: (f64, f64), y_ticks: &[f64], series: &[Series], boundaries: &[usize]) -> String {
    let max_epoch = series.iter().flat_map(|s| s.points.iter().map(|p| p.0 as usize)).max().unwrap_or(1);
    let f = Frame { x: (0.0, max_epoch as f64), y: y_range };
    let mut out = String::new();
    open(&mut out, title, "epoch", y_label);
    axes(&mut out, &f, &epoch_ticks(max_epoch), y_ticks);
    for &b in boundaries {
        let x = f.px(b as f64);
        let _ = writeln!(
            out,
            "<line class=\"boundary\" data-epoch=\"{b}\" x1=\"{x:.1}\" y1=\"{TOP}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
            H - BOTTOM
        );
    }
    for (i, s) in series.iter().enumerate() {
        let points: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let values: Vec<String> = s.points.iter().map(|&(_, y)| format!("{y}")).collect();
        let _ = writeln!(
            out,
            "<polyline class=\"series\" data-name=\"{}\" data-values=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
            escape(&s.name),
            values.join(" "),
            PALETTE[i % PALETTE.len()],
            points.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One polyline per task.
pub fn curves_svg(rows: &[HistoryRow]) -> String {
    let tasks = rows.iter().map(|r| r.task_idx).max().map_or(0, |t| t + 1);
    let series: Vec<Series> = (0..tasks)
        .map(|t| Series {
            name: format!("task {t}"),
            points: rows.iter().filter(|r| r.task_idx == t).map(|r| (r.epoch as f64, r.test_accuracy)).collect(),
        })
        .collect();
    let method = rows.first().map_or("", |r| r.method.as_str());
    let ticks: Vec<f64> = (0..=5).map(|k| 20.0 * k as f64).collect();
    line_chart(&format!("{method}: test accuracy"), "accuracy (%)", (0.0, 100.0), &ticks, &series, &dataset_boundaries(rows))
}

/// One polyline of the remaining ratio.
pub fn keep_ratio_svg(rows: &[HistoryRow]) -> String {
    let points = rows.iter().filter(|r| r.task_idx == 0).map(|r| (r.epoch as f64, r.remaining_ratio)).collect();
    let method = rows.first().map_or("", |r| r.method.as_str());
    let ticks: Vec<f64> = (0..=5).map(|k| 0.2 * k as f64).collect();
    let series = [Series { name: "keep ratio".into(), points }];
    line_chart(&format!("{method}: keep ratio"), "remaining ratio", (0.0, 1.0), &ticks, &series, &dataset_boundaries(rows))
}

/// Grouped bars: one group per layer, one bar per dataset.
pub fn layer_usage_svg(rows: &[UsageRow]) -> String {
    let mut layers: Vec<usize> = rows.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let datasets = rows.iter().map(|r| r.dataset_idx).max().map_or(0, |d| d + 1);
    let f = Frame { x: (0.0, layers.len().max(1) as f64), y: (0.0, 1.0) };
    let mut out = String::new();
    open(&mut out, "used ratio per layer", "layer", "used fraction");
    let ticks: Vec<f64> = (0..=5).map(|k| 0.2 * k as f64).collect();
    axes(&mut out, &f, &[], &ticks);
    let group = f.px(1.0) - f.px(0.0);
    let bar = group * 0.8 / datasets.max(1) as f64;
    for (g, &layer) in layers.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">layer {layer}</text>",
            f.px(g as f64 + 0.5),
            H - BOTTOM + 16.0
        );
        for r in rows.iter().filter(|r| r.layer == layer) {
            let frac = if r.total == 0 { 0.0 } else { r.used as f64 / r.total as f64 };
            let x = f.px(g as f64) + group * 0.1 + bar * r.dataset_idx as f64;
            let y = f.py(frac);
            let _ = writeln!(
                out,
                "<rect class=\"bar\" data-dataset=\"{}\" data-layer=\"{layer}\" data-value=\"{frac}\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                r.dataset_idx,
                bar * 0.9,
                f.py(0.0) - y,
                PALETTE[r.dataset_idx % PALETTE.len()]
            );
        }
    }
    legend(&mut out, &(0..datasets).map(|d| format!("after dataset {d}")).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Renders `kind` from the run directory `dir`.
pub fn render(dir: &Path, kind: PlotKind) -> Result<String> {
    Ok(match kind {
        PlotKind::Curves => curves_svg(&read_history(dir)?),
        PlotKind::KeepRatio => keep_ratio_svg(&read_history(dir)?),
        PlotKind::LayerUsage => layer_usage_svg(&read_layer_usage(dir)?),
    })
}

pub fn render_to(dir: &Path, kind: PlotKind, out: &Path) -> Result<()> {
    let svg = render(dir, kind)?;
    fs::write(out, svg).map_err(|e| Error::io(out, e))
}
