//! Static SVG figures.

use std::path::Path;

use plotters::prelude::*;

use crate::benchmark::BenchmarkRow;
use crate::dataset::ChannelHistogram;
use crate::error::{Error, Result};
use crate::train::EpochMetrics;

const SIZE: (u32, u32) = (800, 500);

fn plot_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Resource(format!("cannot render {}: {e}", path.display()))
}

fn channel_color(i: usize) -> RGBColor {
    [RED, GREEN, BLUE][i % 3]
}

/// Pixel-intensity distribution of each channel.
pub fn plot_histograms(hists: &[ChannelHistogram], path: &Path) -> Result<()> {
    let err = plot_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let max = hists
        .iter()
        .flat_map(|h| h.bins.iter())
        .copied()
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("RGB intensity distribution", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..255f64, 0f64..max * 1.05)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("intensity")
        .y_desc("pixel count")
        .draw()
        .map_err(&err)?;
    for (i, h) in hists.iter().enumerate() {
        let color = channel_color(i);
        chart
            .draw_series(LineSeries::new(
                h.bins.iter().enumerate().map(|(b, &c)| (b as f64, c as f64)),
                &color,
            ))
            .map_err(&err)?
            .label(h.channel.to_string())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// Train and validation curves of one metric against epoch number.
fn plot_curves(
    title: &str,
    y_desc: &str,
    series: [(&str, Vec<(f64, f64)>); 2],
    path: &Path,
) -> Result<()> {
    let err = plot_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let last = series[0].1.last().map(|p| p.0).unwrap_or(1.0).max(2.0);
    let (lo, hi) = series
        .iter()
        .flat_map(|(_, s)| s.iter().map(|p| p.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let pad = ((hi - lo) * 0.1).max(1e-3);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(1f64..last, (lo - pad)..(hi + pad))
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_desc)
        .draw()
        .map_err(&err)?;
    for (i, (name, points)) in series.into_iter().enumerate() {
        let color = [BLUE, RED][i];
        chart
            .draw_series(LineSeries::new(points.clone(), &color))
            .map_err(&err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(&err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

pub fn plot_accuracy_curve(variant: &str, epochs: &[EpochMetrics], path: &Path) -> Result<()> {
    plot_curves(
        &format!("{variant} accuracy"),
        "accuracy",
        [
            ("train", epochs.iter().map(|m| (m.epoch as f64, m.train_acc)).collect()),
            ("validation", epochs.iter().map(|m| (m.epoch as f64, m.val_acc)).collect()),
        ],
        path,
    )
}

pub fn plot_loss_curve(variant: &str, epochs: &[EpochMetrics], path: &Path) -> Result<()> {
    plot_curves(
        &format!("{variant} loss"),
        "cross-entropy loss",
        [
            ("train", epochs.iter().map(|m| (m.epoch as f64, m.train_loss)).collect()),
            ("validation", epochs.iter().map(|m| (m.epoch as f64, m.val_loss)).collect()),
        ],
        path,
    )
}

/// Two panels: accuracy bars on top, elapsed-time bars below.
pub fn plot_benchmark_bars(rows: &[BenchmarkRow], path: &Path) -> Result<()> {
    let err = plot_err(path);
    let root = SVGBackend::new(path, (900, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let (top, bottom) = root.split_vertically(350);
    let n = rows.len().max(1);
    let labels: Vec<String> = rows.iter().map(|r| r.variant.clone()).collect();
    let max_t = rows.iter().map(|r| r.elapsed_seconds).fold(0.0, f64::max).max(1e-6);
    let panels = [
        (&top, "Accuracy", 1.0, BLUE, 0usize),
        (&bottom, "Elapsed time (s)", max_t * 1.1, RED, 1usize),
    ];
    for (area, title, ymax, color, which) in panels {
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(60)
            .y_label_area_size(60)
            .build_cartesian_2d(0f64..n as f64, 0f64..ymax)
            .map_err(&err)?;
        let labels = labels.clone();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n)
            .x_label_formatter(&move |x| {
                labels
                    .get(x.floor() as usize)
                    .cloned()
                    .unwrap_or_default()
            })
            .x_label_offset(30)
            .draw()
            .map_err(&err)?;
        chart
            .draw_series(rows.iter().enumerate().map(|(i, r)| {
                let y = if which == 0 { r.accuracy } else { r.elapsed_seconds };
                Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, y)], color.filled())
            }))
            .map_err(&err)?;
    }
    root.present().map_err(&err)
}

/// Accuracy against elapsed seconds, Pareto-optimal rows highlighted.
pub fn plot_accuracy_vs_time(rows: &[BenchmarkRow], path: &Path) -> Result<()> {
    let err = plot_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let ok: Vec<&BenchmarkRow> = rows.iter().filter(|r| !r.failed).collect();
    let max_t = ok.iter().map(|r| r.elapsed_seconds).fold(0.0, f64::max).max(1e-6);
    let mut chart = ChartBuilder::on(&root)
        .caption("Accuracy vs elapsed time", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..max_t * 1.25, 0f64..1.05f64)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("elapsed seconds")
        .y_desc("accuracy")
        .draw()
        .map_err(&err)?;
    chart
        .draw_series(ok.iter().map(|r| {
            let color = if r.pareto { RED } else { BLUE };
            EmptyElement::at((r.elapsed_seconds, r.accuracy))
                + Circle::new((0, 0), 5, color.filled())
                + Text::new(r.variant.clone(), (7, -7), ("sans-serif", 12))
        }))
        .map_err(&err)?;
    root.present().map_err(&err)
}
