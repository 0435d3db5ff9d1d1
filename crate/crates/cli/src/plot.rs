//! Static SVG charts for `--plot`. The CSV files carry the data; these are
//! for looking at.

use std::path::Path;

use mrtrader::analysis::SensitivityGrid;
use plotters::prelude::*;

use crate::CliError;

const SIZE: (u32, u32) = (800, 560);

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn plot_error(e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("plot: {e}"))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1.0)
    };
    (lo - pad, hi + pad)
}

pub fn lines(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let xs = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(70)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_error)?;
    for (k, s) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        // break the line at missing values
        for segment in s.points.split(|p| !p.1.is_finite()).filter(|seg| !seg.is_empty()) {
            chart
                .draw_series(LineSeries::new(segment.iter().copied(), color.stroke_width(2)))
                .map_err(plot_error)?;
        }
        chart
            .draw_series(std::iter::once(PathElement::new(vec![], color)))
            .map_err(plot_error)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}

/// One line per column of the grid, plotted against the first axis.
pub fn grid_columns(path: &Path, title: &str, grid: &SensitivityGrid) -> Result<(), CliError> {
    let series: Vec<Series> = (0..grid.axis2.len())
        .map(|j| Series {
            label: format!("{} = {}", grid.axis2.label, grid.axis2.values[j]),
            points: grid.axis1.values.iter().copied().zip(grid.column(j)).collect(),
        })
        .collect();
    lines(path, title, &grid.axis1.label, &grid.quantity, &series)
}

/// One line per row of the grid, plotted against the second axis.
pub fn grid_rows(path: &Path, title: &str, grid: &SensitivityGrid) -> Result<(), CliError> {
    let series: Vec<Series> = (0..grid.axis1.len())
        .map(|i| Series {
            label: format!("{} = {}", grid.axis1.label, grid.axis1.values[i]),
            points: grid.axis2.values.iter().copied().zip(grid.row(i)).collect(),
        })
        .collect();
    lines(path, title, &grid.axis2.label, &grid.quantity, &series)
}

fn shade(t: f64) -> RGBColor {
    // dark blue to yellow
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(lerp(30.0, 250.0), lerp(40.0, 220.0), lerp(120.0, 40.0))
}

/// Cells coloured by value over the index lattice; missing cells are grey.
pub fn heatmap(path: &Path, title: &str, grid: &SensitivityGrid) -> Result<(), CliError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let (n1, n2) = grid.shape();
    let (lo, hi) = range((0..n1).flat_map(|i| grid.row(i)));
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title} (range {lo:.4e} to {hi:.4e})"), ("sans-serif", 20))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n1 as f64, 0.0..n2 as f64)
        .map_err(plot_error)?;
    let a1 = grid.axis1.values.clone();
    let a2 = grid.axis2.values.clone();
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc(grid.axis1.label.as_str())
        .y_desc(grid.axis2.label.as_str())
        .x_labels(n1.min(12))
        .y_labels(n2.min(12))
        .x_label_formatter(&|x| a1.get(x.floor() as usize).map(|v| format!("{v}")).unwrap_or_default())
        .y_label_formatter(&|y| a2.get(y.floor() as usize).map(|v| format!("{v}")).unwrap_or_default())
        .draw()
        .map_err(plot_error)?;
    let cells = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).map(|(i, j)| {
        let v = grid.get(i, j);
        let color = if v.is_finite() {
            shade((v - lo) / (hi - lo))
        } else {
            RGBColor(200, 200, 200)
        };
        Rectangle::new([(i as f64, j as f64), (i as f64 + 1.0, j as f64 + 1.0)], color.filled())
    });
    chart.draw_series(cells).map_err(plot_error)?;
    root.present().map_err(plot_error)
}
