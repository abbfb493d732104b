//! CSV tables, SVG line plots and image montages.

use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use crate::error::{io_err, IkcError, Result};
use crate::image::Image;
use crate::scalar::Scalar;

use super::bench::{BenchmarkReport, IterationRow, SensitivityGrid, WidthCurve};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IkcError + '_ {
    move |e| IkcError::Format { what: "csv output", detail: format!("{}: {e}", path.display()) }
}

/// Writes serialisable rows with a header line.
pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes a header plus raw string rows.
pub fn write_table(path: impl AsRef<Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct RecordRow<'a> {
    pipeline: &'a str,
    kernel: usize,
    sigma: f64,
    image: &'a str,
    psnr: f64,
    ssim: f64,
}

pub fn write_benchmark(dir: &Path, report: &BenchmarkReport) -> Result<()> {
    let name = report.pipeline.name();
    let rows: Vec<RecordRow> = report
        .records
        .iter()
        .map(|r| RecordRow {
            pipeline: name,
            kernel: r.kernel,
            sigma: r.sigma,
            image: &r.image,
            psnr: r.psnr,
            ssim: r.ssim,
        })
        .collect();
    write_csv(dir.join(format!("gaussian8_{name}_images.csv")), &rows)?;
    write_csv(dir.join(format!("gaussian8_{name}_kernels.csv")), &report.per_kernel)?;
    let json = serde_json::to_vec_pretty(report).expect("reports serialise");
    let path = dir.join(format!("gaussian8_{name}.json"));
    std::fs::write(&path, json).map_err(io_err(&path))
}

fn matrix_rows(grid: &SensitivityGrid, values: &[Vec<f64>]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["sigma_lr".to_string()];
    header.extend(grid.sigma_sr.iter().map(|s| format!("sr_{s}")));
    let rows = grid
        .sigma_lr
        .iter()
        .zip(values)
        .map(|(s, row)| std::iter::once(s.to_string()).chain(row.iter().map(|v| v.to_string())).collect())
        .collect();
    (header, rows)
}

pub fn write_sensitivity(dir: &Path, grid: &SensitivityGrid) -> Result<()> {
    let (h, r) = matrix_rows(grid, &grid.psnr);
    write_table(dir.join("sensitivity_psnr.csv"), &h, &r)?;
    let (h, r) = matrix_rows(grid, &grid.sharpness);
    write_table(dir.join("sensitivity_sharpness.csv"), &h, &r)?;
    if !grid.panels.is_empty() {
        montage(&grid.panels, 2)?.save_png(dir.join("sensitivity_montage.png"))?;
    }
    Ok(())
}

pub fn write_iterations(dir: &Path, rows: &[IterationRow]) -> Result<()> {
    write_csv(dir.join("iterations.csv"), rows)?;
    let psnr: Vec<(f64, f64)> = rows.iter().map(|r| (r.iteration as f64, r.mean_psnr)).collect();
    let ssim: Vec<(f64, f64)> = rows.iter().map(|r| (r.iteration as f64, r.mean_ssim)).collect();
    line_plot(dir.join("iterations_psnr.svg"), "PSNR vs. iteration", "iteration", "PSNR (dB)", &[("ikc", psnr)])?;
    line_plot(dir.join("iterations_ssim.svg"), "SSIM vs. iteration", "iteration", "SSIM", &[("ikc", ssim)])
}

pub fn write_width_curve(dir: &Path, curve: &WidthCurve) -> Result<()> {
    let mut header = vec!["width".to_string()];
    header.extend(curve.pipelines.iter().map(|p| p.name().to_string()));
    let rows: Vec<Vec<String>> = curve
        .widths
        .iter()
        .enumerate()
        .map(|(w, s)| std::iter::once(s.to_string()).chain(curve.psnr.iter().map(|p| p[w].to_string())).collect())
        .collect();
    write_table(dir.join("psnr_vs_width.csv"), &header, &rows)?;
    let series: Vec<(&str, Vec<(f64, f64)>)> = curve
        .pipelines
        .iter()
        .zip(&curve.psnr)
        .map(|(p, v)| (p.name(), curve.widths.iter().copied().zip(v.iter().copied()).collect()))
        .collect();
    line_plot(dir.join("psnr_vs_width.svg"), "PSNR vs. kernel width", "kernel width", "PSNR (dB)", &series)
}

fn plot_err(path: &Path) -> impl Fn(String) -> IkcError + '_ {
    move |detail| IkcError::Format { what: "plot", detail: format!("{}: {detail}", path.display()) }
}

fn padded_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad)..(hi + pad)
}

/// SVG line chart with one series per `(label, points)`.
pub fn line_plot(
    path: impl AsRef<Path>,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<()> {
    let path = path.as_ref();
    let err = plot_err(path);
    let xs = padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let ys = padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(xs, ys)
        .map_err(|e| err(e.to_string()))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| err(e.to_string()))?;
    for (i, (label, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?
            .label(*label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

/// Tiles a grid of equally sized images with `gap` white pixels between cells.
pub fn montage<T: Scalar>(cells: &[Vec<Image<T>>], gap: usize) -> Result<Image<T>> {
    let first = cells.first().and_then(|r| r.first()).ok_or_else(|| IkcError::NoData("empty montage".into()))?;
    let (c, h, w) = first.dims();
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let rows = cells.len();
    let out_h = rows * h + (rows - 1) * gap;
    let out_w = cols * w + (cols - 1) * gap;
    let mut out = Image::filled(c, out_h, out_w, T::one());
    for (i, row) in cells.iter().enumerate() {
        for (j, img) in row.iter().enumerate() {
            if img.dims() != (c, h, w) {
                return Err(crate::error::invalid("montage cells must share one size"));
            }
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.set(ch, i * (h + gap) + y, j * (w + gap) + x, img.get(ch, y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}
