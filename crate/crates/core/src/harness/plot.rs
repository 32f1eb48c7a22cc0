//! SVG learning curves and benchmark bar charts.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::metrics::{read_metrics, MetricsRow};

const SIZE: (u32, u32) = (720, 440);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

pub type Series = (String, Vec<(f64, f64)>);

fn axis_range(vals: impl Iterator<Item = f64>, floor: (f64, f64)) -> (f64, f64) {
    let (mut lo, mut hi) = floor;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    (lo, hi)
}

/// Line chart with one polyline per series. Empty input yields bare axes.
pub fn line_chart_svg(title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<String> {
    let (x0, x1) = axis_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)), (0.0, 0.0));
    let (y0, y1) = axis_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)), (0.0, 1.0));
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(44)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(x_desc)
            .y_desc(y_desc)
            .x_label_formatter(&|v| format_tick(*v))
            .draw()
            .map_err(plot_err)?;
        for (i, (label, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .position(SeriesLabelPosition::UpperLeft)
                .draw()
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(out)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e9 {
        format!("{:.1}G", v / 1e9)
    } else if a >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.0}k", v / 1e3)
    } else {
        format!("{v:.1}")
    }
}

/// Grouped bars: one group per category, one bar per series entry.
pub fn bar_chart_svg(title: &str, y_desc: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> Result<String> {
    let n_cat = categories.len().max(1);
    let n_ser = series.len().max(1);
    let (_, y1) = axis_range(series.iter().flat_map(|s| s.1.iter().copied()), (0.0, 0.0));
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(44)
            .y_label_area_size(64)
            .build_cartesian_2d(0f64..n_cat as f64, 0f64..y1 * 1.1)
            .map_err(plot_err)?;
        let cats = categories.to_vec();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n_cat * 2 + 1)
            .x_label_formatter(&move |v| {
                let k = v.floor() as usize;
                if (v - k as f64 - 0.5).abs() < 0.26 {
                    cats.get(k).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(y_desc)
            .y_label_formatter(&|v| format_tick(*v))
            .draw()
            .map_err(plot_err)?;
        let width = 0.8 / n_ser as f64;
        for (s, (label, vals)) in series.iter().enumerate() {
            let color = PALETTE[s % PALETTE.len()];
            let bars = vals.iter().enumerate().map(move |(c, v)| {
                let x0 = c as f64 + 0.1 + s as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width * 0.95, *v)], color.filled())
            });
            chart
                .draw_series(bars)
                .map_err(plot_err)?
                .label(label.as_str())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .position(SeriesLabelPosition::UpperLeft)
                .draw()
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(out)
}

/// Success-rate curves against interactions and against wall time.
pub fn success_curves(runs: &[(String, Vec<MetricsRow>)]) -> Result<(String, String)> {
    let mut by_steps = Vec::new();
    let mut by_time = Vec::new();
    for (label, rows) in runs {
        let mut rows = rows.clone();
        rows.sort_by_key(|r| r.env_interactions);
        by_steps.push((label.clone(), rows.iter().map(|r| (r.env_interactions as f64, r.success_rate)).collect()));
        rows.sort_by(|a, b| a.wall_seconds.total_cmp(&b.wall_seconds));
        by_time.push((label.clone(), rows.iter().map(|r| (r.wall_seconds / 60.0, r.success_rate)).collect()));
    }
    Ok((
        line_chart_svg("Success rate", "environment interactions", "success rate", &by_steps)?,
        line_chart_svg("Success rate", "training time [min]", "success rate", &by_time)?,
    ))
}

/// Reads one or more metrics CSVs and writes
/// `success_vs_interactions.svg` and `success_vs_time.svg` into `out_dir`.
pub fn emit_plots(csvs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::with_capacity(csvs.len());
    for p in csvs {
        let label = p
            .parent()
            .and_then(|d| d.file_name())
            .or_else(|| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        runs.push((label, read_metrics(p)?));
    }
    let (a, b) = success_curves(&runs)?;
    std::fs::create_dir_all(out_dir)?;
    let pa = out_dir.join("success_vs_interactions.svg");
    let pb = out_dir.join("success_vs_time.svg");
    std::fs::write(&pa, a)?;
    std::fs::write(&pb, b)?;
    Ok(vec![pa, pb])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, n: u64, t: f64, s: f64) -> MetricsRow {
        MetricsRow {
            iteration: i,
            env_interactions: n,
            wall_seconds: t,
            fps: 0.0,
            mean_return: 0.0,
            success_rate: s,
        }
    }

    /// x coordinates of every data polyline (legend swatches have 2 points).
    fn data_lines(svg: &str) -> Vec<Vec<f64>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline") && l.contains("stroke-width=\"2\""))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                pts.split_whitespace()
                    .map(|p| p.split(',').next().unwrap().parse().unwrap())
                    .collect::<Vec<f64>>()
            })
            .filter(|xs| xs.len() > 2)
            .collect()
    }

    #[test]
    fn empty_metrics_give_axes() {
        let svg = line_chart_svg("t", "x", "y", &[]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(data_lines(&svg).is_empty());
    }

    #[test]
    fn two_runs_overlay() {
        let runs = vec![
            ("a".to_string(), vec![row(1, 10, 1.0, 0.1), row(2, 20, 2.0, 0.2), row(3, 30, 3.0, 0.2)]),
            ("b".to_string(), vec![row(1, 15, 1.0, 0.3), row(2, 30, 2.0, 0.4), row(3, 45, 3.0, 0.5)]),
        ];
        let (svg, svg_t) = success_curves(&runs).unwrap();
        assert_eq!(data_lines(&svg).len(), 2);
        assert_eq!(data_lines(&svg_t).len(), 2);
    }

    #[test]
    fn rows_sorted_by_interactions() {
        let runs = vec![("a".to_string(), vec![row(2, 30, 2.0, 0.5), row(1, 10, 1.0, 0.1), row(3, 20, 3.0, 0.2)])];
        let (svg, _) = success_curves(&runs).unwrap();
        let lines = data_lines(&svg);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 3);
        assert!(lines[0].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn emit_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("run1").join("metrics.csv");
        std::fs::create_dir_all(csv.parent().unwrap()).unwrap();
        std::fs::write(&csv, "iteration,env_interactions,wall_seconds,fps,mean_return,success_rate\n").unwrap();
        let out = emit_plots(&[csv], &dir.path().join("plots")).unwrap();
        assert!(out.iter().all(|p| p.exists()));
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "nope\n1\n").unwrap();
        assert!(emit_plots(&[bad], dir.path()).is_err());
    }
}
