//! Learning curves across seeds: per-iteration mean and 95% t-interval of
//! the mean episode reward, as CSV and SVG.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use attn_marl_core::{Error, Result};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{read_metrics, MetricsRow};
use crate::stats::t_interval;

pub const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// One curve from several seeds' metrics; every seed must report the same
/// iterations in the same order.
pub fn aggregate(runs: &[Vec<MetricsRow>]) -> Result<Vec<CurvePoint>> {
    let Some(first) = runs.first() else {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    };
    let grid: Vec<usize> = first.iter().map(|r| r.iteration).collect();
    for run in runs {
        let its: Vec<usize> = run.iter().map(|r| r.iteration).collect();
        if its != grid {
            let seed = run.first().map_or(0, |r| r.seed);
            return Err(Error::GridMismatch(format!(
                "seed {seed} reports {} iterations, expected the {} of seed {}",
                its.len(),
                grid.len(),
                first.first().map_or(0, |r| r.seed)
            )));
        }
    }
    grid.iter()
        .enumerate()
        .map(|(k, &iteration)| {
            let xs: Vec<f64> = runs.iter().map(|r| r[k].mean_episode_reward).collect();
            let ci = t_interval(&xs, CI_LEVEL)?;
            Ok(CurvePoint {
                iteration,
                mean: ci.mean,
                ci_low: ci.low,
                ci_high: ci.high,
                n: ci.n,
            })
        })
        .collect()
}

/// Metrics files matching `pattern`, grouped by the directory they sit in
/// (one directory per experiment).
pub fn load_groups(pattern: &str) -> Result<BTreeMap<String, Vec<Vec<MetricsRow>>>> {
    let paths = glob::glob(pattern).map_err(|e| Error::config("glob", e.to_string()))?;
    let mut groups: BTreeMap<String, Vec<(PathBuf, Vec<MetricsRow>)>> = BTreeMap::new();
    for p in paths {
        let p = p.map_err(|e| Error::Io(e.into()))?;
        let group = p
            .parent()
            .and_then(|d| d.file_name())
            .map_or_else(|| "metrics".to_string(), |n| n.to_string_lossy().into_owned());
        let rows = read_metrics(&p)?;
        groups.entry(group).or_default().push((p, rows));
    }
    if groups.is_empty() {
        return Err(Error::config("glob", format!("no metrics files match `{pattern}`")));
    }
    Ok(groups
        .into_iter()
        .map(|(g, mut v)| {
            v.sort_by(|a, b| a.0.cmp(&b.0));
            (g, v.into_iter().map(|x| x.1).collect())
        })
        .collect())
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::config("curves", e.to_string()))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::config("curves", e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::config("plot", format!("{e:?}"))
}

pub fn plot_curves(curves: &BTreeMap<String, Vec<CurvePoint>>, title: &str, path: &Path) -> Result<()> {
    let pts = curves.values().flatten();
    let x_max = pts.clone().map(|p| p.iteration).max().unwrap_or(1).max(1) as f64;
    let (mut lo, mut hi) = pts
        .filter(|p| p.ci_low.is_finite() && p.ci_high.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.ci_low), h.max(p.ci_high)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);

    let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..x_max, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("mean episode reward")
        .draw()
        .map_err(plot_err)?;
    for (k, (name, points)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut band: Vec<(f64, f64)> = points.iter().map(|p| (p.iteration as f64, p.ci_high)).collect();
        band.extend(points.iter().rev().map(|p| (p.iteration as f64, p.ci_low)));
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(
                points.iter().map(|p| (p.iteration as f64, p.mean)),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes `curves_<group>.csv` and `curves_<group>.svg` per experiment
/// directory, plus `curves.svg` overlaying them all. Returns the files
/// written.
pub fn emit_curves(pattern: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let groups = load_groups(pattern)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut curves = BTreeMap::new();
    for (name, runs) in groups {
        let points = aggregate(&runs)?;
        let path = out.join(format!("curves_{name}.csv"));
        write_curve_csv(&points, &path)?;
        written.push(path);
        let one = BTreeMap::from([(name.clone(), points)]);
        let svg = out.join(format!("curves_{name}.svg"));
        plot_curves(&one, &format!("{name}: mean episode reward, 95% CI across seeds"), &svg)?;
        written.push(svg);
        curves.extend(one);
    }
    let svg = out.join("curves.svg");
    plot_curves(&curves, "mean episode reward, 95% CI across seeds", &svg)?;
    written.push(svg);
    Ok(written)
}
