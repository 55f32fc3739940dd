//! SVG line charts of result rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use robust_irl::world::Domain;

use crate::config::Method;
use crate::error::{HarnessError, Result};
use crate::runner::{ResultRow, Study};
use crate::stats::{summarize, GroupSummary};

const SIZE: (u32, u32) = (720, 480);

fn color(method: Method) -> RGBColor {
    match method {
        Method::RobustIRL => RGBColor(31, 119, 180),
        Method::RobustIRLSoundOnly => RGBColor(44, 160, 44),
        Method::RobustIRLVisionOnly => RGBColor(148, 103, 189),
        Method::MLT => RGBColor(214, 39, 40),
        Method::RandomAttack => RGBColor(127, 127, 127),
    }
}

struct Chart<'a> {
    title: String,
    x_desc: &'a str,
    y_desc: &'a str,
    series: BTreeMap<Method, Vec<(f64, f64)>>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn draw(chart: &Chart<'_>, path: &Path) -> Result<()> {
    let points: Vec<(f64, f64)> = chart.series.values().flatten().copied().collect();
    let (x0, x1) = padded(
        points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(0.0),
        points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut ctx = ChartBuilder::on(&root)
        .caption(&chart.title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    ctx.configure_mesh()
        .x_desc(chart.x_desc)
        .y_desc(chart.y_desc)
        .draw()
        .map_err(plot_err)?;
    for (&method, pts) in &chart.series {
        let c = color(method);
        ctx.draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))
            .map_err(plot_err)?
            .label(method.name())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], c.stroke_width(2)));
        ctx.draw_series(pts.iter().map(|&p| Circle::new(p, 3, c.filled())))
            .map_err(plot_err)?;
    }
    ctx.configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn series(groups: &[GroupSummary], y: impl Fn(&GroupSummary) -> Option<f64>) -> BTreeMap<Method, Vec<(f64, f64)>> {
    let mut out: BTreeMap<Method, Vec<(f64, f64)>> = BTreeMap::new();
    for g in groups {
        if let Some(v) = y(g) {
            out.entry(g.method).or_default().push((g.x, v));
        }
    }
    out
}

/// Writes the charts for `rows` into `dir` and returns their paths: ILE
/// against `σ` for sweeps, success rate per method for attack runs, and
/// ILE and wall time against the threshold for convergence studies, one
/// file per study and domain.
pub fn emit_plots(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(HarnessError::Empty("plot"));
    }
    std::fs::create_dir_all(dir)?;
    let mut by_file: BTreeMap<(Study, Domain), Vec<ResultRow>> = BTreeMap::new();
    for r in rows {
        by_file.entry((r.study, r.domain)).or_default().push(r.clone());
    }
    let mut written = Vec::new();
    for ((study, domain), rs) in by_file {
        let groups = summarize(&rs);
        let mut charts = Vec::new();
        match study {
            Study::Sweep => charts.push((
                format!("sweep_{domain}.svg"),
                Chart {
                    title: format!("ILE vs noise ({domain})"),
                    x_desc: "intensity noise σ",
                    y_desc: "mean ILE",
                    series: series(&groups, |g| g.mean_ile),
                },
            )),
            Study::Attack => charts.push((
                format!("attack_{domain}.svg"),
                Chart {
                    title: format!("Penetration success ({domain})"),
                    x_desc: "intensity noise σ",
                    y_desc: "success rate",
                    series: series(&groups, |g| g.success_rate),
                },
            )),
            Study::Convergence => {
                charts.push((
                    format!("convergence_{domain}.svg"),
                    Chart {
                        title: format!("ILE vs Gibbs threshold ({domain})"),
                        x_desc: "E-step convergence threshold",
                        y_desc: "mean ILE",
                        series: series(&groups, |g| g.mean_ile),
                    },
                ));
                charts.push((
                    format!("convergence_time_{domain}.svg"),
                    Chart {
                        title: format!("Wall time vs Gibbs threshold ({domain})"),
                        x_desc: "E-step convergence threshold",
                        y_desc: "mean wall time, s",
                        series: series(&groups, |g| Some(g.mean_wall_time)),
                    },
                ));
            }
        }
        for (name, chart) in charts {
            if chart.series.is_empty() {
                continue;
            }
            let path = dir.join(name);
            draw(&chart, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
